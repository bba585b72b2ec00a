#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "CLI11.hpp"
#include "stateformer/bench.hpp"
#include "stateformer/cluster.hpp"
#include "stateformer/config.hpp"
#include "stateformer/engine.hpp"
#include "stateformer/sample.hpp"
#include "stateformer/train.hpp"
#include "stateformer/verify.hpp"

using namespace stf;

namespace {

// ---- shared plumbing ----

struct Common {
    std::string config_path;
    std::string outdir = ".";
};

void attach_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "TOML-style config file; flags win over it");
    cmd->add_option("--outdir", c.outdir, "directory for outputs and the effective config")
        ->capture_default_str();
}

ConfigFile load_file(const Common& c) {
    if (c.config_path.empty()) return ConfigFile{};
    return ConfigFile::load(c.config_path);
}

// default output paths land in outdir; explicit paths pass through
std::string place(const Common& c, const std::string& path, const char* fallback) {
    if (!path.empty()) return path;
    return (std::filesystem::path(c.outdir) / fallback).string();
}

void write_effective(const Common& c, const ConfigFile& eff) {
    std::filesystem::create_directories(c.outdir);
    eff.save((std::filesystem::path(c.outdir) / "effective_config.toml").string());
}

// fills the resolution gap between flag and default with the config file
struct Resolve {
    CLI::App* cmd;
    const ConfigFile* file;
    std::string sec;

    void i(const char* flag, const char* key, int64_t& v) const {
        if (!cmd->count(flag)) v = file->get_int(sec, key, v);
    }
    void u(const char* flag, const char* key, uint64_t& v) const {
        if (!cmd->count(flag)) v = uint64_t(file->get_int(sec, key, int64_t(v)));
    }
    void d(const char* flag, const char* key, double& v) const {
        if (!cmd->count(flag)) v = file->get_double(sec, key, v);
    }
    void b(const char* flag, const char* key, bool& v) const {
        if (!cmd->count(flag)) v = file->get_bool(sec, key, v);
    }
    void s(const char* flag, const char* key, std::string& v) const {
        if (!cmd->count(flag)) v = file->get_string(sec, key, v);
    }
    void list(const char* flag, const char* key, std::vector<int64_t>& v) const {
        if (!cmd->count(flag)) v = file->get_int_list(sec, key, v);
    }
};

// ---- model shape flags shared by the commands that build fresh weights ----

struct ModelFlags {
    int64_t layers = 2, d_model = 64, heads = 4, d_ff = 256;
    int64_t vocab_base = 50;  // the grammar word list
    int64_t patterns = 4, rank_la = 8, rank_gate = 4, t_max = 40;
    int64_t step_limit = 256, answer_limit = 64, context_limit = 16384;
    uint64_t seed = 1234;
};

void attach_model_flags(CLI::App* cmd, ModelFlags& m) {
    cmd->add_option("--layers", m.layers)->capture_default_str();
    cmd->add_option("--d-model", m.d_model)->capture_default_str();
    cmd->add_option("--heads", m.heads)->capture_default_str();
    cmd->add_option("--d-ff", m.d_ff)->capture_default_str();
    cmd->add_option("--vocab-base", m.vocab_base)->capture_default_str();
    cmd->add_option("--patterns", m.patterns)->capture_default_str();
    cmd->add_option("--rank-la", m.rank_la)->capture_default_str();
    cmd->add_option("--rank-gate", m.rank_gate)->capture_default_str();
    cmd->add_option("--t-max", m.t_max)->capture_default_str();
    cmd->add_option("--step-limit", m.step_limit)->capture_default_str();
    cmd->add_option("--answer-limit", m.answer_limit)->capture_default_str();
    cmd->add_option("--context-limit", m.context_limit)->capture_default_str();
    cmd->add_option("--model-seed", m.seed)->capture_default_str();
}

void resolve_model(const Resolve& base, ModelFlags& m) {
    Resolve r = base;
    r.sec = "model";
    r.i("--layers", "layers", m.layers);
    r.i("--d-model", "d_model", m.d_model);
    r.i("--heads", "heads", m.heads);
    r.i("--d-ff", "d_ff", m.d_ff);
    r.i("--vocab-base", "vocab_base", m.vocab_base);
    r.i("--patterns", "patterns", m.patterns);
    r.i("--rank-la", "rank_la", m.rank_la);
    r.i("--rank-gate", "rank_gate", m.rank_gate);
    r.i("--t-max", "t_max", m.t_max);
    r.i("--step-limit", "step_token_limit", m.step_limit);
    r.i("--answer-limit", "answer_token_limit", m.answer_limit);
    r.i("--context-limit", "context_limit", m.context_limit);
    r.u("--model-seed", "seed", m.seed);
}

ModelConfig to_config(const ModelFlags& m) {
    ModelConfig cfg;
    cfg.layers = m.layers;
    cfg.d_model = m.d_model;
    cfg.heads = m.heads;
    cfg.d_ff = m.d_ff;
    cfg.vocab_base = m.vocab_base;
    cfg.patterns = m.patterns;
    cfg.rank_la = m.rank_la;
    cfg.rank_gate = m.rank_gate;
    cfg.t_max = m.t_max;
    cfg.step_token_limit = m.step_limit;
    cfg.answer_token_limit = m.answer_limit;
    cfg.context_limit = m.context_limit;
    cfg.seed = m.seed;
    return cfg;
}

void echo_model(ConfigFile& eff, const ModelConfig& cfg) {
    eff.set_int("model", "layers", cfg.layers);
    eff.set_int("model", "d_model", cfg.d_model);
    eff.set_int("model", "heads", cfg.heads);
    eff.set_int("model", "d_ff", cfg.d_ff);
    eff.set_int("model", "vocab_base", cfg.vocab_base);
    eff.set_int("model", "patterns", cfg.patterns);
    eff.set_int("model", "rank_la", cfg.rank_la);
    eff.set_int("model", "rank_gate", cfg.rank_gate);
    eff.set_int("model", "t_max", cfg.t_max);
    eff.set_int("model", "step_token_limit", cfg.step_token_limit);
    eff.set_int("model", "answer_token_limit", cfg.answer_token_limit);
    eff.set_int("model", "context_limit", cfg.context_limit);
    eff.set_int("model", "seed", int64_t(cfg.seed));
}

// 64-bit doubles by default; the environment can drop the engine to floats
std::string engine_precision() {
    const char* env = std::getenv("STATEFORMER_PRECISION");
    if (!env || std::string(env).empty() || std::string(env) == "f64") return "f64";
    if (std::string(env) == "f32") return "f32";
    throw std::invalid_argument("STATEFORMER_PRECISION must be f64 or f32, got '" +
                                std::string(env) + "'");
}

// ---- init ----

struct InitCmd {
    CLI::App* cmd = nullptr;
    Common common;
    ModelFlags model;
    std::string out;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("init", "write freshly seeded model weights");
        attach_common(cmd, common);
        attach_model_flags(cmd, model);
        cmd->add_option("--out", out, "weights path (default <outdir>/weights.json)");
    }

    int run() {
        const ConfigFile file = load_file(common);
        Resolve r{cmd, &file, "init"};
        resolve_model(r, model);
        r.s("--out", "out", out);
        const ModelConfig cfg = to_config(model);
        const std::string path = place(common, out, "weights.json");
        std::filesystem::create_directories(std::filesystem::path(path).parent_path().empty()
                                                ? "."
                                                : std::filesystem::path(path).parent_path().string());
        ModelWeights w = init_weights(cfg);
        save_weights(path, w);
        ConfigFile eff;
        eff.set_string("run", "command", "init");
        echo_model(eff, cfg);
        eff.set_string("init", "out", path);
        write_effective(common, eff);
        std::cout << "wrote weights (" << cfg.layers << " layers, d_model " << cfg.d_model
                  << ") to " << path << "\n";
        return 0;
    }
};

// ---- synth ----

struct SynthCmd {
    CLI::App* cmd = nullptr;
    Common common;
    int64_t n = 200;
    uint64_t seed = 2024;
    double p_verify = 0.6, p_filler = 0.25;
    std::string out;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("synth", "generate an arithmetic-chain corpus");
        attach_common(cmd, common);
        cmd->add_option("--n", n, "sample count")->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_option("--p-verify", p_verify, "chance of a verification step")
            ->capture_default_str();
        cmd->add_option("--p-filler", p_filler, "chance of a drifting filler step")
            ->capture_default_str();
        cmd->add_option("--out", out, "corpus path (default <outdir>/corpus.jsonl)");
    }

    int run() {
        const ConfigFile file = load_file(common);
        Resolve r{cmd, &file, "synth"};
        r.i("--n", "n", n);
        r.u("--seed", "seed", seed);
        r.d("--p-verify", "p_verify", p_verify);
        r.d("--p-filler", "p_filler", p_filler);
        r.s("--out", "out", out);
        GrammarParams gp;
        gp.p_verify = p_verify;
        gp.p_filler = p_filler;
        const auto corpus = synth_corpus(seed, n, gp);
        const std::string path = place(common, out, "corpus.jsonl");
        std::filesystem::create_directories(common.outdir);
        write_corpus_jsonl(path, corpus);
        ConfigFile eff;
        eff.set_string("run", "command", "synth");
        eff.set_int("synth", "n", n);
        eff.set_int("synth", "seed", int64_t(seed));
        eff.set_double("synth", "p_verify", p_verify);
        eff.set_double("synth", "p_filler", p_filler);
        eff.set_string("synth", "out", path);
        write_effective(common, eff);
        std::cout << "wrote " << corpus.size() << " samples to " << path << "\n";
        return 0;
    }
};

// ---- pretrain ----

struct PretrainCmd {
    CLI::App* cmd = nullptr;
    Common common;
    ModelFlags model;
    std::string corpus_path, out, report;
    double lr = 1e-3, warmup_ratio = 0.05;
    int64_t epochs = 30, batch = 16, max_sample_len = 512;
    uint64_t seed = 606;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("pretrain", "train the frozen base on raw corpus streams");
        attach_common(cmd, common);
        attach_model_flags(cmd, model);
        cmd->add_option("--corpus", corpus_path, "corpus jsonl")->required();
        cmd->add_option("--out", out, "weights path (default <outdir>/base_weights.json)");
        cmd->add_option("--report", report, "CSV path (default <outdir>/pretrain_report.csv)");
        cmd->add_option("--lr", lr)->capture_default_str();
        cmd->add_option("--epochs", epochs)->capture_default_str();
        cmd->add_option("--batch", batch)->capture_default_str();
        cmd->add_option("--warmup-ratio", warmup_ratio)->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_option("--max-sample-len", max_sample_len)->capture_default_str();
    }

    int run() {
        const ConfigFile file = load_file(common);
        Resolve r{cmd, &file, "pretrain"};
        resolve_model(r, model);
        r.s("--corpus", "corpus", corpus_path);
        r.s("--out", "out", out);
        r.s("--report", "report", report);
        r.d("--lr", "lr", lr);
        r.i("--epochs", "epochs", epochs);
        r.i("--batch", "batch", batch);
        r.d("--warmup-ratio", "warmup_ratio", warmup_ratio);
        r.u("--seed", "seed", seed);
        r.i("--max-sample-len", "max_sample_len", max_sample_len);

        const Vocab vocab = Vocab::base();
        if (model.vocab_base != vocab.size()) {
            std::cerr << "note: vocab_base forced to the corpus word list size " << vocab.size()
                      << "\n";
            model.vocab_base = vocab.size();
        }
        const ModelConfig cfg = to_config(model);
        const auto corpus = read_corpus_jsonl(corpus_path);
        std::vector<std::vector<int64_t>> seqs;
        for (const auto& s : corpus) {
            std::vector<int64_t> toks = vocab.encode(s.query + " " + s.thinking + " " + s.answer);
            toks.push_back(cfg.eos_id);
            seqs.push_back(std::move(toks));
        }
        ModelWeights w = init_weights(cfg);
        PretrainConfig pc;
        pc.lr = lr;
        pc.epochs = epochs;
        pc.batch_size = batch;
        pc.warmup_ratio = warmup_ratio;
        pc.seed = seed;
        pc.max_sample_len = max_sample_len;
        std::filesystem::create_directories(common.outdir);
        pc.report_path = place(common, report, "pretrain_report.csv");
        pc.diag_path = (std::filesystem::path(common.outdir) / "pretrain_nan_diag.json").string();
        const TrainResult res = pretrain(w, seqs, pc);
        const std::string path = place(common, out, "base_weights.json");
        save_weights(path, w);
        ConfigFile eff;
        eff.set_string("run", "command", "pretrain");
        echo_model(eff, cfg);
        eff.set_string("pretrain", "corpus", corpus_path);
        eff.set_string("pretrain", "out", path);
        eff.set_string("pretrain", "report", pc.report_path);
        eff.set_double("pretrain", "lr", lr);
        eff.set_int("pretrain", "epochs", epochs);
        eff.set_int("pretrain", "batch", batch);
        eff.set_double("pretrain", "warmup_ratio", warmup_ratio);
        eff.set_int("pretrain", "seed", int64_t(seed));
        eff.set_int("pretrain", "max_sample_len", max_sample_len);
        write_effective(common, eff);
        if (res.rows.empty()) throw std::runtime_error("pretrain produced no optimizer steps");
        std::cout << "pretrained " << res.rows.size() << " steps; loss " << res.rows.front().loss_total
                  << " -> " << res.rows.back().loss_total << "; wrote " << path << "\n";
        return 0;
    }
};

// ---- segment ----

struct SegmentCmd {
    CLI::App* cmd = nullptr;
    Common common;
    std::string corpus_path, model_path, out, cluster_out;
    int64_t k = 4, min_count = 5;
    uint64_t seed = 2024;
    double top_fraction = 0.8;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("segment",
                                 "split thinking into steps and cluster them into patterns");
        attach_common(cmd, common);
        cmd->add_option("--corpus", corpus_path, "corpus jsonl")->required();
        cmd->add_option("--model", model_path, "scoring model weights")->required();
        cmd->add_option("--out", out, "annotated jsonl (default <outdir>/annotated.jsonl)");
        cmd->add_option("--cluster-out", cluster_out,
                        "cluster model path (default <outdir>/clusters.json)");
        cmd->add_option("--k", k, "pattern count")->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_option("--top-fraction", top_fraction,
                        "fraction of candidate transition types kept")
            ->capture_default_str();
        cmd->add_option("--min-count", min_count, "minimum occurrences for a candidate")
            ->capture_default_str();
    }

    int run() {
        const ConfigFile file = load_file(common);
        Resolve r{cmd, &file, "segment"};
        r.s("--corpus", "corpus", corpus_path);
        r.s("--model", "model", model_path);
        r.s("--out", "out", out);
        r.s("--cluster-out", "cluster_out", cluster_out);
        r.i("--k", "k", k);
        r.u("--seed", "seed", seed);
        r.d("--top-fraction", "top_fraction", top_fraction);
        r.i("--min-count", "min_count", min_count);

        const Vocab vocab = Vocab::base();
        const ModelWeights w = load_weights(model_path);
        if (w.cfg.vocab_base != vocab.size())
            throw std::runtime_error("scoring model vocabulary does not match the corpus");
        const auto corpus = read_corpus_jsonl(corpus_path);
        std::vector<std::vector<int64_t>> thinking;
        for (const auto& s : corpus) thinking.push_back(vocab.encode(s.thinking));
        NgramScorer scorer;
        scorer.fit(thinking);
        const std::unordered_set<int64_t> delims{vocab.id(".")};
        const auto transitions = extract_transition_tokens(thinking, scorer, delims, top_fraction,
                                                           min_count);
        if (transitions.empty())
            throw std::runtime_error("no transition tokens survived the filters");
        const std::unordered_set<int64_t> tset(transitions.begin(), transitions.end());

        std::vector<std::vector<Span>> spans(corpus.size());
        std::vector<std::vector<double>> embeddings;
        for (size_t i = 0; i < corpus.size(); ++i) {
            spans[i] = segment_thinking(thinking[i], tset, delims);
            for (const Span& sp : spans[i]) {
                std::vector<int64_t> step(thinking[i].begin() + sp.begin,
                                          thinking[i].begin() + sp.end);
                embeddings.push_back(step_embedding(w, step));
            }
        }
        KmeansOptions ko;
        ko.k = k;
        ko.seed = seed;
        const KmeansResult km = minibatch_kmeans(embeddings, ko);
        ClusterModel cm;
        cm.k = k;
        cm.seed = seed;
        cm.centroids = km.centroids;

        std::vector<AnnotatedSample> annotated;
        std::vector<int64_t> population(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < corpus.size(); ++i) {
            AnnotatedSample a = annotate(corpus[i], thinking[i], spans[i], cm, w, vocab);
            for (const auto& st : a.steps) ++population[size_t(st.pattern - 1)];
            annotated.push_back(std::move(a));
        }
        int64_t total_steps = 0, biggest = 0;
        for (int64_t c : population) {
            total_steps += c;
            biggest = std::max(biggest, c);
        }
        if (k > 1 && biggest * k > 10 * total_steps)
            std::cerr << "warning: one pattern holds " << biggest << " of " << total_steps
                      << " steps; the clustering may have collapsed\n";

        std::filesystem::create_directories(common.outdir);
        const std::string apath = place(common, out, "annotated.jsonl");
        const std::string cpath = place(common, cluster_out, "clusters.json");
        write_annotated_jsonl(apath, annotated);
        save_cluster_model(cpath, cm);

        ConfigFile eff;
        eff.set_string("run", "command", "segment");
        eff.set_string("segment", "corpus", corpus_path);
        eff.set_string("segment", "model", model_path);
        eff.set_string("segment", "out", apath);
        eff.set_string("segment", "cluster_out", cpath);
        eff.set_int("segment", "k", k);
        eff.set_int("segment", "seed", int64_t(seed));
        eff.set_double("segment", "top_fraction", top_fraction);
        eff.set_int("segment", "min_count", min_count);
        write_effective(common, eff);

        std::cout << "transitions:";
        for (int64_t id : transitions) std::cout << " " << vocab.words[size_t(id)];
        std::cout << "\npattern sizes:";
        for (int64_t c : population) std::cout << " " << c;
        std::cout << "\nwrote " << annotated.size() << " annotated samples to " << apath
                  << " and the cluster model to " << cpath << "\n";
        return 0;
    }
};

// ---- train ----

struct TrainCmd {
    CLI::App* cmd = nullptr;
    Common common;
    std::string corpus_path, base_path, out, report;
    double lr = 2e-4, beta_kd = 0.2, warmup_ratio = 0.03, alpha_max = 0.4;
    int64_t epochs = 2, batch = 32, t_max = 40, max_sample_len = 512;
    uint64_t seed = 505;
    bool correction = false;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("train", "fine-tune the state path on an annotated corpus");
        attach_common(cmd, common);
        cmd->add_option("--corpus", corpus_path, "annotated jsonl")->required();
        cmd->add_option("--base", base_path, "base weights")->required();
        cmd->add_option("--out", out, "weights path (default <outdir>/tuned_weights.json)");
        cmd->add_option("--report", report, "CSV path (default <outdir>/train_report.csv)");
        cmd->add_option("--lr", lr)->capture_default_str();
        cmd->add_option("--beta-kd", beta_kd, "distillation weight")->capture_default_str();
        cmd->add_option("--epochs", epochs)->capture_default_str();
        cmd->add_option("--batch", batch)->capture_default_str();
        cmd->add_option("--warmup-ratio", warmup_ratio)->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_flag("--correction", correction, "fold step corrections into the training forward");
        cmd->add_option("--alpha-max", alpha_max)->capture_default_str();
        cmd->add_option("--t-max", t_max)->capture_default_str();
        cmd->add_option("--max-sample-len", max_sample_len)->capture_default_str();
    }

    int run() {
        const ConfigFile file = load_file(common);
        Resolve r{cmd, &file, "train"};
        r.s("--corpus", "corpus", corpus_path);
        r.s("--base", "base", base_path);
        r.s("--out", "out", out);
        r.s("--report", "report", report);
        r.d("--lr", "lr", lr);
        r.d("--beta-kd", "beta_kd", beta_kd);
        r.i("--epochs", "epochs", epochs);
        r.i("--batch", "batch", batch);
        r.d("--warmup-ratio", "warmup_ratio", warmup_ratio);
        r.u("--seed", "seed", seed);
        r.b("--correction", "correction", correction);
        r.d("--alpha-max", "alpha_max", alpha_max);
        r.i("--t-max", "t_max", t_max);
        r.i("--max-sample-len", "max_sample_len", max_sample_len);

        ModelWeights w = load_weights(base_path);
        const Vocab vocab = Vocab::base();
        if (w.cfg.vocab_base != vocab.size())
            throw std::runtime_error("base model vocabulary does not match the corpus");
        const auto annotated = read_annotated_jsonl(corpus_path);
        std::vector<TrainSequence> data;
        for (const auto& a : annotated) data.push_back(build_train_sequence(a, vocab, w.cfg));

        TrainConfig tc;
        tc.lr = lr;
        tc.beta_kd = beta_kd;
        tc.epochs = epochs;
        tc.batch_size = batch;
        tc.warmup_ratio = warmup_ratio;
        tc.seed = seed;
        tc.correction = correction;
        tc.alpha_max = alpha_max;
        tc.t_max = t_max;
        tc.max_sample_len = max_sample_len;
        std::filesystem::create_directories(common.outdir);
        tc.report_path = place(common, report, "train_report.csv");
        tc.diag_path = (std::filesystem::path(common.outdir) / "train_nan_diag.json").string();

        const uint64_t frozen_before = weights_checksum(frozen_tensors(w));
        const TrainResult res = train(w, data, tc);
        if (weights_checksum(frozen_tensors(w)) != frozen_before)
            throw std::runtime_error("frozen tensors changed during fine-tuning");
        const std::string path = place(common, out, "tuned_weights.json");
        save_weights(path, w);

        ConfigFile eff;
        eff.set_string("run", "command", "train");
        eff.set_string("train", "corpus", corpus_path);
        eff.set_string("train", "base", base_path);
        eff.set_string("train", "out", path);
        eff.set_string("train", "report", tc.report_path);
        eff.set_double("train", "lr", lr);
        eff.set_double("train", "beta_kd", beta_kd);
        eff.set_int("train", "epochs", epochs);
        eff.set_int("train", "batch", batch);
        eff.set_double("train", "warmup_ratio", warmup_ratio);
        eff.set_int("train", "seed", int64_t(seed));
        eff.set_bool("train", "correction", correction);
        eff.set_double("train", "alpha_max", alpha_max);
        eff.set_int("train", "t_max", t_max);
        eff.set_int("train", "max_sample_len", max_sample_len);
        write_effective(common, eff);

        if (res.rows.empty()) throw std::runtime_error("training produced no optimizer steps");
        std::cout << "tuned " << res.rows.size() << " steps (skipped " << res.skipped
                  << " overlength); loss " << res.rows.front().loss_total << " -> "
                  << res.rows.back().loss_total << "; wrote " << path << "\n";
        return 0;
    }
};

// ---- generate ----

struct GenerateCmd {
    CLI::App* cmd = nullptr;
    Common common;
    std::string model_path, prompt_text, out;
    bool greedy = false, sample = false, no_correction = false, no_diversity = false;
    double temperature = 0.6, top_p = 0.95, alpha_max = 0.4;
    int64_t t_max = 40;
    uint64_t seed = 0;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("generate", "run step-structured decoding on a prompt");
        attach_common(cmd, common);
        cmd->add_option("--model", model_path, "model weights")->required();
        cmd->add_option("--prompt", prompt_text, "prompt text, e.g. \"compute 3 plus 4 times 2 .\"")
            ->required();
        auto* g = cmd->add_flag("--greedy", greedy, "argmax decoding (default)");
        auto* s = cmd->add_flag("--sample", sample, "nucleus sampling");
        g->excludes(s);
        s->excludes(g);
        cmd->add_option("--temperature", temperature)->capture_default_str();
        cmd->add_option("--top-p", top_p)->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_flag("--no-correction", no_correction, "disable state corrections at step close");
        cmd->add_flag("--no-diversity", no_diversity, "allow repeating the previous pattern");
        cmd->add_option("--alpha-max", alpha_max, "correction strength cap")->capture_default_str();
        cmd->add_option("--t-max", t_max, "correction ramp length and step budget")
            ->capture_default_str();
        cmd->add_option("--out", out, "trace path (default <outdir>/trace.json)");
    }

    template <class T>
    GenerationTrace run_typed(const ModelWeights& w, const std::vector<int64_t>& prompt,
                              const EngineOptions& opt, const DecodePolicy& policy) const {
        const EngineWeights<T> ew = EngineWeights<T>::from(w);
        return generate(ew, opt, prompt, policy);
    }

    int run() {
        const ConfigFile file = load_file(common);
        Resolve r{cmd, &file, "generate"};
        r.s("--model", "model", model_path);
        r.s("--prompt", "prompt", prompt_text);
        r.s("--out", "out", out);
        if (!cmd->count("--sample") && !cmd->count("--greedy"))
            sample = file.get_bool("generate", "sample", sample);
        r.d("--temperature", "temperature", temperature);
        r.d("--top-p", "top_p", top_p);
        r.u("--seed", "seed", seed);
        r.b("--no-correction", "no_correction", no_correction);
        r.b("--no-diversity", "no_diversity", no_diversity);
        r.d("--alpha-max", "alpha_max", alpha_max);
        r.i("--t-max", "t_max", t_max);

        const ModelWeights w = load_weights(model_path);
        if (w.cfg.vocab_base != Vocab::base().size())
            throw std::runtime_error("model vocabulary does not match the built-in word list");
        const Vocab vocab = Vocab::with_patterns(w.cfg.patterns);
        const std::vector<int64_t> prompt = Vocab::base().encode(prompt_text);

        EngineOptions opt;  // stepwise, state path on
        opt.correction.enabled = !no_correction;
        opt.correction.alpha_max = alpha_max;
        opt.correction.t_max = t_max;
        DecodePolicy policy;
        policy.kind = sample ? DecodePolicy::Kind::nucleus : DecodePolicy::Kind::greedy;
        policy.temperature = temperature;
        policy.top_p = top_p;
        policy.seed = seed;
        policy.diversity = !no_diversity && w.cfg.patterns >= 2;

        const std::string prec = engine_precision();
        const GenerationTrace trace = prec == "f32" ? run_typed<float>(w, prompt, opt, policy)
                                                    : run_typed<double>(w, prompt, opt, policy);

        std::filesystem::create_directories(common.outdir);
        const std::string path = place(common, out, "trace.json");
        write_traces_jsonl(path, {trace});

        ConfigFile eff;
        eff.set_string("run", "command", "generate");
        eff.set_string("generate", "model", model_path);
        eff.set_string("generate", "prompt", prompt_text);
        eff.set_string("generate", "out", path);
        eff.set_bool("generate", "sample", sample);
        eff.set_double("generate", "temperature", temperature);
        eff.set_double("generate", "top_p", top_p);
        eff.set_int("generate", "seed", int64_t(seed));
        eff.set_bool("generate", "no_correction", no_correction);
        eff.set_bool("generate", "no_diversity", no_diversity);
        eff.set_double("generate", "alpha_max", alpha_max);
        eff.set_int("generate", "t_max", t_max);
        eff.set_string("generate", "precision", prec);
        write_effective(common, eff);

        for (const TraceStep& st : trace.steps)
            std::cout << "step " << st.step_index << " pattern " << st.pattern << " reward "
                      << st.reward << " alpha " << st.alpha << ": " << vocab.decode(st.tokens)
                      << "\n";
        std::cout << "answer: " << vocab.decode(trace.answer) << "\n";
        std::cout << "trace: " << path << "\n";
        return 0;
    }
};

// ---- prune ----

struct PruneCmd {
    CLI::App* cmd = nullptr;
    Common common;
    std::string traces_path, out;
    double keep = 0.8;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("prune", "drop the lowest-reward steps from recorded traces");
        attach_common(cmd, common);
        cmd->add_option("--traces", traces_path, "traces jsonl")->required();
        cmd->add_option("--keep", keep, "fraction of steps kept per trace")->capture_default_str();
        cmd->add_option("--out", out, "pruned traces path (default <outdir>/pruned.jsonl)");
    }

    int run() {
        const ConfigFile file = load_file(common);
        Resolve r{cmd, &file, "prune"};
        r.s("--traces", "traces", traces_path);
        r.d("--keep", "keep", keep);
        r.s("--out", "out", out);

        auto traces = read_traces_jsonl(traces_path);
        int64_t kept = 0, total = 0;
        for (GenerationTrace& t : traces) {
            std::vector<double> rewards;
            for (const TraceStep& st : t.steps) rewards.push_back(st.reward);
            if (rewards.empty()) continue;
            const auto keep_idx = prune_keep_indices(rewards, keep);
            std::vector<TraceStep> pruned;
            for (int64_t i : keep_idx) pruned.push_back(t.steps[size_t(i)]);
            total += int64_t(t.steps.size());
            kept += int64_t(pruned.size());
            t.steps = std::move(pruned);
        }
        std::filesystem::create_directories(common.outdir);
        const std::string path = place(common, out, "pruned.jsonl");
        write_traces_jsonl(path, traces);

        ConfigFile eff;
        eff.set_string("run", "command", "prune");
        eff.set_string("prune", "traces", traces_path);
        eff.set_double("prune", "keep", keep);
        eff.set_string("prune", "out", path);
        write_effective(common, eff);

        std::cout << "kept " << kept << " of " << total << " steps across " << traces.size()
                  << " traces; wrote " << path << "\n";
        return 0;
    }
};

// ---- bench ----

struct BenchCmd {
    CLI::App* cmd = nullptr;
    Common common;
    ModelFlags model;
    std::string model_path, csv, gnuplot;
    std::vector<int64_t> lengths = {512, 1024, 2048, 4096, 8192};
    int64_t reps = 5, warmup = 1, prompt_len = 32, step_body = 48;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("bench", "latency and memory sweep over both attention modes");
        attach_common(cmd, common);
        attach_model_flags(cmd, model);
        cmd->add_option("--model", model_path, "weights to bench (default: fresh from model flags)");
        cmd->add_option("--lengths", lengths, "ascending context targets")
            ->delimiter(',')
            ->capture_default_str();
        cmd->add_option("--reps", reps, "measured repetitions (median)")->capture_default_str();
        cmd->add_option("--warmup", warmup)->capture_default_str();
        cmd->add_option("--prompt-len", prompt_len)->capture_default_str();
        cmd->add_option("--step-body", step_body)->capture_default_str();
        cmd->add_option("--csv", csv, "CSV path (default <outdir>/bench.csv)");
        cmd->add_option("--gnuplot", gnuplot, "gnuplot path (default <outdir>/bench.gnuplot)");
    }

    int run() {
        const ConfigFile file = load_file(common);
        Resolve r{cmd, &file, "bench"};
        resolve_model(r, model);
        r.s("--model", "model", model_path);
        r.list("--lengths", "lengths", lengths);
        r.i("--reps", "reps", reps);
        r.i("--warmup", "warmup", warmup);
        r.i("--prompt-len", "prompt_len", prompt_len);
        r.i("--step-body", "step_body", step_body);

        ModelWeights w = model_path.empty() ? init_weights(to_config(model))
                                            : load_weights(model_path);
        BenchConfig bc;
        bc.lengths = lengths;
        bc.reps = reps;
        bc.warmup_reps = warmup;
        bc.prompt_len = prompt_len;
        bc.step_body = step_body;
        std::filesystem::create_directories(common.outdir);
        bc.csv_path = place(common, csv, "bench.csv");
        bc.gnuplot_path = place(common, gnuplot, "bench.gnuplot");

        const std::string prec = engine_precision();
        const BenchReport report =
            prec == "f32" ? latency_sweep<float>(w, bc) : latency_sweep<double>(w, bc);

        ConfigFile eff;
        eff.set_string("run", "command", "bench");
        echo_model(eff, w.cfg);
        eff.set_string("bench", "model", model_path);
        eff.set_int_list("bench", "lengths", lengths);
        eff.set_int("bench", "reps", reps);
        eff.set_int("bench", "warmup", warmup);
        eff.set_int("bench", "prompt_len", prompt_len);
        eff.set_int("bench", "step_body", step_body);
        eff.set_string("bench", "csv", bc.csv_path);
        eff.set_string("bench", "gnuplot", bc.gnuplot_path);
        eff.set_string("bench", "precision", prec);
        write_effective(common, eff);

        for (const BenchRow& row : report.rows) {
            if (row.skipped) {
                std::cout << row.mode << " " << row.context_len << ": skipped (" << row.note
                          << ")\n";
                continue;
            }
            std::cout << row.mode << " " << row.context_len << ": " << row.per_token_ms
                      << " ms/token, cache peak " << row.cache_positions_peak << " positions, "
                      << row.cache_bytes_est << " bytes\n";
        }
        const auto base_rows = report.rows_for("baseline");
        const auto mam_rows = report.rows_for("mam");
        if (base_rows.size() >= 3 && mam_rows.size() >= 2) {
            std::vector<double> bx, by, mx, my;
            for (const auto& row : base_rows) {
                bx.push_back(double(row.context_len));
                by.push_back(row.per_token_ms);
            }
            for (const auto& row : mam_rows) {
                mx.push_back(double(row.context_len));
                my.push_back(row.per_token_ms);
            }
            const auto bfit = polyfit(bx, by, 2);
            const auto mfit = polyfit(mx, my, 1);
            std::cout << "baseline quadratic fit R^2 = " << r_squared(bx, by, bfit)
                      << ", state-path linear fit R^2 = " << r_squared(mx, my, mfit) << "\n";
            const double r0 = by.front() / my.front(), r1 = by.back() / my.back();
            std::cout << "per-token ratio " << bx.front() << ": " << r0 << "x, " << bx.back()
                      << ": " << r1 << "x\n";
        }
        std::cout << "csv: " << bc.csv_path << "\n";
        return 0;
    }
};

// ---- verify ----

struct VerifyCmd {
    CLI::App* cmd = nullptr;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("verify", "run every module invariant, one line per check");
    }

    int run() { return print_verify_report(std::cout); }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"step-structured reasoning runtime"};
    app.require_subcommand(1);

    InitCmd init_cmd;
    SynthCmd synth_cmd;
    PretrainCmd pretrain_cmd;
    SegmentCmd segment_cmd;
    TrainCmd train_cmd;
    GenerateCmd generate_cmd;
    PruneCmd prune_cmd;
    BenchCmd bench_cmd;
    VerifyCmd verify_cmd;
    init_cmd.attach(app);
    synth_cmd.attach(app);
    pretrain_cmd.attach(app);
    segment_cmd.attach(app);
    train_cmd.attach(app);
    generate_cmd.attach(app);
    prune_cmd.attach(app);
    bench_cmd.attach(app);
    verify_cmd.attach(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    try {
        if (init_cmd.cmd->parsed()) return init_cmd.run();
        if (synth_cmd.cmd->parsed()) return synth_cmd.run();
        if (pretrain_cmd.cmd->parsed()) return pretrain_cmd.run();
        if (segment_cmd.cmd->parsed()) return segment_cmd.run();
        if (train_cmd.cmd->parsed()) return train_cmd.run();
        if (generate_cmd.cmd->parsed()) return generate_cmd.run();
        if (prune_cmd.cmd->parsed()) return prune_cmd.run();
        if (bench_cmd.cmd->parsed()) return bench_cmd.run();
        if (verify_cmd.cmd->parsed()) return verify_cmd.run();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
