#include "stateformer/weights.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "stateformer/rng.hpp"

namespace stf {

using nlohmann::json;

void ModelConfig::validate() const {
    if (layers < 1) throw std::invalid_argument("config: layers must be >= 1");
    if (d_model < 2 || heads < 1 || d_model % heads != 0)
        throw std::invalid_argument("config: d_model " + std::to_string(d_model) +
                                    " must be a positive multiple of heads " +
                                    std::to_string(heads));
    if (d_head() % 2 != 0) throw std::invalid_argument("config: d_head must be even for rotation");
    if (d_ff < 1) throw std::invalid_argument("config: d_ff must be >= 1");
    if (vocab_base < 2) throw std::invalid_argument("config: vocab_base must be >= 2");
    if (patterns < 1) throw std::invalid_argument("config: patterns must be >= 1");
    if (rank_la < 1 || rank_la > d_model || rank_gate < 1 || rank_gate > d_model)
        throw std::invalid_argument("config: ranks must lie in [1, d_model]");
    if (t_max < 1) throw std::invalid_argument("config: t_max must be >= 1");
    if (step_token_limit < 2) throw std::invalid_argument("config: step_token_limit must be >= 2");
    if (context_limit < 1) throw std::invalid_argument("config: context_limit must be >= 1");
    if (eos_id < 0 || eos_id >= vocab_base || answer_start_id < 0 || answer_start_id >= vocab_base)
        throw std::invalid_argument("config: eos/answer ids must be base-vocab tokens");
}

std::string config_to_json(const ModelConfig& c) {
    json j{{"layers", c.layers},
           {"d_model", c.d_model},
           {"heads", c.heads},
           {"d_ff", c.d_ff},
           {"vocab_base", c.vocab_base},
           {"patterns", c.patterns},
           {"rank_la", c.rank_la},
           {"rank_gate", c.rank_gate},
           {"t_max", c.t_max},
           {"step_token_limit", c.step_token_limit},
           {"answer_token_limit", c.answer_token_limit},
           {"context_limit", c.context_limit},
           {"eos_id", c.eos_id},
           {"answer_start_id", c.answer_start_id},
           {"rope_base", c.rope_base},
           {"seed", c.seed}};
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.layers = j.at("layers");
    c.d_model = j.at("d_model");
    c.heads = j.at("heads");
    c.d_ff = j.at("d_ff");
    c.vocab_base = j.at("vocab_base");
    c.patterns = j.at("patterns");
    c.rank_la = j.at("rank_la");
    c.rank_gate = j.at("rank_gate");
    c.t_max = j.at("t_max");
    c.step_token_limit = j.at("step_token_limit");
    c.answer_token_limit = j.at("answer_token_limit");
    c.context_limit = j.at("context_limit");
    c.eos_id = j.at("eos_id");
    c.answer_start_id = j.at("answer_start_id");
    c.rope_base = j.at("rope_base");
    c.seed = j.at("seed");
    return c;
}

static uint64_t fnv1a(const void* data, size_t len, uint64_t h = 1469598103934665603ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t config_hash(const ModelConfig& cfg) {
    const std::string s = config_to_json(cfg);
    return fnv1a(s.data(), s.size());
}

int64_t SpecialTokenTable::start_id(int64_t pattern) const {
    if (pattern < 1 || pattern > patterns)
        throw std::invalid_argument("special tokens: pattern " + std::to_string(pattern) +
                                    " outside 1.." + std::to_string(patterns));
    return vocab_base + 2 * (pattern - 1);
}

int64_t SpecialTokenTable::end_id(int64_t pattern) const { return start_id(pattern) + 1; }

bool SpecialTokenTable::is_start(int64_t id) const {
    return id >= vocab_base && id < vocab_base + 2 * patterns && (id - vocab_base) % 2 == 0;
}

bool SpecialTokenTable::is_end(int64_t id) const {
    return id >= vocab_base && id < vocab_base + 2 * patterns && (id - vocab_base) % 2 == 1;
}

int64_t SpecialTokenTable::pattern_of(int64_t id) const {
    if (id < vocab_base || id >= vocab_base + 2 * patterns) return -1;
    return (id - vocab_base) / 2 + 1;
}

namespace {

Tensor normal_init(std::vector<int64_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape), 0.0);
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = rng.next_normal() * stddev;
    return t;
}

}  // namespace

ModelWeights init_weights(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    ModelWeights w;
    w.cfg = cfg;
    const double proj_sd = 1.0 / std::sqrt(double(cfg.d_model));
    const double ff_sd = 1.0 / std::sqrt(double(cfg.d_ff));
    w.embed_base = normal_init({cfg.vocab_base, cfg.d_model}, rng, 1.0);
    w.embed_special = normal_init({2 * cfg.patterns, cfg.d_model}, rng, 1.0);
    w.final_gain = Tensor({cfg.d_model}, 1.0);
    w.head = normal_init({cfg.d_model, cfg.vocab_total()}, rng, proj_sd);
    w.layers.resize(size_t(cfg.layers));
    for (auto& l : w.layers) {
        l.attn_gain = Tensor({cfg.d_model}, 1.0);
        l.wq = normal_init({cfg.d_model, cfg.d_model}, rng, proj_sd);
        l.wk = normal_init({cfg.d_model, cfg.d_model}, rng, proj_sd);
        l.wv = normal_init({cfg.d_model, cfg.d_model}, rng, proj_sd);
        l.wo = normal_init({cfg.d_model, cfg.d_model}, rng, proj_sd);
        // up factors start at zero: state-path projections == frozen base
        l.la_down_q = normal_init({cfg.d_model, cfg.rank_la}, rng, proj_sd);
        l.la_up_q = Tensor({cfg.rank_la, cfg.d_model}, 0.0);
        l.la_down_k = normal_init({cfg.d_model, cfg.rank_la}, rng, proj_sd);
        l.la_up_k = Tensor({cfg.rank_la, cfg.d_model}, 0.0);
        l.la_down_v = normal_init({cfg.d_model, cfg.rank_la}, rng, proj_sd);
        l.la_up_v = Tensor({cfg.rank_la, cfg.d_model}, 0.0);
        // gate pre-activation starts at zero: every gate opens at 0.5
        l.gate_down = normal_init({cfg.d_model, cfg.rank_gate}, rng, proj_sd);
        l.gate_up = Tensor({cfg.rank_gate, cfg.d_model}, 0.0);
        l.ffn_gain = Tensor({cfg.d_model}, 1.0);
        l.w1 = normal_init({cfg.d_model, cfg.d_ff}, rng, proj_sd);
        l.w3 = normal_init({cfg.d_model, cfg.d_ff}, rng, proj_sd);
        l.w2 = normal_init({cfg.d_ff, cfg.d_model}, rng, ff_sd);
    }
    return w;
}

std::vector<std::pair<std::string, Tensor*>> trainable_tensors(ModelWeights& w) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("embed_special", &w.embed_special);
    for (size_t i = 0; i < w.layers.size(); ++i) {
        auto& l = w.layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        out.emplace_back(p + "la_down_q", &l.la_down_q);
        out.emplace_back(p + "la_up_q", &l.la_up_q);
        out.emplace_back(p + "la_down_k", &l.la_down_k);
        out.emplace_back(p + "la_up_k", &l.la_up_k);
        out.emplace_back(p + "la_down_v", &l.la_down_v);
        out.emplace_back(p + "la_up_v", &l.la_up_v);
        out.emplace_back(p + "gate_down", &l.gate_down);
        out.emplace_back(p + "gate_up", &l.gate_up);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor*>> frozen_tensors(ModelWeights& w) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("embed_base", &w.embed_base);
    out.emplace_back("final_gain", &w.final_gain);
    out.emplace_back("head", &w.head);
    for (size_t i = 0; i < w.layers.size(); ++i) {
        auto& l = w.layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        out.emplace_back(p + "attn_gain", &l.attn_gain);
        out.emplace_back(p + "wq", &l.wq);
        out.emplace_back(p + "wk", &l.wk);
        out.emplace_back(p + "wv", &l.wv);
        out.emplace_back(p + "wo", &l.wo);
        out.emplace_back(p + "ffn_gain", &l.ffn_gain);
        out.emplace_back(p + "w1", &l.w1);
        out.emplace_back(p + "w3", &l.w3);
        out.emplace_back(p + "w2", &l.w2);
    }
    return out;
}

uint64_t weights_checksum(const std::vector<std::pair<std::string, Tensor*>>& tensors) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : tensors) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(t->data(), size_t(t->numel()) * sizeof(double), h);
    }
    return h;
}

void detach_weights(ModelWeights& w) {
    for (auto& [name, t] : trainable_tensors(w)) {
        (void)name;
        t->node = -1;
        t->tape = nullptr;
        t->requires_grad = false;
    }
    for (auto& [name, t] : frozen_tensors(w)) {
        (void)name;
        t->node = -1;
        t->tape = nullptr;
        t->requires_grad = false;
    }
}

namespace {

json tensor_to_json(const Tensor& t) {
    json j;
    j["shape"] = t.shape();
    j["data"] = std::vector<double>(t.data(), t.data() + t.numel());
    return j;
}

Tensor tensor_from_json(const json& j) {
    std::vector<int64_t> shape = j.at("shape").get<std::vector<int64_t>>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    return Tensor(std::move(shape), std::move(data));
}

json all_tensors_json(ModelWeights& w) {
    json t;
    for (auto& [name, ten] : frozen_tensors(w)) t[name] = tensor_to_json(*ten);
    for (auto& [name, ten] : trainable_tensors(w)) t[name] = tensor_to_json(*ten);
    return t;
}

}  // namespace

void save_weights(const std::string& path, const ModelWeights& w) {
    ModelWeights& mut = const_cast<ModelWeights&>(w);
    json j;
    j["config"] = json::parse(config_to_json(w.cfg));
    j["tensors"] = all_tensors_json(mut);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_weights: cannot open " + path);
    f << j.dump();
}

ModelWeights load_weights(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_weights: cannot open " + path);
    json j = json::parse(f);
    ModelConfig cfg = config_from_json(j.at("config").dump());
    ModelWeights w = init_weights(cfg);
    json& t = j.at("tensors");
    auto load_into = [&](const std::string& name, Tensor* dst) {
        if (!t.contains(name)) throw std::runtime_error("load_weights: missing tensor " + name);
        Tensor loaded = tensor_from_json(t.at(name));
        if (!loaded.same_shape(*dst))
            throw std::runtime_error("load_weights: shape mismatch for " + name);
        *dst = loaded;
    };
    for (auto& [name, ten] : frozen_tensors(w)) load_into(name, ten);
    for (auto& [name, ten] : trainable_tensors(w)) load_into(name, ten);
    return w;
}

void save_checkpoint(const std::string& path, ModelWeights& w) {
    json j;
    j["config_hash"] = config_hash(w.cfg);
    json t;
    for (auto& [name, ten] : trainable_tensors(w)) t[name] = tensor_to_json(*ten);
    j["tensors"] = t;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f << j.dump();
}

void load_checkpoint(const std::string& path, ModelWeights& w) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    json j = json::parse(f);
    const uint64_t h = j.at("config_hash");
    if (h != config_hash(w.cfg))
        throw std::runtime_error("load_checkpoint: config hash mismatch, checkpoint belongs to a "
                                 "different model configuration");
    json& t = j.at("tensors");
    for (auto& [name, ten] : trainable_tensors(w)) {
        if (!t.contains(name)) throw std::runtime_error("load_checkpoint: missing tensor " + name);
        Tensor loaded = tensor_from_json(t.at(name));
        if (!loaded.same_shape(*ten))
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        *ten = loaded;
    }
}

}  // namespace stf
