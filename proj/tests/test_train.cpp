#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "stateformer/train.hpp"
#include "test_util.hpp"

using namespace stf;

namespace {

ModelConfig train_config() {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_base = 24;
    cfg.patterns = 4;
    cfg.rank_la = 2;
    cfg.rank_gate = 2;
    cfg.t_max = 6;
    cfg.seed = 1001;
    return cfg;
}

// randomized up factors so every delta and gate channel carries signal
void liven(ModelWeights& w, uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, t] : trainable_tensors(w)) {
        (void)name;
        for (int64_t i = 0; i < t->numel(); ++i) t->at(i) += 0.2 * rng.next_normal();
    }
}

// prompt, n_steps enclosed spans of random base tokens, then an answer span
TrainSequence make_seq(const ModelConfig& cfg, uint64_t seed, int64_t n_steps,
                       int64_t body_len = 3) {
    Rng rng(seed);
    SpecialTokenTable st(cfg);
    auto base_token = [&] { return int64_t(rng.next_index(size_t(cfg.vocab_base - 2))) + 2; };
    TrainSequence ts;
    for (int64_t i = 0; i < 4; ++i) ts.tokens.push_back(base_token());
    ts.prompt_len = 4;
    for (int64_t s = 0; s < n_steps; ++s) {
        const int64_t p = int64_t(rng.next_index(size_t(cfg.patterns))) + 1;
        const int64_t begin = int64_t(ts.tokens.size());
        ts.tokens.push_back(st.start_id(p));
        for (int64_t i = 0; i < body_len; ++i) ts.tokens.push_back(base_token());
        ts.tokens.push_back(st.end_id(p));
        ts.spans.push_back({begin, int64_t(ts.tokens.size())});
    }
    const int64_t begin = int64_t(ts.tokens.size());
    ts.tokens.push_back(cfg.answer_start_id);
    ts.tokens.push_back(base_token());
    ts.tokens.push_back(cfg.eos_id);
    ts.spans.push_back({begin, int64_t(ts.tokens.size())});
    return ts;
}

// planted-style annotation straight from the generator, no clustering involved
std::vector<TrainSequence> grammar_sequences(uint64_t seed, int64_t n, const Vocab& v,
                                             const ModelConfig& cfg) {
    std::vector<std::vector<int64_t>> styles;
    auto corpus = synth_corpus(seed, n, {}, &styles);
    const std::unordered_set<int64_t> transitions = {v.id("wait"), v.id("hmm"),
                                                     v.id("alternatively"), v.id("maybe")};
    const std::unordered_set<int64_t> delims = {v.id(".")};
    std::vector<TrainSequence> out;
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto toks = v.encode(corpus[i].thinking);
        const auto spans = segment_thinking(toks, transitions, delims);
        AnnotatedSample a;
        a.query = corpus[i].query;
        a.answer = corpus[i].answer;
        for (size_t sp = 0; sp < spans.size(); ++sp) {
            std::vector<int64_t> body(toks.begin() + spans[sp].begin,
                                      toks.begin() + spans[sp].end);
            a.steps.push_back({styles[i][sp], v.decode(body)});
        }
        out.push_back(build_train_sequence(a, v, cfg));
    }
    return out;
}

ModelConfig grammar_config(const Vocab& v) {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_base = v.size();
    cfg.patterns = 4;
    cfg.rank_la = 2;
    cfg.rank_gate = 2;
    cfg.seed = 2002;
    return cfg;
}

}  // namespace

TEST_CASE("the language loss counts only post-prompt targets") {
    // 4 tokens, vocab 3, prompt 2: targets are tokens[2] and tokens[3]
    Tensor logits({4, 3}, 0.0);
    const double vals[4][3] = {{9, 9, 9}, {1, 2, 0}, {0, 1, 3}, {2, 2, 2}};
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 3; ++j) logits.at(i, j) = vals[i][j];
    const std::vector<int64_t> tokens = {0, 1, 2, 0};

    auto lse = [&](int64_t row) {
        double s = 0.0;
        for (int64_t j = 0; j < 3; ++j) s += std::exp(vals[row][j]);
        return std::log(s);
    };
    // logits row 1 predicts tokens[2]=2, row 2 predicts tokens[3]=0
    const double expected = -0.5 * ((vals[1][2] - lse(1)) + (vals[2][0] - lse(2)));

    Tensor loss = ar_loss(logits, tokens, 2, nullptr);
    CHECK(loss.at(0) == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(ar_loss(logits, tokens, 4, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(ar_loss(logits, tokens, 0, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(ar_loss(logits, {0, 1}, 1, nullptr), std::invalid_argument);
}

TEST_CASE("the distillation loss is a hand-checked KL and vanishes against itself") {
    Tensor a({3, 2}, 0.0);
    a.at(0, 0) = 0.3;
    a.at(1, 0) = 1.0;
    a.at(1, 1) = -1.0;
    a.at(2, 1) = 2.0;
    Tensor b = a.clone();
    const std::vector<int64_t> tokens = {0, 1, 0};

    CHECK(kd_loss(a, b, tokens, 1, nullptr).at(0) == 0.0);

    Tensor c = a.clone();
    c.at(1, 0) += 0.7;
    c.at(2, 1) -= 0.4;
    // rows 0 and 1 feed the two targets; KL per row computed by hand
    auto kl_row = [&](int64_t row) {
        double pa[2], pc[2];
        double za = 0.0, zc = 0.0;
        for (int64_t j = 0; j < 2; ++j) {
            pa[j] = std::exp(a.at(row, j));
            pc[j] = std::exp(c.at(row, j));
            za += pa[j];
            zc += pc[j];
        }
        double kl = 0.0;
        for (int64_t j = 0; j < 2; ++j) kl += (pa[j] / za) * std::log((pa[j] / za) / (pc[j] / zc));
        return kl;
    };
    const double expected = 0.5 * (kl_row(0) + kl_row(1));
    CHECK(kd_loss(c, a, tokens, 1, nullptr).at(0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(kd_loss(c, a, tokens, 1, nullptr).at(0) > 0.0);

    CHECK_THROWS_AS(kd_loss(a, Tensor({3, 3}, 0.0), tokens, 1, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(kd_loss(a, b, tokens, 3, nullptr), std::invalid_argument);
}

TEST_CASE("the optimizer matches a hand-stepped reference") {
    Tensor p({2}, 0.0);
    p.at(0) = 1.0;
    p.at(1) = -2.0;
    AdamW opt({&p}, 0.9, 0.999, 1e-8);

    Tensor g1({2}, 0.0);
    g1.at(0) = 0.5;
    g1.at(1) = -1.5;
    opt.step({g1}, 0.1);

    // first step: mhat = g, vhat = g^2, update = lr * g / (|g| + eps)
    double m0 = 0.1 * 0.5, v0 = 0.001 * 0.25;
    double x0 = 1.0 - 0.1 * (m0 / 0.1) / (std::sqrt(v0 / 0.001) + 1e-8);
    double m1 = 0.1 * -1.5, v1 = 0.001 * 2.25;
    double x1 = -2.0 - 0.1 * (m1 / 0.1) / (std::sqrt(v1 / 0.001) + 1e-8);
    CHECK(p.at(0) == doctest::Approx(x0).epsilon(1e-12));
    CHECK(p.at(1) == doctest::Approx(x1).epsilon(1e-12));

    Tensor g2({2}, 0.0);
    g2.at(0) = -0.25;
    g2.at(1) = 0.75;
    opt.step({g2}, 0.05);
    double m = 0.9 * m0 + 0.1 * -0.25;
    double v = 0.999 * v0 + 0.001 * 0.0625;
    double mhat = m / (1.0 - 0.81);
    double vhat = v / (1.0 - 0.999 * 0.999);
    double want = x0 - 0.05 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p.at(0) == doctest::Approx(want).epsilon(1e-10));

    CHECK_THROWS_AS(opt.step({g1, g2}, 0.1), std::invalid_argument);
}

TEST_CASE("the schedule warms up linearly and decays to zero") {
    const double lr = 2e-4;
    // 100 steps at ratio 0.03 -> 3 warmup steps
    CHECK(lr_at(0, 100, lr, 0.03) == doctest::Approx(lr / 3.0));
    CHECK(lr_at(1, 100, lr, 0.03) == doctest::Approx(2.0 * lr / 3.0));
    CHECK(lr_at(2, 100, lr, 0.03) == doctest::Approx(lr));
    CHECK(lr_at(3, 100, lr, 0.03) == doctest::Approx(lr).epsilon(1e-3));
    for (int64_t s = 3; s + 1 < 100; ++s) CHECK(lr_at(s + 1, 100, lr, 0.03) < lr_at(s, 100, lr, 0.03));
    CHECK(lr_at(99, 100, lr, 0.03) < 0.01 * lr);
    CHECK(lr_at(99, 100, lr, 0.03) > 0.0);
    CHECK_THROWS_AS(lr_at(100, 100, lr, 0.03), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(-1, 100, lr, 0.03), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(0, 0, lr, 0.03), std::invalid_argument);
}

TEST_CASE("a 200-step run leaves the frozen weights bit-identical") {
    Vocab v = Vocab::base();
    ModelConfig cfg = grammar_config(v);
    ModelWeights w = init_weights(cfg);
    auto data = grammar_sequences(73, 10, v, cfg);

    const uint64_t frozen_before = weights_checksum(frozen_tensors(w));
    const uint64_t trainable_before = weights_checksum(trainable_tensors(w));

    TrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 1;
    tc.report_path = "tmp_train_report.csv";
    TrainResult res = train(w, data, tc);

    CHECK(res.rows.size() == 200);
    CHECK(res.rows.front().step == 1);
    CHECK(res.rows.back().step == 200);
    CHECK(weights_checksum(frozen_tensors(w)) == frozen_before);
    CHECK(weights_checksum(trainable_tensors(w)) != trainable_before);

    std::ifstream f("tmp_train_report.csv");
    REQUIRE(bool(f));
    std::string line;
    int64_t lines = 0;
    while (std::getline(f, line)) ++lines;
    CHECK(lines == 201);  // header plus one row per step
    f.close();
    std::remove("tmp_train_report.csv");

    for (const auto& r : res.rows) {
        CHECK(std::isfinite(r.loss_ar));
        CHECK(std::isfinite(r.loss_kd));
        CHECK(r.loss_kd >= 0.0);
        CHECK(r.lr > 0.0);
    }
}

TEST_CASE("self-distillation in the compat shape is exactly zero") {
    Vocab v = Vocab::base();
    ModelConfig cfg = grammar_config(v);
    ModelWeights w = init_weights(cfg);
    liven(w, 404);
    auto data = grammar_sequences(74, 3, v, cfg);

    for (const auto& s : data) {
        ForwardOptions compat;
        compat.stepwise = true;
        compat.correction = false;
        compat.gate_zero = true;
        // one never-closed span: the segmented mask degenerates to plain causal
        TrainSequence whole = s;
        whole.spans = {{s.prompt_len, int64_t(s.tokens.size())}};
        SampleLosses L = sample_losses(w, whole, compat, 0.2, nullptr);
        CHECK(L.kd == 0.0);
        CHECK(L.ar > 0.0);
    }
}

TEST_CASE("gradients of both losses match central differences on every trainable") {
    ModelConfig cfg = train_config();
    ModelWeights w = init_weights(cfg);
    liven(w, 505);
    TrainSequence s = make_seq(cfg, 31, 2);

    ForwardOptions fopt;
    fopt.stepwise = true;
    fopt.correction = false;
    GradCheckResult res = grad_check(w, s, fopt);

    CHECK(res.entries.size() == size_t(8 * cfg.layers + 1));
    CHECK(res.frozen_off_tape);
    for (const auto& e : res.entries) {
        CAPTURE(e.name);
        CHECK(e.rel_ar < 1e-4);
        CHECK(e.rel_kd < 1e-4);
    }
    CHECK(res.worst < 1e-4);

    // corrections folded into the read weights stay differentiable too
    ForwardOptions fcorr = fopt;
    fcorr.correction = true;
    fcorr.alpha_max = 0.4;
    fcorr.t_max = 6;
    GradCheckResult rc = grad_check(w, s, fcorr);
    CHECK(rc.worst < 1e-4);
}

TEST_CASE("non-finite losses abort with a diagnostic snapshot") {
    Vocab v = Vocab::base();
    ModelConfig cfg = grammar_config(v);
    ModelWeights w = init_weights(cfg);
    auto data = grammar_sequences(75, 4, v, cfg);

    w.embed_special.at(0, 0) = std::numeric_limits<double>::infinity();
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 2;
    tc.diag_path = "tmp_train_diag.json";
    CHECK_THROWS_AS(train(w, data, tc), std::runtime_error);
    std::ifstream f("tmp_train_diag.json");
    CHECK(bool(f));
    f.close();
    std::remove("tmp_train_diag.json");
}

TEST_CASE("overlength samples are skipped, not trained on") {
    Vocab v = Vocab::base();
    ModelConfig cfg = grammar_config(v);
    ModelWeights w = init_weights(cfg);
    auto data = grammar_sequences(76, 6, v, cfg);

    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 4;
    tc.max_sample_len = int64_t(data[0].tokens.size());  // at least one survives
    TrainResult res = train(w, data, tc);
    int64_t usable = 0;
    for (const auto& s : data)
        if (int64_t(s.tokens.size()) <= tc.max_sample_len) ++usable;
    CHECK(res.skipped == int64_t(data.size()) - usable);
    CHECK(res.rows.size() == size_t((usable + 3) / 4));

    tc.max_sample_len = 1;
    CHECK_THROWS_AS(train(w, data, tc), std::invalid_argument);
}

TEST_CASE("pretraining the plain model reduces its language loss") {
    Vocab v = Vocab::base();
    ModelConfig cfg = grammar_config(v);
    cfg.d_model = 32;
    cfg.d_ff = 64;
    ModelWeights w = init_weights(cfg);

    auto corpus = synth_corpus(99, 40, {});
    std::vector<std::vector<int64_t>> seqs;
    for (const auto& s : corpus) {
        auto toks = v.encode(s.query + " " + s.thinking + " " + s.answer);
        toks.push_back(cfg.eos_id);
        seqs.push_back(toks);
    }

    const uint64_t frozen_before = weights_checksum(frozen_tensors(w));
    PretrainConfig pc;
    pc.epochs = 5;
    pc.batch_size = 8;
    pc.lr = 2e-3;
    TrainResult res = pretrain(w, seqs, pc);

    REQUIRE(res.rows.size() == 25);
    CHECK(weights_checksum(frozen_tensors(w)) != frozen_before);
    CHECK(res.rows.back().loss_ar < 0.7 * res.rows.front().loss_ar);
    CHECK(res.rows.back().loss_kd == 0.0);
}
