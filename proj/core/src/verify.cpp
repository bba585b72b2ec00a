#include "stateformer/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "stateformer/bench.hpp"
#include "stateformer/cluster.hpp"
#include "stateformer/config.hpp"
#include "stateformer/engine.hpp"
#include "stateformer/model_forward.hpp"
#include "stateformer/sample.hpp"
#include "stateformer/train.hpp"

namespace stf {

namespace oracle {

namespace {
inline double phi(double x) { return x > 0.0 ? 1.0 + x : std::exp(x); }
}  // namespace

std::vector<std::vector<double>> kernelized_la(const std::vector<std::vector<double>>& q,
                                               const std::vector<std::vector<double>>& k,
                                               const std::vector<std::vector<double>>& v,
                                               bool left_assoc) {
    const size_t n = q.size();
    if (k.size() != n || v.size() != n || n == 0)
        throw std::invalid_argument("kernelized_la: row count mismatch");
    const size_t d = q[0].size();
    const size_t dv = v[0].size();
    std::vector<std::vector<double>> fq(n, std::vector<double>(d));
    std::vector<std::vector<double>> fk(n, std::vector<double>(d));
    for (size_t i = 0; i < n; ++i) {
        if (q[i].size() != d || k[i].size() != d || v[i].size() != dv)
            throw std::invalid_argument("kernelized_la: ragged rows");
        for (size_t j = 0; j < d; ++j) {
            fq[i][j] = phi(q[i][j]);
            fk[i][j] = phi(k[i][j]);
        }
    }
    std::vector<std::vector<double>> out(n, std::vector<double>(dv, 0.0));
    if (left_assoc) {
        // score matrix first: out_i = sum_j (fq_i . fk_j) v_j / sum_j (fq_i . fk_j)
        for (size_t i = 0; i < n; ++i) {
            double z = 0.0;
            for (size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (size_t a = 0; a < d; ++a) s += fq[i][a] * fk[j][a];
                z += s;
                for (size_t b = 0; b < dv; ++b) out[i][b] += s * v[j][b];
            }
            for (size_t b = 0; b < dv; ++b) out[i][b] /= z;
        }
    } else {
        // running state: M = sum fk^T v, zvec = sum fk
        std::vector<double> M(d * dv, 0.0), zvec(d, 0.0);
        for (size_t i = 0; i < n; ++i) {
            for (size_t a = 0; a < d; ++a) {
                zvec[a] += fk[i][a];
                for (size_t b = 0; b < dv; ++b) M[a * dv + b] += fk[i][a] * v[i][b];
            }
            double z = 0.0;
            for (size_t a = 0; a < d; ++a) z += fq[i][a] * zvec[a];
            for (size_t b = 0; b < dv; ++b) {
                double s = 0.0;
                for (size_t a = 0; a < d; ++a) s += fq[i][a] * M[a * dv + b];
                out[i][b] = s / z;
            }
        }
    }
    return out;
}

}  // namespace oracle

namespace {

struct Check {
    std::string name;
    std::function<std::string()> run;  // empty string means pass
};

std::string fail(const std::string& msg, double got) {
    std::ostringstream os;
    os << msg << " (got " << got << ")";
    return os.str();
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_base = 12;
    cfg.patterns = 3;
    cfg.rank_la = 4;
    cfg.rank_gate = 2;
    cfg.seed = 17;
    return cfg;
}

ModelWeights live_weights(const ModelConfig& cfg, uint64_t seed) {
    ModelWeights w = init_weights(cfg);
    Rng rng(seed);
    for (LayerWeights& l : w.layers)
        for (Tensor* up : {&l.la_up_q, &l.la_up_k, &l.la_up_v, &l.gate_up})
            for (int64_t i = 0; i < up->numel(); ++i) up->at(i) = 0.2 * rng.next_normal();
    return w;
}

struct Layout {
    std::vector<int64_t> tokens;
    int64_t prompt_len = 0;
    std::vector<Span> spans;
};

Layout random_layout(const ModelConfig& cfg, Rng& rng, int64_t steps) {
    const SpecialTokenTable table(cfg);
    Layout lay;
    const int64_t p = 3 + int64_t(rng.next_index(3));
    for (int64_t i = 0; i < p; ++i)
        lay.tokens.push_back(2 + int64_t(rng.next_index(size_t(cfg.vocab_base - 2))));
    lay.prompt_len = p;
    int64_t pat = 1 + int64_t(rng.next_index(size_t(cfg.patterns)));
    for (int64_t s = 0; s < steps; ++s) {
        const int64_t begin = int64_t(lay.tokens.size());
        lay.tokens.push_back(table.start_id(pat));
        const int64_t body = 1 + int64_t(rng.next_index(4));
        for (int64_t i = 0; i < body; ++i)
            lay.tokens.push_back(2 + int64_t(rng.next_index(size_t(cfg.vocab_base - 2))));
        lay.tokens.push_back(table.end_id(pat));
        lay.spans.push_back({begin, int64_t(lay.tokens.size())});
        pat = 1 + pat % cfg.patterns;
    }
    const int64_t abegin = int64_t(lay.tokens.size());
    lay.tokens.push_back(cfg.answer_start_id);
    lay.tokens.push_back(2 + int64_t(rng.next_index(size_t(cfg.vocab_base - 2))));
    lay.tokens.push_back(cfg.eos_id);
    lay.spans.push_back({abegin, int64_t(lay.tokens.size())});
    return lay;
}

double max_rel_logit_err(const std::vector<std::vector<double>>& eng, const Tensor& par) {
    double worst = 0.0;
    for (size_t i = 0; i < eng.size(); ++i)
        for (size_t j = 0; j < eng[i].size(); ++j) {
            const double a = eng[i][j], b = par.at(int64_t(i), int64_t(j));
            const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
            worst = std::max(worst, std::abs(a - b) / denom);
        }
    return worst;
}

// ---- individual checks ----

std::string check_state_recurrence() {
    Rng rng(11);
    const int64_t d = 6;
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t n = 4 + int64_t(rng.next_index(20));
        std::vector<std::vector<double>> q(static_cast<size_t>(n));
        std::vector<std::vector<double>> k(static_cast<size_t>(n));
        std::vector<std::vector<double>> v(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            q[size_t(i)].resize(size_t(d));
            k[size_t(i)].resize(size_t(d));
            v[size_t(i)].resize(size_t(d));
            for (int64_t j = 0; j < d; ++j) {
                q[size_t(i)][size_t(j)] = rng.next_normal();
                k[size_t(i)][size_t(j)] = rng.next_normal();
                v[size_t(i)][size_t(j)] = rng.next_normal();
            }
        }
        std::vector<double> S(static_cast<size_t>(d * d), 0.0);
        std::vector<double> o(static_cast<size_t>(d));
        for (int64_t i = 0; i < n; ++i) {
            state_read(q[size_t(i)].data(), S.data(), d, o.data());
            std::vector<double> ref(size_t(d), 0.0);
            for (int64_t j = 0; j < i; ++j) {
                double c = 0.0;
                for (int64_t a = 0; a < d; ++a) c += q[size_t(i)][size_t(a)] * k[size_t(j)][size_t(a)];
                for (int64_t b = 0; b < d; ++b) ref[size_t(b)] += c * v[size_t(j)][size_t(b)];
            }
            for (int64_t b = 0; b < d; ++b)
                if (std::abs(o[size_t(b)] - ref[size_t(b)]) > 1e-9)
                    return fail("recurrent read deviates from direct sum",
                                std::abs(o[size_t(b)] - ref[size_t(b)]));
            state_accumulate(S.data(), k[size_t(i)].data(), v[size_t(i)].data(), d);
        }
    }
    return "";
}

std::string check_rate_one_update() {
    Rng rng(12);
    const int64_t d = 8;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s0(static_cast<size_t>(d * d));
        std::vector<double> k(static_cast<size_t>(d));
        std::vector<double> v(static_cast<size_t>(d));
        for (auto& x : s0) x = rng.next_normal();
        for (auto& x : k) x = rng.next_normal();
        for (auto& x : v) x = rng.next_normal();
        std::vector<double> a = s0, b = s0;
        state_accumulate(a.data(), k.data(), v.data(), d);
        ttt_update(b.data(), k.data(), v.data(), 1.0, d);
        for (size_t i = 0; i < a.size(); ++i)
            if (a[i] != b[i]) return "rate-1 gradient step is not bit-identical to accumulation";
    }
    return "";
}

std::string check_kernelized_association() {
    Rng rng(13);
    const size_t n = 24, d = 6, dv = 5;
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (size_t i = 0; i < n; ++i) {
        q[i].resize(d);
        k[i].resize(d);
        v[i].resize(dv);
        for (auto& x : q[i]) x = rng.next_normal();
        for (auto& x : k[i]) x = rng.next_normal();
        for (auto& x : v[i]) x = rng.next_normal();
    }
    const auto left = oracle::kernelized_la(q, k, v, true);
    const auto right = oracle::kernelized_la(q, k, v, false);
    double worst = 0.0;
    for (size_t i = 0; i < n; ++i)
        for (size_t b = 0; b < dv; ++b)
            worst = std::max(worst, std::abs(left[i][b] - right[i][b]));
    if (worst > 1e-9) return fail("association orders disagree", worst);
    return "";
}

std::string check_segmented_mask() {
    const int64_t p = 3, n = 10;
    const std::vector<Span> spans{{3, 6}, {6, 10}};
    const Tensor mask = segmented_mask(p, spans, n);
    auto span_of = [&](int64_t i) -> int64_t {
        for (size_t s = 0; s < spans.size(); ++s)
            if (i >= spans[s].begin && i < spans[s].end) return int64_t(s);
        return -1;
    };
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            const bool allowed = j <= i && (j < p || span_of(j) == span_of(i));
            const double want = allowed ? 0.0 : kMaskBlocked;
            if (mask.at(i, j) != want) return "mask entry deviates from the attend rule";
        }
    return "";
}

std::string check_steplocal_positions() {
    const std::vector<int64_t> got = steplocal_positions(3, {{3, 6}, {6, 10}}, 10);
    const std::vector<int64_t> want{0, 1, 2, 3, 4, 5, 3, 4, 5, 6};
    if (got != want) return "positions deviate from the restart-at-prompt rule";
    return "";
}

std::string check_alpha_ramp() {
    if (alpha_schedule(1, 0.4, 40) != 1.0 / 40.0) return "alpha(1) wrong";
    if (alpha_schedule(16, 0.4, 40) != 0.4) return "alpha does not saturate at t = 16";
    if (alpha_schedule(400, 0.4, 40) != 0.4) return "alpha exceeds the cap";
    if (alpha_schedule(3, 1.0, 4) != 0.75) return "alpha ramp is not t / t_max";
    if (alpha_schedule(7, 0.0, 40) != 0.0) return "alpha_max = 0 must disable the blend";
    return "";
}

std::string check_span_coefficients() {
    // step s deposits exactly E_ss; the live diagonal then reads off every
    // coefficient after each close
    const int64_t S = 64;
    const double alpha_max = 0.4;
    const int64_t t_max = 10;
    const auto coef = span_read_coefficients(S, true, alpha_max, t_max);
    StateSet<double> st(1, 1, S);
    CorrectionConfig cc;
    cc.alpha_max = alpha_max;
    cc.t_max = t_max;
    StepLedger<double> ledger(cc, 1);
    for (int64_t s = 0; s + 1 < S; ++s) {
        ledger.begin_step(st);
        std::vector<double> k(static_cast<size_t>(S), 0.0), v(static_cast<size_t>(S), 0.0);
        k[size_t(s)] = 1.0;
        v[size_t(s)] = 1.0;
        state_accumulate(st.head_matrix(0, 0), k.data(), v.data(), S);
        ledger.end_step(st);
        const int64_t t = s + 2;  // reading from inside the next span
        for (int64_t r = 0; r <= s; ++r) {
            const double live = st.head_matrix(0, 0)[r * S + r];
            if (std::abs(live - coef[size_t(t - 1)][size_t(r)]) > 1e-9)
                return fail("closed-form coefficient deviates from the live ledger",
                            std::abs(live - coef[size_t(t - 1)][size_t(r)]));
        }
    }
    return "";
}

std::string check_correction_off_identity() {
    Rng rng(14);
    const int64_t d = 5;
    StateSet<double> live(1, 1, d), plain(1, 1, d);
    CorrectionConfig cc;
    cc.enabled = false;
    StepLedger<double> ledger(cc, 1);
    for (int step = 0; step < 6; ++step) {
        ledger.begin_step(live);
        for (int u = 0; u < 3; ++u) {
            std::vector<double> k(static_cast<size_t>(d));
            std::vector<double> v(static_cast<size_t>(d));
            for (auto& x : k) x = rng.next_normal();
            for (auto& x : v) x = rng.next_normal();
            state_accumulate(live.head_matrix(0, 0), k.data(), v.data(), d);
            state_accumulate(plain.head_matrix(0, 0), k.data(), v.data(), d);
        }
        ledger.end_step(live);
    }
    for (int64_t i = 0; i < d * d; ++i)
        if (live.head_matrix(0, 0)[i] != plain.head_matrix(0, 0)[i])
            return "disabled correction must leave the trajectory bit-identical";
    return "";
}

std::string check_duality_stepwise() {
    const ModelConfig cfg = small_config();
    const ModelWeights w = live_weights(cfg, 515);
    const EngineWeights<double> ew = EngineWeights<double>::from(w);
    Rng rng(21);
    for (int trial = 0; trial < 3; ++trial) {
        const Layout lay = random_layout(cfg, rng, 3);
        for (bool corr : {true, false}) {
            ForwardOptions fopt;
            fopt.stepwise = true;
            fopt.correction = corr;
            EngineOptions eopt;
            eopt.correction.enabled = corr;
            const Tensor par = model_forward(w, lay.tokens, lay.prompt_len, lay.spans, fopt);
            const auto eng = forced_forward(ew, eopt, lay.tokens, lay.prompt_len, lay.spans);
            const double err = max_rel_logit_err(eng, par);
            if (err > 1e-6) return fail("parallel and recurrent logits disagree", err);
        }
    }
    return "";
}

std::string check_duality_vanilla() {
    const ModelConfig cfg = small_config();
    const ModelWeights w = live_weights(cfg, 516);
    const EngineWeights<double> ew = EngineWeights<double>::from(w);
    Rng rng(22);
    const Layout lay = random_layout(cfg, rng, 3);
    const Tensor par =
        model_forward(w, lay.tokens, lay.prompt_len, lay.spans, ForwardOptions::vanilla());
    const auto eng =
        forced_forward(ew, EngineOptions::vanilla(), lay.tokens, lay.prompt_len, lay.spans);
    const double err = max_rel_logit_err(eng, par);
    if (err > 1e-9) return fail("vanilla parallel and recurrent logits disagree", err);
    return "";
}

std::string check_compat_identity() {
    const ModelConfig cfg = small_config();
    const ModelWeights w = live_weights(cfg, 517);
    const EngineWeights<double> ew = EngineWeights<double>::from(w);
    DecodePolicy greedy;
    greedy.kind = DecodePolicy::Kind::greedy;
    Rng rng(23);
    for (int trial = 0; trial < 2; ++trial) {
        std::vector<int64_t> prompt;
        for (int i = 0; i < 4; ++i)
            prompt.push_back(2 + int64_t(rng.next_index(size_t(cfg.vocab_base - 2))));
        const auto a = generate_free(ew, EngineOptions::vanilla(), prompt, 24, greedy);
        const auto b = generate_free(ew, EngineOptions::compat(), prompt, 24, greedy);
        if (a != b) return "silenced state path must reproduce the vanilla tokens";
    }
    return "";
}

std::string check_ar_loss_value() {
    // 4 tokens, vocab 3, prompt 2: rows 1 and 2 predict tokens 2 and 3
    const std::vector<int64_t> tokens{0, 1, 2, 0};
    Tensor logits({4, 3}, std::vector<double>{0.3, -0.1, 0.2,  //
                                              1.0, 0.5, -0.5,  //
                                              -0.2, 0.1, 0.4,  //
                                              0.0, 0.0, 0.0});
    auto logsm = [&](int64_t row, int64_t idx) {
        double m = logits.at(row, 0);
        for (int64_t j = 1; j < 3; ++j) m = std::max(m, logits.at(row, j));
        double z = 0.0;
        for (int64_t j = 0; j < 3; ++j) z += std::exp(logits.at(row, j) - m);
        return logits.at(row, idx) - m - std::log(z);
    };
    const double want = -(logsm(1, 2) + logsm(2, 0)) / 2.0;
    const Tensor got = ar_loss(logits, tokens, 2, nullptr);
    if (std::abs(got.at(0) - want) > 1e-12) return fail("mean NLL deviates", got.at(0) - want);
    return "";
}

std::string check_self_distillation_zero() {
    Rng rng(24);
    Tensor logits({5, 7});
    for (int64_t i = 0; i < logits.numel(); ++i) logits.at(i) = rng.next_normal();
    const std::vector<int64_t> tokens{1, 2, 3, 4, 5};
    const Tensor kd = kd_loss(logits, logits, tokens, 2, nullptr);
    if (kd.at(0) != 0.0) return fail("KL of a distribution against itself must be exactly 0", kd.at(0));
    return "";
}

std::string check_adam_hand_step() {
    Tensor p({2}, std::vector<double>{1.0, -2.0});
    AdamW opt({&p});
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
    double m0 = 0.0, v0 = 0.0, m1 = 0.0, v1 = 0.0;
    double x0 = 1.0, x1 = -2.0;
    auto ref_step = [&](double g0, double g1, int t) {
        m0 = b1 * m0 + (1 - b1) * g0;
        v0 = b2 * v0 + (1 - b2) * g0 * g0;
        m1 = b1 * m1 + (1 - b1) * g1;
        v1 = b2 * v1 + (1 - b2) * g1 * g1;
        const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
        x0 -= lr * (m0 / c1) / (std::sqrt(v0 / c2) + eps);
        x1 -= lr * (m1 / c1) / (std::sqrt(v1 / c2) + eps);
    };
    opt.step({Tensor({2}, std::vector<double>{0.5, -1.0})}, lr);
    ref_step(0.5, -1.0, 1);
    opt.step({Tensor({2}, std::vector<double>{-0.25, 0.75})}, lr);
    ref_step(-0.25, 0.75, 2);
    if (std::abs(p.at(0) - x0) > 1e-12 || std::abs(p.at(1) - x1) > 1e-12)
        return "moment estimates deviate from the hand-stepped reference";
    return "";
}

std::string check_lr_schedule() {
    const int64_t total = 100;
    const double lr = 2e-4;
    const double peak = lr_at(2, total, lr, 0.03);  // warmup = ceil(3) steps, 0-based step 2
    if (peak != lr) return "warmup must reach lr_max at its last step";
    if (!(lr_at(0, total, lr, 0.03) < lr_at(1, total, lr, 0.03))) return "warmup must ramp";
    for (int64_t s = 3; s < total; ++s)
        if (!(lr_at(s, total, lr, 0.03) <= lr_at(s - 1, total, lr, 0.03)))
            return "decay must be monotone";
    const double last = lr_at(total - 1, total, lr, 0.03);
    if (!(last > 0.0 && last < 0.01 * lr)) return fail("cosine tail is off", last);
    return "";
}

std::string check_gradient_spot() {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.d_ff = 16;
    cfg.vocab_base = 12;
    cfg.patterns = 2;
    cfg.rank_la = 2;
    cfg.rank_gate = 2;
    cfg.t_max = 6;
    cfg.seed = 99;
    ModelWeights w = live_weights(cfg, 909);
    const SpecialTokenTable table(cfg);
    TrainSequence s;
    s.tokens = {2, 3, 4};
    s.prompt_len = 3;
    auto step = [&](int64_t pat, std::vector<int64_t> body) {
        const int64_t begin = int64_t(s.tokens.size());
        s.tokens.push_back(table.start_id(pat));
        for (int64_t b : body) s.tokens.push_back(b);
        s.tokens.push_back(table.end_id(pat));
        s.spans.push_back({begin, int64_t(s.tokens.size())});
    };
    step(1, {5, 6});
    step(2, {7});
    const int64_t abegin = int64_t(s.tokens.size());
    s.tokens.push_back(cfg.answer_start_id);
    s.tokens.push_back(8);
    s.tokens.push_back(cfg.eos_id);
    s.spans.push_back({abegin, int64_t(s.tokens.size())});
    ForwardOptions fopt;
    fopt.stepwise = true;
    fopt.correction = true;
    fopt.t_max = cfg.t_max;
    const GradCheckResult r = grad_check(w, s, fopt);
    if (!r.frozen_off_tape) return "frozen tensors leaked onto the training tape";
    if (r.worst >= 1e-4) return fail("worst relative gradient error at " + r.worst_name, r.worst);
    return "";
}

std::string check_grammar_answers() {
    GrammarParams gp;
    const auto corpus = synth_corpus(31, 50, gp);
    for (const auto& s : corpus) {
        const int64_t truth = eval_query(s.query, gp.modulus);
        const int64_t stated = parse_answer_value(s.answer);
        if (stated < 0 || stated != truth) return "a generated answer contradicts its query";
    }
    return "";
}

std::string check_transition_ranking() {
    const Vocab vocab = Vocab::base();
    GrammarParams gp;
    const auto corpus = synth_corpus(32, 150, gp);
    std::vector<std::vector<int64_t>> thinking;
    for (const auto& s : corpus) thinking.push_back(vocab.encode(s.thinking));
    NgramScorer scorer;
    scorer.fit(thinking);
    const std::unordered_set<int64_t> delims{vocab.id(".")};
    const auto got = extract_transition_tokens(thinking, scorer, delims, 0.8, 3);
    const std::unordered_set<int64_t> want{vocab.id("wait"), vocab.id("hmm"),
                                           vocab.id("alternatively"), vocab.id("maybe")};
    if (got.size() != want.size()) return fail("marker count off", double(got.size()));
    for (int64_t id : got)
        if (!want.count(id)) return "a non-marker token outranked the step openers";
    return "";
}

std::string check_segmentation_round_trip() {
    const Vocab vocab = Vocab::base();
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_base = int64_t(vocab.size());
    cfg.patterns = 2;
    cfg.rank_la = 2;
    cfg.rank_gate = 2;
    cfg.seed = 7;
    const ModelWeights w = init_weights(cfg);
    Rng rng(33);
    ClusterModel m;
    m.k = 2;
    m.seed = 33;
    for (int c = 0; c < 2; ++c) {
        std::vector<double> cen(static_cast<size_t>(cfg.d_model));
        double nrm = 0.0;
        for (auto& x : cen) {
            x = rng.next_normal();
            nrm += x * x;
        }
        nrm = std::sqrt(nrm);
        for (auto& x : cen) x /= nrm;
        m.centroids.push_back(cen);
    }
    GrammarParams gp;
    const auto corpus = synth_corpus(34, 20, gp);
    const std::unordered_set<int64_t> delims{vocab.id(".")};
    const std::unordered_set<int64_t> marks{vocab.id("wait"), vocab.id("hmm"),
                                            vocab.id("alternatively"), vocab.id("maybe")};
    for (const auto& s : corpus) {
        const auto toks = vocab.encode(s.thinking);
        const auto spans = segment_thinking(toks, marks, delims);
        const AnnotatedSample a = annotate(s, toks, spans, m, w, vocab);
        if (strip_annotations(a) != s.thinking) return "annotation does not strip back to the source";
    }
    return "";
}

std::string check_train_sequence_shape() {
    const Vocab vocab = Vocab::base();
    ModelConfig cfg;
    cfg.vocab_base = int64_t(vocab.size());
    cfg.patterns = 4;
    const SpecialTokenTable table(cfg);
    AnnotatedSample a;
    a.query = "compute 3 plus 4 times 2 .";
    a.steps.push_back({1, "now 3 plus 4 gives 7 ."});
    a.steps.push_back({3, "so far value stands at 7 ."});
    a.answer = "thus answer is 14 .";
    const TrainSequence s = build_train_sequence(a, vocab, cfg);
    validate_spans(s.prompt_len, s.spans, int64_t(s.tokens.size()));
    if (s.spans.size() != 3) return "span count off";
    for (size_t i = 0; i < a.steps.size(); ++i) {
        const Span sp = s.spans[i];
        if (s.tokens[size_t(sp.begin)] != table.start_id(a.steps[i].pattern) ||
            s.tokens[size_t(sp.end - 1)] != table.end_id(a.steps[i].pattern))
            return "step enclosure tokens are off";
    }
    const Span last = s.spans.back();
    if (s.tokens[size_t(last.begin)] != cfg.answer_start_id || s.tokens.back() != cfg.eos_id)
        return "answer region must open at the marker and end at eos";
    return "";
}

std::string check_kmeans_blobs() {
    Rng rng(35);
    const size_t d = 6;
    std::vector<std::vector<double>> centers;
    for (int b = 0; b < 3; ++b) {
        std::vector<double> c(d);
        double nrm = 0.0;
        for (auto& x : c) {
            x = rng.next_normal();
            nrm += x * x;
        }
        nrm = std::sqrt(nrm);
        for (auto& x : c) x /= nrm;
        centers.push_back(c);
    }
    std::vector<std::vector<double>> pts;
    std::vector<int64_t> truth;
    for (int b = 0; b < 3; ++b)
        for (int i = 0; i < 20; ++i) {
            std::vector<double> p(d);
            double nrm = 0.0;
            for (size_t j = 0; j < d; ++j) {
                p[j] = centers[size_t(b)][j] + 0.03 * rng.next_normal();
                nrm += p[j] * p[j];
            }
            nrm = std::sqrt(nrm);
            for (auto& x : p) x /= nrm;
            pts.push_back(p);
            truth.push_back(b + 1);
        }
    KmeansOptions ko;
    ko.k = 3;
    ko.seed = 41;
    const KmeansResult r = minibatch_kmeans(pts, ko);
    std::vector<int64_t> assigned;
    for (int64_t a : r.assignment) assigned.push_back(a + 1);
    if (pattern_agreement(truth, assigned, 3) != 1.0) return "planted blobs were not recovered";
    for (size_t i = 1; i < r.objective_history.size(); ++i)
        if (r.objective_history[i] > r.objective_history[i - 1] + 1e-12)
            return "full-pass objective increased";
    if (std::abs(r.inertia - r.objective_history.back()) > 1e-12)
        return "reported inertia deviates from the last pass";
    return "";
}

std::string check_reward_bounds() {
    Rng rng(36);
    StateSet<double> st(2, 1, 4);
    CorrectionConfig cc;
    StepLedger<double> ledger(cc, 2);
    for (int step = 0; step < 25; ++step) {
        ledger.begin_step(st);
        for (int layer = 0; layer < 2; ++layer)
            for (int u = 0; u < 2; ++u) {
                std::vector<double> k(4), v(4);
                for (auto& x : k) x = rng.next_normal();
                for (auto& x : v) x = rng.next_normal();
                state_accumulate(st.head_matrix(layer, 0), k.data(), v.data(), 4);
            }
        const StepInfo info = ledger.end_step(st);
        if (!(info.reward >= -1.0 && info.reward <= 1.0))
            return fail("reward escaped [-1, 1]", info.reward);
    }
    return "";
}

std::string check_prune_rule() {
    const std::vector<double> rewards{0.9, 0.1, 0.5, 0.1};
    const auto keep3 = prune_keep_indices(rewards, 0.75);
    if (keep3 != std::vector<int64_t>{0, 1, 2}) return "tie handling must keep the earlier step";
    const auto keep1 = prune_keep_indices(rewards, 0.25);
    if (keep1 != std::vector<int64_t>{0}) return "keep fraction rounds up";
    return "";
}

std::string check_trace_round_trip() {
    GenerationTrace t;
    t.prompt = {9, 33, 2, 35, 30};
    t.answer = {1, 28, 29, 45, 30, 0};
    t.sampled = true;
    t.correction = true;
    t.diversity = false;
    t.alpha_max = 0.4;
    t.t_max = 40;
    t.seed = 77;
    t.answer_forced = false;
    t.answer_truncated = true;
    TraceStep s;
    s.step_index = 1;
    s.pattern = 2;
    s.tokens = {52, 10, 31, 30, 53};
    s.alpha = 0.025;
    s.raw_delta_norm = 1.25;
    s.reward = -0.5;
    s.cache_peak = 12;
    s.ms = 0.125;
    s.truncated = true;
    t.steps.push_back(s);
    const GenerationTrace r = trace_from_json(trace_to_json(t));
    if (r.prompt != t.prompt || r.answer != t.answer || r.steps.size() != 1)
        return "token fields did not survive the round trip";
    const TraceStep& q = r.steps[0];
    if (q.tokens != s.tokens || q.step_index != s.step_index || q.pattern != s.pattern ||
        q.truncated != s.truncated || q.cache_peak != s.cache_peak)
        return "step fields did not survive the round trip";
    if (std::abs(q.alpha - s.alpha) > 1e-12 || std::abs(q.reward - s.reward) > 1e-12 ||
        std::abs(q.raw_delta_norm - s.raw_delta_norm) > 1e-12 || std::abs(q.ms - s.ms) > 1e-12)
        return "numeric fields did not survive the round trip";
    if (r.sampled != t.sampled || r.correction != t.correction || r.diversity != t.diversity ||
        r.seed != t.seed || r.t_max != t.t_max || r.answer_forced != t.answer_forced ||
        r.answer_truncated != t.answer_truncated || std::abs(r.alpha_max - t.alpha_max) > 1e-12)
        return "run fields did not survive the round trip";
    return "";
}

std::string check_checkpoint_round_trip() {
    ModelConfig cfg = small_config();
    ModelWeights w = live_weights(cfg, 518);
    const auto path =
        (std::filesystem::temp_directory_path() / "runtime_verify_weights.json").string();
    save_weights(path, w);
    ModelWeights r = load_weights(path);
    std::filesystem::remove(path);
    if (weights_checksum(trainable_tensors(w)) != weights_checksum(trainable_tensors(r)))
        return "trainable tensors changed across save/load";
    if (weights_checksum(frozen_tensors(w)) != weights_checksum(frozen_tensors(r)))
        return "frozen tensors changed across save/load";
    return "";
}

std::string check_checksum_determinism() {
    const ModelConfig cfg = small_config();
    ModelWeights a = init_weights(cfg);
    ModelWeights b = init_weights(cfg);
    if (weights_checksum(frozen_tensors(a)) != weights_checksum(frozen_tensors(b)))
        return "same seed must give the same checksum";
    ModelConfig cfg2 = cfg;
    cfg2.seed = cfg.seed + 1;
    ModelWeights c = init_weights(cfg2);
    if (weights_checksum(frozen_tensors(a)) == weights_checksum(frozen_tensors(c)))
        return "different seeds must give different checksums";
    return "";
}

std::string check_flops_counter() {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_base = 12;
    cfg.patterns = 2;
    cfg.rank_la = 2;
    cfg.rank_gate = 2;
    cfg.seed = 3;
    const ModelWeights w = init_weights(cfg);
    const EngineWeights<double> ew = EngineWeights<double>::from(w);
    const int64_t P = 5, B = 4, target = 23;
    std::vector<int64_t> prompt;
    for (int64_t i = 0; i < P; ++i) prompt.push_back(2 + (i % 3));
    {
        PerfStats stats;
        EngineOptions opt;  // stepwise
        GenerationContext<double> ctx(ew, opt, &stats);
        ctx.prefill(prompt);
        while (ctx.tokens_processed() < target) {
            ctx.open_step();
            const int64_t room = target - ctx.tokens_processed();
            for (int64_t i = 0; i < std::min(B, room); ++i) ctx.push(2 + (i % 3));
            ctx.close_step();
        }
        if (stats.attention_macs != attention_macs_analytic(cfg, true, P, B, target))
            return "stepwise closed form deviates from the instrumented counter";
    }
    {
        PerfStats stats;
        GenerationContext<double> ctx(ew, EngineOptions::vanilla(), &stats);
        ctx.prefill(prompt);
        while (ctx.tokens_processed() < target) ctx.push(2);
        if (stats.attention_macs != attention_macs_analytic(cfg, false, P, B, target))
            return "full-attention closed form deviates from the instrumented counter";
    }
    return "";
}

std::string check_config_round_trip() {
    const std::string text =
        "top = 1  # comment\n"
        "[model]\n"
        "layers = 2\n"
        "lr = 0.0002\n"
        "name = \"tiny\"\n"
        "flag = true\n"
        "lengths = [512, 1024]\n";
    const ConfigFile cfg = ConfigFile::parse(text);
    if (cfg.get_int("", "top", 0) != 1) return "sectionless key lost";
    if (cfg.get_int("model", "layers", 0) != 2) return "integer lost";
    if (cfg.get_double("model", "lr", 0.0) != 0.0002) return "float lost";
    if (cfg.get_string("model", "name", "") != "tiny") return "string lost";
    if (!cfg.get_bool("model", "flag", false)) return "bool lost";
    if (cfg.get_int_list("model", "lengths", {}) != std::vector<int64_t>{512, 1024})
        return "array lost";
    const std::string once = cfg.render();
    if (ConfigFile::parse(once).render() != once) return "render is not a fixed point";
    try {
        ConfigFile::parse("key value\n");
        return "malformed line must throw";
    } catch (const std::invalid_argument&) {
    }
    return "";
}

std::string check_special_token_ids() {
    ModelConfig cfg;
    cfg.vocab_base = 50;
    cfg.patterns = 4;
    const SpecialTokenTable table(cfg);
    for (int64_t p = 1; p <= cfg.patterns; ++p) {
        if (table.start_id(p) != cfg.vocab_base + 2 * (p - 1)) return "start id layout off";
        if (table.end_id(p) != table.start_id(p) + 1) return "end id layout off";
    }
    if (cfg.vocab_total() != 58) return "vocab total off";
    return "";
}

}  // namespace

std::vector<VerifyResult> run_verify_suite() {
    const std::vector<Check> checks{
        {"state-recurrence-matches-direct-sum", check_state_recurrence},
        {"rate-one-update-bit-identical", check_rate_one_update},
        {"kernelized-read-association-free", check_kernelized_association},
        {"segmented-mask-attend-rule", check_segmented_mask},
        {"step-local-position-restart", check_steplocal_positions},
        {"correction-ramp-values", check_alpha_ramp},
        {"span-coefficients-match-ledger", check_span_coefficients},
        {"correction-off-bit-identical", check_correction_off_identity},
        {"parallel-matches-recurrent-stepwise", check_duality_stepwise},
        {"parallel-matches-recurrent-vanilla", check_duality_vanilla},
        {"silenced-state-path-matches-vanilla", check_compat_identity},
        {"next-token-loss-hand-value", check_ar_loss_value},
        {"self-distillation-exactly-zero", check_self_distillation_zero},
        {"optimizer-matches-hand-steps", check_adam_hand_step},
        {"warmup-cosine-schedule-shape", check_lr_schedule},
        {"analytic-gradients-match-finite-differences", check_gradient_spot},
        {"generated-answers-check-out", check_grammar_answers},
        {"transition-ranking-finds-step-openers", check_transition_ranking},
        {"annotation-strips-back-to-source", check_segmentation_round_trip},
        {"train-sequence-enclosures", check_train_sequence_shape},
        {"clustering-recovers-planted-blobs", check_kmeans_blobs},
        {"step-rewards-bounded", check_reward_bounds},
        {"prune-keeps-highest-rewards", check_prune_rule},
        {"trace-json-round-trip", check_trace_round_trip},
        {"weights-survive-save-load", check_checkpoint_round_trip},
        {"weight-checksums-deterministic", check_checksum_determinism},
        {"attention-cost-counter-matches-closed-form", check_flops_counter},
        {"config-parse-render-round-trip", check_config_round_trip},
        {"enclosure-token-id-layout", check_special_token_ids},
    };
    std::vector<VerifyResult> out;
    for (const Check& c : checks) {
        VerifyResult r;
        r.name = c.name;
        try {
            r.detail = c.run();
            r.ok = r.detail.empty();
        } catch (const std::exception& e) {
            r.ok = false;
            r.detail = std::string("exception: ") + e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

int print_verify_report(std::ostream& out) {
    const auto results = run_verify_suite();
    int failed = 0;
    for (const auto& r : results) {
        if (r.ok) {
            out << "ok " << r.name << "\n";
        } else {
            ++failed;
            out << "FAIL " << r.name << ": " << r.detail << "\n";
        }
    }
    out << results.size() - size_t(failed) << "/" << results.size() << " checks passed\n";
    return failed == 0 ? 0 : 1;
}

}  // namespace stf
