#include "stateformer/model_forward.hpp"

#include <stdexcept>
#include <string>

#include "stateformer/reasoning.hpp"

namespace stf {

std::vector<std::vector<double>> span_read_coefficients(int64_t num_spans, bool correction,
                                                        double alpha_max, int64_t t_max) {
    if (num_spans < 1) throw std::invalid_argument("span_read_coefficients: need at least one span");
    std::vector<std::vector<double>> coef(static_cast<size_t>(num_spans));
    std::vector<double> c;  // coefficients after the closes so far
    coef[0] = c;
    for (int64_t m = 1; m < num_spans; ++m) {
        // span m-1 closes as step m; reads inside span m see the result
        const double am = correction ? alpha_schedule(m, alpha_max, t_max) : 0.0;
        // the blended-in global direction is the mean of m-1 earlier deltas
        for (int64_t s = 0; s + 1 < m; ++s) c[size_t(s)] += am / double(m - 1);
        c.push_back(1.0 - am);
        coef[size_t(m)] = c;
    }
    return coef;
}

Tensor la_weight_matrix(int64_t prompt_len, const std::vector<Span>& spans, int64_t total_len,
                        bool correction, double alpha_max, int64_t t_max) {
    validate_spans(prompt_len, spans, total_len);
    const auto coef =
        span_read_coefficients(int64_t(spans.size()), correction, alpha_max, t_max);
    Tensor w({total_len, total_len}, 0.0);
    // prompt rows: plain strictly causal accumulation
    for (int64_t i = 0; i < prompt_len; ++i)
        for (int64_t j = 0; j < i; ++j) w.at(i, j) = 1.0;
    for (size_t t = 0; t < spans.size(); ++t) {
        for (int64_t i = spans[t].begin; i < spans[t].end; ++i) {
            for (int64_t j = 0; j < prompt_len; ++j) w.at(i, j) = 1.0;  // persists untouched
            for (int64_t j = spans[t].begin; j < i; ++j) w.at(i, j) = 1.0;  // pre-update read
            for (size_t s = 0; s < t; ++s) {
                const double c = coef[t][s];
                for (int64_t j = spans[s].begin; j < spans[s].end; ++j) w.at(i, j) = c;
            }
        }
    }
    return w;
}

namespace {

// per-head attention with an additive mask; q and k already rotated
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                        int64_t heads, int64_t d_head, Tape* tape) {
    std::vector<Tensor> outs;
    const double scl = 1.0 / std::sqrt(double(d_head));
    for (int64_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * d_head, (h + 1) * d_head, tape);
        Tensor kh = slice_cols(k, h * d_head, (h + 1) * d_head, tape);
        Tensor vh = slice_cols(v, h * d_head, (h + 1) * d_head, tape);
        Tensor scores = scale(matmul_nt(qh, kh, tape), scl, tape);
        Tensor p = softmax_rows(add(scores, mask, tape), tape);
        outs.push_back(matmul(p, vh, tape));
    }
    return concat_cols(outs, tape);
}

// parallel state path: ((q k^T) o W) v per head, W the scalar read weights
Tensor weighted_state_path(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& wread,
                           int64_t heads, int64_t d_head, Tape* tape) {
    std::vector<Tensor> outs;
    for (int64_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * d_head, (h + 1) * d_head, tape);
        Tensor kh = slice_cols(k, h * d_head, (h + 1) * d_head, tape);
        Tensor vh = slice_cols(v, h * d_head, (h + 1) * d_head, tape);
        Tensor scores = matmul_nt(qh, kh, tape);
        outs.push_back(matmul(mul(scores, wread, tape), vh, tape));
    }
    return concat_cols(outs, tape);
}

// frozen base plus the low-rank trainable delta
Tensor project_with_delta(const Tensor& x, const Tensor& base, const Tensor& down,
                          const Tensor& up, Tape* tape) {
    return add(matmul(x, base, tape), matmul(matmul(x, down, tape), up, tape), tape);
}

}  // namespace

Tensor model_forward(const ModelWeights& w, const std::vector<int64_t>& tokens,
                     int64_t prompt_len, const std::vector<Span>& spans,
                     const ForwardOptions& opt, Tape* tape, Tensor* final_hidden) {
    const ModelConfig& cfg = w.cfg;
    cfg.validate();
    const int64_t n = int64_t(tokens.size());
    if (n < 1) throw std::invalid_argument("model_forward: empty token sequence");
    if (prompt_len < 1 || prompt_len > n)
        throw std::invalid_argument("model_forward: prompt length " + std::to_string(prompt_len) +
                                    " outside sequence of " + std::to_string(n));
    for (int64_t id : tokens)
        if (id < 0 || id >= cfg.vocab_total())
            throw std::invalid_argument("model_forward: token id " + std::to_string(id) +
                                        " outside vocabulary of " +
                                        std::to_string(cfg.vocab_total()));
    const int64_t heads = cfg.heads, dh = cfg.d_head();

    Tensor mask;
    std::vector<int64_t> positions;
    Tensor wread;
    if (opt.stepwise) {
        mask = segmented_mask(prompt_len, spans, n);
        positions = steplocal_positions(prompt_len, spans, n);
        wread = la_weight_matrix(prompt_len, spans, n, opt.correction, opt.alpha_max, opt.t_max);
    } else {
        // plain causal: every j <= i
        mask = Tensor({n, n}, 0.0);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j) mask.at(i, j) = kMaskBlocked;
        positions.resize(size_t(n));
        for (int64_t i = 0; i < n; ++i) positions[size_t(i)] = i;
    }

    Tensor table = concat_rows(w.embed_base, w.embed_special, tape);
    Tensor x = gather_rows(table, tokens, tape);

    for (const LayerWeights& lw : w.layers) {
        Tensor hn = rmsnorm_rows(x, lw.attn_gain, tape);
        Tensor qb = matmul(hn, lw.wq, tape);
        Tensor kb = matmul(hn, lw.wk, tape);
        Tensor vb = matmul(hn, lw.wv, tape);
        Tensor qr = rope_rows(qb, positions, dh, cfg.rope_base, tape);
        Tensor kr = rope_rows(kb, positions, dh, cfg.rope_base, tape);
        Tensor sa = masked_attention(qr, kr, vb, mask, heads, dh, tape);

        Tensor mixed = sa;
        if (opt.stepwise) {
            // the state path reads the un-rotated projections plus deltas
            Tensor lq = project_with_delta(hn, lw.wq, lw.la_down_q, lw.la_up_q, tape);
            Tensor lk = project_with_delta(hn, lw.wk, lw.la_down_k, lw.la_up_k, tape);
            Tensor lv = project_with_delta(hn, lw.wv, lw.la_down_v, lw.la_up_v, tape);
            Tensor read = weighted_state_path(lq, lk, lv, wread, heads, dh, tape);
            if (!opt.gate_zero) {
                Tensor gate =
                    sigmoid(matmul(matmul(hn, lw.gate_down, tape), lw.gate_up, tape), tape);
                mixed = add(mul(gate, read, tape), sa, tape);
            }
        }
        x = add(x, matmul(mixed, lw.wo, tape), tape);

        Tensor fn = rmsnorm_rows(x, lw.ffn_gain, tape);
        Tensor act = mul(silu(matmul(fn, lw.w1, tape), tape), matmul(fn, lw.w3, tape), tape);
        x = add(x, matmul(act, lw.w2, tape), tape);
    }
    Tensor hn = rmsnorm_rows(x, w.final_gain, tape);
    if (final_hidden) {
        *final_hidden = hn.clone();
        final_hidden->node = -1;
        final_hidden->tape = nullptr;
    }
    return matmul(hn, w.head, tape);
}

}  // namespace stf
