#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

#include "stateformer/perf.hpp"
#include "stateformer/tensor.hpp"

namespace stf {

// half-open token range [begin, end)
struct Span {
    int64_t begin = 0;
    int64_t end = 0;
    int64_t len() const { return end - begin; }
};

// contract: spans are non-empty, contiguous, start at prompt_len and end at
// total_len; throws std::invalid_argument otherwise
void validate_spans(int64_t prompt_len, const std::vector<Span>& spans, int64_t total_len);

// Additive attention mask [total_len x total_len]: 0 where allowed, -1e30
// where blocked. Position i attends j iff j <= i and (j < prompt_len or j is
// in i's span). A parallel forward under this mask reproduces generation
// with per-step eviction, self-attention included.
Tensor segmented_mask(int64_t prompt_len, const std::vector<Span>& spans, int64_t total_len);

constexpr double kMaskBlocked = -1e30;

// positions fed to the rotary encoding: prompt counts 0..P-1, every span
// restarts at P, so positions stay bounded by P + longest span
std::vector<int64_t> steplocal_positions(int64_t prompt_len, const std::vector<Span>& spans,
                                         int64_t total_len);

// ---- scalar-templated primitives used by the generation engine ----

// rotates the (2p, 2p+1) pairs of each d_head-wide head slice by pos*theta_p
template <class T>
void rope_inplace(T* row, int64_t heads, int64_t d_head, int64_t pos, double base = 10000.0) {
    const int64_t half = d_head / 2;
    for (int64_t p = 0; p < half; ++p) {
        const double a = double(pos) * std::pow(base, -2.0 * double(p) / double(d_head));
        const T c = T(std::cos(a)), s = T(std::sin(a));
        for (int64_t h = 0; h < heads; ++h) {
            T& x0 = row[h * d_head + 2 * p];
            T& x1 = row[h * d_head + 2 * p + 1];
            const T r0 = x0 * c - x1 * s;
            const T r1 = x0 * s + x1 * c;
            x0 = r0;
            x1 = r1;
        }
    }
}

// softmax attention of one query head over two cached segments (prompt then
// step), scores scaled by 1/sqrt(d_head); out receives the value mix.
// Rows are stride apart; the head slice starts at the given base pointers.
template <class T>
void softmax_attend(const T* q, int64_t d_head, int64_t stride, const T* ka, const T* va,
                    int64_t na, const T* kb, const T* vb, int64_t nb, T* out,
                    std::vector<T>& scores, PerfStats* stats = nullptr) {
    const int64_t n = na + nb;
    scores.resize(size_t(n));
    const T scl = T(1.0 / std::sqrt(double(d_head)));
    for (int64_t i = 0; i < na; ++i) {
        const T* kr = ka + i * stride;
        T s = T(0);
        for (int64_t j = 0; j < d_head; ++j) s += q[j] * kr[j];
        scores[size_t(i)] = s * scl;
    }
    for (int64_t i = 0; i < nb; ++i) {
        const T* kr = kb + i * stride;
        T s = T(0);
        for (int64_t j = 0; j < d_head; ++j) s += q[j] * kr[j];
        scores[size_t(na + i)] = s * scl;
    }
    T m = scores[0];
    for (int64_t i = 1; i < n; ++i) m = scores[size_t(i)] > m ? scores[size_t(i)] : m;
    T z = T(0);
    for (int64_t i = 0; i < n; ++i) {
        scores[size_t(i)] = std::exp(scores[size_t(i)] - m);
        z += scores[size_t(i)];
    }
    const T inv_z = T(1) / z;
    for (int64_t j = 0; j < d_head; ++j) out[j] = T(0);
    for (int64_t i = 0; i < na; ++i) {
        const T w = scores[size_t(i)] * inv_z;
        const T* vr = va + i * stride;
        for (int64_t j = 0; j < d_head; ++j) out[j] += w * vr[j];
    }
    for (int64_t i = 0; i < nb; ++i) {
        const T w = scores[size_t(na + i)] * inv_z;
        const T* vr = vb + i * stride;
        for (int64_t j = 0; j < d_head; ++j) out[j] += w * vr[j];
    }
    if (stats) stats->attention_macs += uint64_t(n) * uint64_t(d_head) * 2u;
}

// o = q S with the pre-update state: the current token's own (k, v) must be
// accumulated only after this read (reads are strictly causal)
template <class T>
void state_read(const T* q, const T* S, int64_t d, T* o) {
    for (int64_t j = 0; j < d; ++j) o[j] = T(0);
    for (int64_t i = 0; i < d; ++i) {
        const T qv = q[i];
        const T* row = S + i * d;
        for (int64_t j = 0; j < d; ++j) o[j] += qv * row[j];
    }
}

// S += k^T v (rank-1 accumulation)
template <class T>
void state_accumulate(T* S, const T* k, const T* v, int64_t d) {
    for (int64_t i = 0; i < d; ++i) {
        const T kv = k[i];
        T* row = S + i * d;
        for (int64_t j = 0; j < d; ++j) row[j] += kv * v[j];
    }
}

// One gradient step on the reconstruction objective L(S) = -<k S, v>:
// dL/dS = -(k^T v), so S' = S - rate * dL/dS. With rate == 1 this is
// bit-identical to state_accumulate.
template <class T>
void ttt_update(T* S, const T* k, const T* v, T rate, int64_t d) {
    for (int64_t i = 0; i < d; ++i) {
        const T kv = k[i];
        T* row = S + i * d;
        for (int64_t j = 0; j < d; ++j) {
            const T grad = -(kv * v[j]);
            row[j] = row[j] - rate * grad;
        }
    }
}

}  // namespace stf
