#pragma once

#include <cstdint>
#include <vector>

#include "stateformer/attention.hpp"
#include "stateformer/autodiff.hpp"
#include "stateformer/weights.hpp"

namespace stf {

struct ForwardOptions {
    bool stepwise = true;     // segmented mask, step-local positions, state path
    bool correction = true;   // span-delta corrections folded into the read weights
    double alpha_max = 0.4;
    int64_t t_max = 40;
    bool gate_zero = false;   // silence the state path (compat shape)

    static ForwardOptions vanilla() {
        ForwardOptions o;
        o.stepwise = false;
        o.correction = false;
        return o;
    }
};

// coef[t][s] (s < t): the weight carried by span s's state contribution when
// it is read from inside span t, after t closes with the ramping correction.
// With correction off every weight is exactly 1.
std::vector<std::vector<double>> span_read_coefficients(int64_t num_spans, bool correction,
                                                        double alpha_max, int64_t t_max);

// scalar weight matrix for the parallel state path: entry [i][j] is the
// coefficient of (k_j^T v_j) inside the state read at position i. Strictly
// causal (the read precedes the update), prompt contributions persist at 1,
// completed spans carry their correction coefficient.
Tensor la_weight_matrix(int64_t prompt_len, const std::vector<Span>& spans, int64_t total_len,
                        bool correction, double alpha_max, int64_t t_max);

// Parallel whole-sequence forward on the tape (pass nullptr for a frozen
// evaluation). Returns logits [n, vocab_total]. Stepwise mode reproduces the
// generation engine's per-token semantics; vanilla mode is the plain causal
// transformer the base weights were trained as.
// final_hidden (when given) receives a detached copy of the post-norm hidden
// rows feeding the output head.
Tensor model_forward(const ModelWeights& w, const std::vector<int64_t>& tokens,
                     int64_t prompt_len, const std::vector<Span>& spans,
                     const ForwardOptions& opt, Tape* tape = nullptr,
                     Tensor* final_hidden = nullptr);

}  // namespace stf
