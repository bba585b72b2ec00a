#pragma once

#include <functional>
#include <vector>

#include "stateformer/tensor.hpp"

namespace stf {

// Reverse-mode tape. One tape per forward pass: watch the parameters, run
// ops with the tape, call backward once on a scalar loss, read grads, drop
// the tape. Node order is creation order; backward runs it exactly reversed,
// so results are deterministic for a deterministic forward.
class Tape {
public:
    using BackFn = std::function<void(Tape&)>;

    // marks a leaf; idempotent for a tensor already on this tape
    int watch(Tensor& t);

    // records an op output together with its backward closure
    int record(Tensor& out, BackFn fn);

    // installs the closure after the node id is known
    void set_backfn(int node, BackFn fn);

    // seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
    // loss must be a scalar recorded on this tape.
    void backward(const Tensor& loss);

    // gradient of the last backward() w.r.t. t; zeros if none flowed
    Tensor grad(const Tensor& t) const;

    // gradient buffer for a node, created zero-filled on demand
    Tensor& grad_buf(int node, const std::vector<int64_t>& shape);
    const Tensor* grad_ptr(int node) const;

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        BackFn fn;  // empty for leaves
    };
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

// ops record onto `tape` when it is non-null and an input is on it;
// tape == nullptr is plain (detached) evaluation.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape = nullptr);  // [m,k]x[n,k]^T
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);  // elementwise
Tensor scale(const Tensor& a, double c, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& a, Tape* tape = nullptr);
Tensor silu(const Tensor& a, Tape* tape = nullptr);
Tensor rmsnorm_rows(const Tensor& x, const Tensor& gain, Tape* tape = nullptr);
Tensor softmax_rows(const Tensor& x, Tape* tape = nullptr);
Tensor log_softmax_rows(const Tensor& x, Tape* tape = nullptr);
Tensor concat_rows(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids, Tape* tape = nullptr);
Tensor pick_per_row(const Tensor& x, const std::vector<int64_t>& cols, Tape* tape = nullptr);
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1, Tape* tape = nullptr);
// column range [c0, c1) of a 2-d tensor
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1, Tape* tape = nullptr);
// horizontal concatenation of 2-d tensors with equal row counts
Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape = nullptr);
Tensor sum_rows(const Tensor& x, Tape* tape = nullptr);  // [n,d] -> [n,1]
Tensor sum_all(const Tensor& x, Tape* tape = nullptr);   // -> [1]
Tensor mean_all(const Tensor& x, Tape* tape = nullptr);  // -> [1]

// rotates each d_head-wide head slice of every row by its position angle;
// backward is the inverse rotation
Tensor rope_rows(const Tensor& x, const std::vector<int64_t>& positions, int64_t d_head,
                 double base = 10000.0, Tape* tape = nullptr);

// central difference (f(p+eps) - f(p-eps)) / (2 eps), one coordinate at a
// time; f re-runs the forward pass and must read `param` by reference
Tensor finite_diff_grad(const std::function<double()>& f, Tensor& param, double eps = 1e-5);

}  // namespace stf
