#include "stateformer/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace stf {

int Tape::watch(Tensor& t) {
    if (!t.defined()) throw std::invalid_argument("watch: undefined tensor");
    if (t.tape == this && t.node >= 0 && size_t(t.node) < nodes_.size()) return t.node;
    t.tape = this;
    t.node = int(nodes_.size());
    t.requires_grad = true;
    nodes_.push_back(Node{});
    grads_.emplace_back();
    return t.node;
}

int Tape::record(Tensor& out, BackFn fn) {
    out.tape = this;
    out.node = int(nodes_.size());
    nodes_.push_back(Node{std::move(fn)});
    grads_.emplace_back();
    return out.node;
}

void Tape::set_backfn(int node, BackFn fn) { nodes_.at(size_t(node)).fn = std::move(fn); }

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, shape " + loss.shape_str());
    if (loss.tape != this || loss.node < 0)
        throw std::invalid_argument("backward: loss is not recorded on this tape");
    for (auto& g : grads_) g = Tensor();
    grad_buf(loss.node, loss.shape()).at(0) = 1.0;  // d(loss)/d(loss)
    for (int i = loss.node; i >= 0; --i) {
        if (!grads_[size_t(i)].defined()) continue;  // nothing flowed here
        if (nodes_[size_t(i)].fn) nodes_[size_t(i)].fn(*this);
    }
}

Tensor Tape::grad(const Tensor& t) const {
    if (t.tape != this || t.node < 0)
        throw std::invalid_argument("grad: tensor is not recorded on this tape");
    const Tensor& g = grads_[size_t(t.node)];
    if (g.defined()) return g;
    return Tensor(t.shape(), 0.0);
}

Tensor& Tape::grad_buf(int node, const std::vector<int64_t>& shape) {
    Tensor& g = grads_.at(size_t(node));
    if (!g.defined()) g = Tensor(shape, 0.0);
    return g;
}

const Tensor* Tape::grad_ptr(int node) const {
    const Tensor& g = grads_.at(size_t(node));
    return g.defined() ? &g : nullptr;
}

namespace {

bool on_tape(const Tensor& t, Tape* tape) { return tape && t.tape == tape && t.node >= 0; }

void check_tape(const Tensor& t, Tape* tape, const char* op) {
    if (t.node >= 0 && t.tape && tape && t.tape != tape)
        throw std::invalid_argument(std::string(op) + ": input recorded on a different tape");
}

// assigns out.node first so the closure builder can embed it
template <class MakeFn>
void rec(Tape* tape, Tensor& out, MakeFn make) {
    tape->record(out, Tape::BackFn());
    tape->set_backfn(out.node, make(out.node));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() + " x " +
                                    b.shape_str());
    check_tape(a, tape, "matmul");
    check_tape(b, tape, "matmul");
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n}, 0.0);
    {
        const double* pa = a.data();
        const double* pb = b.data();
        double* pc = out.data();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p) {
                const double av = pa[i * k + p];
                const double* pbr = pb + p * n;
                double* pcr = pc + i * n;
                for (int64_t j = 0; j < n; ++j) pcr[j] += av * pbr[j];
            }
    }
    if (on_tape(a, tape) || on_tape(b, tape)) {
        const int na = on_tape(a, tape) ? a.node : -1;
        const int nb = on_tape(b, tape) ? b.node : -1;
        Tensor ac = a, bc = b;
        rec(tape, out, [&](int onode) {
            return [ac, bc, na, nb, onode, m, k, n](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                const double* g = go->data();
                if (na >= 0) {  // dA = dC * B^T
                    double* ga = t.grad_buf(na, ac.shape()).data();
                    const double* pb = bc.data();
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t p = 0; p < k; ++p) {
                            double s = 0.0;
                            const double* gr = g + i * n;
                            const double* br = pb + p * n;
                            for (int64_t j = 0; j < n; ++j) s += gr[j] * br[j];
                            ga[i * k + p] += s;
                        }
                }
                if (nb >= 0) {  // dB = A^T * dC
                    double* gb = t.grad_buf(nb, bc.shape()).data();
                    const double* pa = ac.data();
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t p = 0; p < k; ++p) {
                            const double av = pa[i * k + p];
                            const double* gr = g + i * n;
                            double* gbr = gb + p * n;
                            for (int64_t j = 0; j < n; ++j) gbr[j] += av * gr[j];
                        }
                }
            };
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
        throw std::invalid_argument("matmul_nt: incompatible shapes " + a.shape_str() + " x " +
                                    b.shape_str() + "^T");
    check_tape(a, tape, "matmul_nt");
    check_tape(b, tape, "matmul_nt");
    const int64_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out({m, n}, 0.0);
    {
        const double* pa = a.data();
        const double* pb = b.data();
        double* pc = out.data();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                double s = 0.0;
                const double* ar = pa + i * k;
                const double* br = pb + j * k;
                for (int64_t p = 0; p < k; ++p) s += ar[p] * br[p];
                pc[i * n + j] = s;
            }
    }
    if (on_tape(a, tape) || on_tape(b, tape)) {
        const int na = on_tape(a, tape) ? a.node : -1;
        const int nb = on_tape(b, tape) ? b.node : -1;
        Tensor ac = a, bc = b;
        rec(tape, out, [&](int onode) {
            return [ac, bc, na, nb, onode, m, k, n](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                const double* g = go->data();
                if (na >= 0) {  // dA = dC * B
                    double* ga = t.grad_buf(na, ac.shape()).data();
                    const double* pb = bc.data();
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < n; ++j) {
                            const double gv = g[i * n + j];
                            const double* br = pb + j * k;
                            double* gar = ga + i * k;
                            for (int64_t p = 0; p < k; ++p) gar[p] += gv * br[p];
                        }
                }
                if (nb >= 0) {  // dB = dC^T * A
                    double* gb = t.grad_buf(nb, bc.shape()).data();
                    const double* pa = ac.data();
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < n; ++j) {
                            const double gv = g[i * n + j];
                            const double* ar = pa + i * k;
                            double* gbr = gb + j * k;
                            for (int64_t p = 0; p < k; ++p) gbr[p] += gv * ar[p];
                        }
                }
            };
        });
    }
    return out;
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, Tape* tape, const char* name, Fwd fwd,
                          Bwd bwd) {
    check_same_shape(a, b, name);
    check_tape(a, tape, name);
    check_tape(b, tape, name);
    Tensor out(a.shape(), 0.0);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.at(i) = fwd(a.at(i), b.at(i));
    if (on_tape(a, tape) || on_tape(b, tape)) {
        const int na = on_tape(a, tape) ? a.node : -1;
        const int nb = on_tape(b, tape) ? b.node : -1;
        Tensor ac = a, bc = b;
        rec(tape, out, [&](int onode) {
            return [ac, bc, na, nb, onode, n, bwd](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor* ga = na >= 0 ? &t.grad_buf(na, ac.shape()) : nullptr;
                Tensor* gb = nb >= 0 ? &t.grad_buf(nb, bc.shape()) : nullptr;
                for (int64_t i = 0; i < n; ++i) {
                    double da, db;
                    bwd(ac.at(i), bc.at(i), go->at(i), da, db);
                    if (ga) ga->at(i) += da;
                    if (gb) gb->at(i) += db;
                }
            };
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    return binary_elementwise(
        a, b, tape, "add", [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
    return binary_elementwise(
        a, b, tape, "sub", [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    return binary_elementwise(
        a, b, tape, "mul", [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

Tensor scale(const Tensor& a, double c, Tape* tape) {
    check_tape(a, tape, "scale");
    Tensor out(a.shape(), 0.0);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * c;
    if (on_tape(a, tape)) {
        const int na = a.node;
        Tensor ac = a;
        rec(tape, out, [&](int onode) {
            return [ac, na, onode, n, c](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& ga = t.grad_buf(na, ac.shape());
                for (int64_t i = 0; i < n; ++i) ga.at(i) += go->at(i) * c;
            };
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& a, Tape* tape) {
    check_tape(a, tape, "sigmoid");
    Tensor out(a.shape(), 0.0);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.at(i) = 1.0 / (1.0 + std::exp(-a.at(i)));
    if (on_tape(a, tape)) {
        const int na = a.node;
        Tensor ac = a, oc = out;
        rec(tape, out, [&](int onode) {
            return [ac, oc, na, onode, n](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& ga = t.grad_buf(na, ac.shape());
                for (int64_t i = 0; i < n; ++i) {
                    const double y = oc.at(i);
                    ga.at(i) += go->at(i) * y * (1.0 - y);
                }
            };
        });
    }
    return out;
}

Tensor silu(const Tensor& a, Tape* tape) {
    check_tape(a, tape, "silu");
    Tensor out(a.shape(), 0.0);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double x = a.at(i);
        out.at(i) = x / (1.0 + std::exp(-x));
    }
    if (on_tape(a, tape)) {
        const int na = a.node;
        Tensor ac = a;
        rec(tape, out, [&](int onode) {
            return [ac, na, onode, n](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& ga = t.grad_buf(na, ac.shape());
                for (int64_t i = 0; i < n; ++i) {
                    const double x = ac.at(i);
                    const double s = 1.0 / (1.0 + std::exp(-x));
                    ga.at(i) += go->at(i) * s * (1.0 + x * (1.0 - s));
                }
            };
        });
    }
    return out;
}

Tensor rmsnorm_rows(const Tensor& x, const Tensor& gain, Tape* tape) {
    if (x.ndim() != 2 || gain.ndim() != 1 || gain.dim(0) != x.cols())
        throw std::invalid_argument("rmsnorm_rows: shapes " + x.shape_str() + ", " +
                                    gain.shape_str());
    check_tape(x, tape, "rmsnorm_rows");
    check_tape(gain, tape, "rmsnorm_rows");
    constexpr double kEps = 1e-6;
    const int64_t n = x.rows(), d = x.cols();
    Tensor out({n, d}, 0.0);
    std::vector<double> inv_r(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (int64_t j = 0; j < d; ++j) ss += x.at(i, j) * x.at(i, j);
        const double r = std::sqrt(ss / double(d) + kEps);
        inv_r[size_t(i)] = 1.0 / r;
        for (int64_t j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) * inv_r[size_t(i)] * gain.at(j);
    }
    if (on_tape(x, tape) || on_tape(gain, tape)) {
        const int nx = on_tape(x, tape) ? x.node : -1;
        const int ng = on_tape(gain, tape) ? gain.node : -1;
        Tensor xc = x, gc = gain;
        rec(tape, out, [&](int onode) {
            return [xc, gc, nx, ng, onode, n, d, inv_r](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor* gx = nx >= 0 ? &t.grad_buf(nx, xc.shape()) : nullptr;
                Tensor* gg = ng >= 0 ? &t.grad_buf(ng, gc.shape()) : nullptr;
                for (int64_t i = 0; i < n; ++i) {
                    const double ir = inv_r[size_t(i)];
                    if (gx) {
                        double dot = 0.0;
                        for (int64_t j = 0; j < d; ++j)
                            dot += go->at(i, j) * gc.at(j) * xc.at(i, j);
                        const double coef = dot * ir * ir * ir / double(d);
                        for (int64_t j = 0; j < d; ++j)
                            gx->at(i, j) += go->at(i, j) * gc.at(j) * ir - xc.at(i, j) * coef;
                    }
                    if (gg)
                        for (int64_t j = 0; j < d; ++j) gg->at(j) += go->at(i, j) * xc.at(i, j) * ir;
                }
            };
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& x, Tape* tape) {
    if (x.ndim() != 2) throw std::invalid_argument("softmax_rows: not 2-d, shape " + x.shape_str());
    check_tape(x, tape, "softmax_rows");
    const int64_t n = x.rows(), d = x.cols();
    if (d == 0) throw std::invalid_argument("softmax_rows: empty rows");
    Tensor out({n, d}, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        double m = x.at(i, 0);
        for (int64_t j = 1; j < d; ++j) m = std::max(m, x.at(i, j));
        double z = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double e = std::exp(x.at(i, j) - m);
            out.at(i, j) = e;
            z += e;
        }
        for (int64_t j = 0; j < d; ++j) out.at(i, j) /= z;
    }
    if (on_tape(x, tape)) {
        const int nx = x.node;
        Tensor oc = out;
        rec(tape, out, [&](int onode) {
            return [oc, nx, onode, n, d](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& gx = t.grad_buf(nx, oc.shape());
                for (int64_t i = 0; i < n; ++i) {
                    double dot = 0.0;
                    for (int64_t j = 0; j < d; ++j) dot += go->at(i, j) * oc.at(i, j);
                    for (int64_t j = 0; j < d; ++j)
                        gx.at(i, j) += oc.at(i, j) * (go->at(i, j) - dot);
                }
            };
        });
    }
    return out;
}

Tensor log_softmax_rows(const Tensor& x, Tape* tape) {
    if (x.ndim() != 2)
        throw std::invalid_argument("log_softmax_rows: not 2-d, shape " + x.shape_str());
    check_tape(x, tape, "log_softmax_rows");
    const int64_t n = x.rows(), d = x.cols();
    if (d == 0) throw std::invalid_argument("log_softmax_rows: empty rows");
    Tensor out({n, d}, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        double m = x.at(i, 0);
        for (int64_t j = 1; j < d; ++j) m = std::max(m, x.at(i, j));
        double z = 0.0;
        for (int64_t j = 0; j < d; ++j) z += std::exp(x.at(i, j) - m);
        const double lz = m + std::log(z);
        for (int64_t j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) - lz;
    }
    if (on_tape(x, tape)) {
        const int nx = x.node;
        Tensor oc = out;
        rec(tape, out, [&](int onode) {
            return [oc, nx, onode, n, d](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& gx = t.grad_buf(nx, oc.shape());
                for (int64_t i = 0; i < n; ++i) {
                    double s = 0.0;
                    for (int64_t j = 0; j < d; ++j) s += go->at(i, j);
                    for (int64_t j = 0; j < d; ++j)
                        gx.at(i, j) += go->at(i, j) - std::exp(oc.at(i, j)) * s;
                }
            };
        });
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
        throw std::invalid_argument("concat_rows: shapes " + a.shape_str() + ", " + b.shape_str());
    check_tape(a, tape, "concat_rows");
    check_tape(b, tape, "concat_rows");
    const int64_t ma = a.rows(), mb = b.rows(), d = a.cols();
    Tensor out({ma + mb, d}, 0.0);
    for (int64_t i = 0; i < ma; ++i)
        for (int64_t j = 0; j < d; ++j) out.at(i, j) = a.at(i, j);
    for (int64_t i = 0; i < mb; ++i)
        for (int64_t j = 0; j < d; ++j) out.at(ma + i, j) = b.at(i, j);
    if (on_tape(a, tape) || on_tape(b, tape)) {
        const int na = on_tape(a, tape) ? a.node : -1;
        const int nb = on_tape(b, tape) ? b.node : -1;
        Tensor ac = a, bc = b;
        rec(tape, out, [&](int onode) {
            return [ac, bc, na, nb, onode, ma, mb, d](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                if (na >= 0) {
                    Tensor& ga = t.grad_buf(na, ac.shape());
                    for (int64_t i = 0; i < ma; ++i)
                        for (int64_t j = 0; j < d; ++j) ga.at(i, j) += go->at(i, j);
                }
                if (nb >= 0) {
                    Tensor& gb = t.grad_buf(nb, bc.shape());
                    for (int64_t i = 0; i < mb; ++i)
                        for (int64_t j = 0; j < d; ++j) gb.at(i, j) += go->at(ma + i, j);
                }
            };
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids, Tape* tape) {
    if (table.ndim() != 2)
        throw std::invalid_argument("gather_rows: table not 2-d, shape " + table.shape_str());
    check_tape(table, tape, "gather_rows");
    const int64_t v = table.rows(), d = table.cols(), n = int64_t(ids.size());
    for (int64_t id : ids)
        if (id < 0 || id >= v)
            throw std::invalid_argument("gather_rows: id " + std::to_string(id) +
                                        " out of range [0, " + std::to_string(v) + ")");
    Tensor out({n, d}, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out.at(i, j) = table.at(ids[size_t(i)], j);
    if (on_tape(table, tape)) {
        const int nt = table.node;
        Tensor tc = table;
        std::vector<int64_t> idc = ids;
        rec(tape, out, [&](int onode) {
            return [tc, idc, nt, onode, n, d](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& gt = t.grad_buf(nt, tc.shape());
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gt.at(idc[size_t(i)], j) += go->at(i, j);
            };
        });
    }
    return out;
}

Tensor pick_per_row(const Tensor& x, const std::vector<int64_t>& cols, Tape* tape) {
    if (x.ndim() != 2 || int64_t(cols.size()) != x.rows())
        throw std::invalid_argument("pick_per_row: shape " + x.shape_str() + " vs " +
                                    std::to_string(cols.size()) + " indices");
    check_tape(x, tape, "pick_per_row");
    const int64_t n = x.rows(), d = x.cols();
    for (int64_t c : cols)
        if (c < 0 || c >= d) throw std::invalid_argument("pick_per_row: column out of range");
    Tensor out({n, 1}, 0.0);
    for (int64_t i = 0; i < n; ++i) out.at(i) = x.at(i, cols[size_t(i)]);
    if (on_tape(x, tape)) {
        const int nx = x.node;
        Tensor xc = x;
        std::vector<int64_t> cc = cols;
        rec(tape, out, [&](int onode) {
            return [xc, cc, nx, onode, n](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& gx = t.grad_buf(nx, xc.shape());
                for (int64_t i = 0; i < n; ++i) gx.at(i, cc[size_t(i)]) += go->at(i);
            };
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1, Tape* tape) {
    if (x.ndim() != 2 || r0 < 0 || r1 < r0 || r1 > x.rows())
        throw std::invalid_argument("slice_rows: range [" + std::to_string(r0) + ", " +
                                    std::to_string(r1) + ") of " + x.shape_str());
    check_tape(x, tape, "slice_rows");
    const int64_t d = x.cols(), n = r1 - r0;
    Tensor out({n, d}, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out.at(i, j) = x.at(r0 + i, j);
    if (on_tape(x, tape)) {
        const int nx = x.node;
        Tensor xc = x;
        rec(tape, out, [&](int onode) {
            return [xc, nx, onode, r0, n, d](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& gx = t.grad_buf(nx, xc.shape());
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gx.at(r0 + i, j) += go->at(i, j);
            };
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1, Tape* tape) {
    if (x.ndim() != 2 || c0 < 0 || c1 < c0 || c1 > x.cols())
        throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + ", " +
                                    std::to_string(c1) + ") of " + x.shape_str());
    check_tape(x, tape, "slice_cols");
    const int64_t n = x.rows(), d = c1 - c0;
    Tensor out({n, d}, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out.at(i, j) = x.at(i, c0 + j);
    if (on_tape(x, tape)) {
        const int nx = x.node;
        Tensor xc = x;
        rec(tape, out, [&](int onode) {
            return [xc, nx, onode, c0, n, d](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& gx = t.grad_buf(nx, xc.shape());
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gx.at(i, c0 + j) += go->at(i, j);
            };
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int64_t n = parts[0].rows();
    int64_t total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2 || p.rows() != n)
            throw std::invalid_argument("concat_cols: shape " + p.shape_str() +
                                        " does not stack against " + parts[0].shape_str());
        check_tape(p, tape, "concat_cols");
        total += p.cols();
    }
    Tensor out({n, total}, 0.0);
    int64_t off = 0;
    for (const Tensor& p : parts) {
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
        off += p.cols();
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || on_tape(p, tape);
    if (any) {
        std::vector<int> nodes;
        std::vector<int64_t> offsets, widths;
        int64_t o = 0;
        for (const Tensor& p : parts) {
            nodes.push_back(on_tape(p, tape) ? p.node : -1);
            offsets.push_back(o);
            widths.push_back(p.cols());
            o += p.cols();
        }
        std::vector<Tensor> copies = parts;
        rec(tape, out, [&](int onode) {
            return [copies, nodes, offsets, widths, onode, n](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                for (size_t k = 0; k < nodes.size(); ++k) {
                    if (nodes[k] < 0) continue;
                    Tensor& gp = t.grad_buf(nodes[k], copies[k].shape());
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < widths[k]; ++j)
                            gp.at(i, j) += go->at(i, offsets[k] + j);
                }
            };
        });
    }
    return out;
}

Tensor sum_rows(const Tensor& x, Tape* tape) {
    if (x.ndim() != 2) throw std::invalid_argument("sum_rows: not 2-d, shape " + x.shape_str());
    check_tape(x, tape, "sum_rows");
    const int64_t n = x.rows(), d = x.cols();
    Tensor out({n, 1}, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < d; ++j) s += x.at(i, j);
        out.at(i) = s;
    }
    if (on_tape(x, tape)) {
        const int nx = x.node;
        Tensor xc = x;
        rec(tape, out, [&](int onode) {
            return [xc, nx, onode, n, d](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& gx = t.grad_buf(nx, xc.shape());
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gx.at(i, j) += go->at(i);
            };
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x, Tape* tape) {
    check_tape(x, tape, "sum_all");
    const int64_t n = x.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += x.at(i);
    Tensor out({1}, std::vector<double>{s});
    if (on_tape(x, tape)) {
        const int nx = x.node;
        Tensor xc = x;
        rec(tape, out, [&](int onode) {
            return [xc, nx, onode, n](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& gx = t.grad_buf(nx, xc.shape());
                for (int64_t i = 0; i < n; ++i) gx.at(i) += go->at(0);
            };
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x, Tape* tape) {
    if (x.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    return scale(sum_all(x, tape), 1.0 / double(x.numel()), tape);
}

Tensor rope_rows(const Tensor& x, const std::vector<int64_t>& positions, int64_t d_head,
                 double base, Tape* tape) {
    if (x.ndim() != 2 || int64_t(positions.size()) != x.rows())
        throw std::invalid_argument("rope_rows: shape " + x.shape_str() + " vs " +
                                    std::to_string(positions.size()) + " positions");
    if (d_head <= 0 || d_head % 2 != 0 || x.cols() % d_head != 0)
        throw std::invalid_argument("rope_rows: d_head " + std::to_string(d_head) +
                                    " incompatible with width " + std::to_string(x.cols()));
    check_tape(x, tape, "rope_rows");
    const int64_t n = x.rows(), w = x.cols(), half = d_head / 2;
    std::vector<double> theta(static_cast<size_t>(half));
    for (int64_t p = 0; p < half; ++p)
        theta[size_t(p)] = std::pow(base, -2.0 * double(p) / double(d_head));
    Tensor out({n, w}, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        const double pos = double(positions[size_t(i)]);
        for (int64_t h0 = 0; h0 < w; h0 += d_head)
            for (int64_t p = 0; p < half; ++p) {
                const double a = pos * theta[size_t(p)];
                const double c = std::cos(a), s = std::sin(a);
                const double x0 = x.at(i, h0 + 2 * p), x1 = x.at(i, h0 + 2 * p + 1);
                out.at(i, h0 + 2 * p) = x0 * c - x1 * s;
                out.at(i, h0 + 2 * p + 1) = x0 * s + x1 * c;
            }
    }
    if (on_tape(x, tape)) {
        const int nx = x.node;
        Tensor xc = x;
        std::vector<int64_t> pc = positions;
        rec(tape, out, [&](int onode) {
            return [xc, pc, nx, onode, n, w, half, d_head, theta](Tape& t) {
                const Tensor* go = t.grad_ptr(onode);
                if (!go) return;
                Tensor& gx = t.grad_buf(nx, xc.shape());
                for (int64_t i = 0; i < n; ++i) {
                    const double pos = double(pc[size_t(i)]);
                    for (int64_t h0 = 0; h0 < w; h0 += d_head)
                        for (int64_t p = 0; p < half; ++p) {
                            const double a = pos * theta[size_t(p)];
                            const double c = std::cos(a), s = std::sin(a);
                            const double g0 = go->at(i, h0 + 2 * p), g1 = go->at(i, h0 + 2 * p + 1);
                            gx.at(i, h0 + 2 * p) += g0 * c + g1 * s;
                            gx.at(i, h0 + 2 * p + 1) += -g0 * s + g1 * c;
                        }
                }
            };
        });
    }
    return out;
}

Tensor finite_diff_grad(const std::function<double()>& f, Tensor& param, double eps) {
    if (!param.defined()) throw std::invalid_argument("finite_diff_grad: undefined parameter");
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Tensor g(param.shape(), 0.0);
    const int64_t n = param.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double saved = param.at(i);
        param.at(i) = saved + eps;
        const double fp = f();
        param.at(i) = saved - eps;
        const double fm = f();
        param.at(i) = saved;
        g.at(i) = (fp - fm) / (2.0 * eps);
    }
    return g;
}

}  // namespace stf
