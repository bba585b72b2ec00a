#include "stateformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <stdexcept>

#include "json.hpp"
#include "stateformer/rng.hpp"

namespace stf {

Tensor ar_loss(const Tensor& logits, const std::vector<int64_t>& tokens, int64_t prompt_len,
               Tape* tape) {
    const int64_t n = int64_t(tokens.size());
    if (logits.rows() != n) throw std::invalid_argument("ar_loss: logits rows != token count");
    if (prompt_len < 1 || prompt_len >= n)
        throw std::invalid_argument("ar_loss: no targets after the prompt");
    Tensor rows = slice_rows(logits, prompt_len - 1, n - 1, tape);
    Tensor ls = log_softmax_rows(rows, tape);
    std::vector<int64_t> targets(tokens.begin() + prompt_len, tokens.end());
    Tensor picked = pick_per_row(ls, targets, tape);
    return scale(mean_all(picked, tape), -1.0, tape);
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               const std::vector<int64_t>& tokens, int64_t prompt_len, Tape* tape) {
    const int64_t n = int64_t(tokens.size());
    if (student_logits.rows() != n || teacher_logits.rows() != n)
        throw std::invalid_argument("kd_loss: logits rows != token count");
    if (student_logits.cols() != teacher_logits.cols())
        throw std::invalid_argument("kd_loss: vocab width mismatch");
    if (prompt_len < 1 || prompt_len >= n)
        throw std::invalid_argument("kd_loss: no targets after the prompt");
    const int64_t m = n - prompt_len;

    // the reference side is a constant: evaluated off the tape
    Tensor t_rows = slice_rows(teacher_logits, prompt_len - 1, n - 1, nullptr);
    Tensor t_log = log_softmax_rows(t_rows, nullptr);
    Tensor t_prob = softmax_rows(t_rows, nullptr);

    Tensor s_rows = slice_rows(student_logits, prompt_len - 1, n - 1, tape);
    Tensor s_log = log_softmax_rows(s_rows, tape);
    Tensor kl = mul(t_prob, sub(t_log, s_log, tape), tape);
    return scale(sum_all(kl, tape), 1.0 / double(m), tape);
}

SampleLosses sample_losses(const ModelWeights& w, const TrainSequence& s,
                           const ForwardOptions& fopt, double beta_kd, Tape* tape) {
    Tensor teacher = model_forward(w, s.tokens, s.prompt_len, s.spans,
                                   ForwardOptions::vanilla(), nullptr);
    Tensor student = model_forward(w, s.tokens, s.prompt_len, s.spans, fopt, tape);
    Tensor ar = ar_loss(student, s.tokens, s.prompt_len, tape);
    Tensor kd = kd_loss(student, teacher, s.tokens, s.prompt_len, tape);
    SampleLosses out;
    out.ar = ar.at(0);
    out.kd = kd.at(0);
    out.total = add(ar, scale(kd, beta_kd, tape), tape);
    return out;
}

AdamW::AdamW(std::vector<Tensor*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (Tensor* p : params_) {
        m_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
    }
}

void AdamW::step(const std::vector<Tensor>& grads, double lr) {
    if (grads.size() != params_.size()) throw std::invalid_argument("AdamW: grad count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor* p = params_[i];
        if (grads[i].numel() != p->numel()) throw std::invalid_argument("AdamW: grad shape mismatch");
        const double* g = grads[i].data();
        double* x = p->data();
        for (int64_t j = 0; j < p->numel(); ++j) {
            auto& m = m_[i][size_t(j)];
            auto& v = v_[i][size_t(j)];
            m = beta1_ * m + (1.0 - beta1_) * g[j];
            v = beta2_ * v + (1.0 - beta2_) * g[j] * g[j];
            x[j] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps_);
        }
    }
}

double lr_at(int64_t step, int64_t total_steps, double lr_max, double warmup_ratio) {
    if (total_steps < 1) throw std::invalid_argument("lr_at: no steps");
    if (step < 0 || step >= total_steps) throw std::invalid_argument("lr_at: step out of range");
    const int64_t warmup = std::max<int64_t>(1, int64_t(std::ceil(warmup_ratio * double(total_steps))));
    if (step < warmup) return lr_max * double(step + 1) / double(warmup);
    if (total_steps == warmup) return lr_max;
    const double progress = double(step - warmup) / double(total_steps - warmup);
    return lr_max * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void write_report_csv(const std::string& path, const std::vector<TrainReportRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "step,lr,loss_ar,loss_kd,loss_total\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g\n",
                      static_cast<long long>(r.step), r.lr, r.loss_ar, r.loss_kd, r.loss_total);
        f << buf;
    }
}

namespace {

struct LoopHyper {
    double lr = 0.0;
    int64_t epochs = 0;
    int64_t batch = 0;
    double warmup_ratio = 0.0;
    uint64_t seed = 0;
    std::string report_path, diag_path;
};

void write_diag(const std::string& path, int64_t step, int64_t epoch, int64_t sample,
                const SampleLosses& losses,
                const std::vector<std::pair<std::string, Tensor*>>& params) {
    nlohmann::json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["sample"] = sample;
    j["loss_ar"] = losses.ar;
    j["loss_kd"] = losses.kd;
    nlohmann::json norms;
    for (const auto& [name, t] : params) {
        double ss = 0.0;
        for (int64_t i = 0; i < t->numel(); ++i) ss += t->at(i) * t->at(i);
        norms[name] = std::sqrt(ss);
    }
    j["param_l2"] = norms;
    std::ofstream f(path);
    if (f) f << j.dump(2) << "\n";
}

TrainResult run_loop(const std::vector<std::pair<std::string, Tensor*>>& params, int64_t n,
                     const std::function<SampleLosses(int64_t, Tape&)>& eval,
                     const LoopHyper& hy) {
    if (n < 1) throw std::invalid_argument("train: no usable samples");
    if (hy.epochs < 1 || hy.batch < 1) throw std::invalid_argument("train: bad epochs/batch");

    std::vector<Tensor*> ptrs;
    for (const auto& [name, t] : params) {
        (void)name;
        ptrs.push_back(t);
    }
    AdamW adam(ptrs);
    Rng rng(hy.seed);

    const int64_t steps_per_epoch = (n + hy.batch - 1) / hy.batch;
    const int64_t total_steps = hy.epochs * steps_per_epoch;
    TrainResult res;
    int64_t step_idx = 0;

    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[size_t(i)] = i;

    for (int64_t epoch = 0; epoch < hy.epochs; ++epoch) {
        for (int64_t i = n - 1; i > 0; --i) {
            const size_t j = rng.next_index(size_t(i + 1));
            std::swap(order[size_t(i)], order[j]);
        }
        for (int64_t b0 = 0; b0 < n; b0 += hy.batch) {
            const int64_t b1 = std::min(n, b0 + hy.batch);
            const double inv = 1.0 / double(b1 - b0);
            std::vector<Tensor> acc;
            for (Tensor* p : ptrs) acc.emplace_back(p->shape(), 0.0);
            double mean_ar = 0.0, mean_kd = 0.0, mean_total = 0.0;

            for (int64_t bi = b0; bi < b1; ++bi) {
                const int64_t idx = order[size_t(bi)];
                Tape tape;
                for (Tensor* p : ptrs) tape.watch(*p);
                SampleLosses losses = eval(idx, tape);
                const double total = losses.total.at(0);
                if (!std::isfinite(total) || !std::isfinite(losses.ar) ||
                    !std::isfinite(losses.kd)) {
                    write_diag(hy.diag_path, step_idx + 1, epoch + 1, idx, losses, params);
                    throw std::runtime_error("training aborted: non-finite loss at step " +
                                             std::to_string(step_idx + 1) + ", diagnostics in " +
                                             hy.diag_path);
                }
                tape.backward(losses.total);
                for (size_t pi = 0; pi < ptrs.size(); ++pi) {
                    Tensor g = tape.grad(*ptrs[pi]);
                    double* a = acc[pi].data();
                    const double* gp = g.data();
                    for (int64_t k = 0; k < g.numel(); ++k) a[k] += inv * gp[k];
                }
                mean_ar += inv * losses.ar;
                mean_kd += inv * losses.kd;
                mean_total += inv * total;
            }

            const double lr = lr_at(step_idx, total_steps, hy.lr, hy.warmup_ratio);
            adam.step(acc, lr);
            res.rows.push_back({step_idx + 1, lr, mean_ar, mean_kd, mean_total});
            ++step_idx;
        }
    }
    if (!hy.report_path.empty()) write_report_csv(hy.report_path, res.rows);
    return res;
}

}  // namespace

TrainResult train(ModelWeights& w, const std::vector<TrainSequence>& data,
                  const TrainConfig& cfg) {
    detach_weights(w);
    std::vector<const TrainSequence*> usable;
    int64_t skipped = 0;
    for (const auto& s : data) {
        if (int64_t(s.tokens.size()) > cfg.max_sample_len) {
            ++skipped;
            continue;
        }
        usable.push_back(&s);
    }
    if (skipped > 0)
        std::cerr << "train: skipped " << skipped << " samples over " << cfg.max_sample_len
                  << " tokens\n";

    ForwardOptions fopt;
    fopt.stepwise = true;
    fopt.correction = cfg.correction;
    fopt.alpha_max = cfg.alpha_max;
    fopt.t_max = cfg.t_max;

    LoopHyper hy;
    hy.lr = cfg.lr;
    hy.epochs = cfg.epochs;
    hy.batch = cfg.batch_size;
    hy.warmup_ratio = cfg.warmup_ratio;
    hy.seed = cfg.seed;
    hy.report_path = cfg.report_path;
    hy.diag_path = cfg.diag_path;

    TrainResult res = run_loop(
        trainable_tensors(w), int64_t(usable.size()),
        [&](int64_t idx, Tape& tape) {
            return sample_losses(w, *usable[size_t(idx)], fopt, cfg.beta_kd, &tape);
        },
        hy);
    res.skipped = skipped;
    return res;
}

TrainResult pretrain(ModelWeights& w, const std::vector<std::vector<int64_t>>& seqs,
                     const PretrainConfig& cfg) {
    detach_weights(w);
    std::vector<const std::vector<int64_t>*> usable;
    int64_t skipped = 0;
    for (const auto& s : seqs) {
        if (int64_t(s.size()) > cfg.max_sample_len || s.size() < 2) {
            ++skipped;
            continue;
        }
        usable.push_back(&s);
    }
    if (skipped > 0)
        std::cerr << "pretrain: skipped " << skipped << " unusable samples\n";

    LoopHyper hy;
    hy.lr = cfg.lr;
    hy.epochs = cfg.epochs;
    hy.batch = cfg.batch_size;
    hy.warmup_ratio = cfg.warmup_ratio;
    hy.seed = cfg.seed;
    hy.report_path = cfg.report_path;
    hy.diag_path = cfg.diag_path;

    TrainResult res = run_loop(
        frozen_tensors(w), int64_t(usable.size()),
        [&](int64_t idx, Tape& tape) {
            const auto& toks = *usable[size_t(idx)];
            Tensor logits = model_forward(w, toks, 1, {}, ForwardOptions::vanilla(), &tape);
            SampleLosses out;
            Tensor ar = ar_loss(logits, toks, 1, &tape);
            out.ar = ar.at(0);
            out.kd = 0.0;
            out.total = ar;
            return out;
        },
        hy);
    res.skipped = skipped;
    return res;
}

GradCheckResult grad_check(ModelWeights& w, const TrainSequence& s, const ForwardOptions& fopt,
                           double eps) {
    detach_weights(w);
    auto params = trainable_tensors(w);

    // the reference distribution is produced once and then held fixed; its
    // stop-gradient role means perturbations must not flow through it
    Tensor teacher = model_forward(w, s.tokens, s.prompt_len, s.spans,
                                   ForwardOptions::vanilla(), nullptr);

    Tape tape;
    for (auto& [name, t] : params) {
        (void)name;
        tape.watch(*t);
    }
    Tensor student = model_forward(w, s.tokens, s.prompt_len, s.spans, fopt, &tape);
    Tensor ar = ar_loss(student, s.tokens, s.prompt_len, &tape);
    Tensor kd = kd_loss(student, teacher, s.tokens, s.prompt_len, &tape);

    std::vector<Tensor> ga, gk;
    tape.backward(ar);
    for (auto& [name, t] : params) {
        (void)name;
        ga.push_back(tape.grad(*t));
    }
    tape.backward(kd);
    for (auto& [name, t] : params) {
        (void)name;
        gk.push_back(tape.grad(*t));
    }

    GradCheckResult res;
    for (auto& [name, t] : frozen_tensors(w)) {
        (void)name;
        if (t->tape == &tape && t->node >= 0) res.frozen_off_tape = false;
    }

    auto tensor_rel = [](const Tensor& a, const Tensor& b) {
        double dev = 0.0, mag = 0.0;
        for (int64_t i = 0; i < a.numel(); ++i) {
            dev = std::max(dev, std::abs(a.at(i) - b.at(i)));
            mag = std::max({mag, std::abs(a.at(i)), std::abs(b.at(i))});
        }
        return mag > 1e-12 ? dev / mag : 0.0;
    };

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& param = *params[pi].second;
        Tensor na = finite_diff_grad(
            [&] {
                Tensor logits =
                    model_forward(w, s.tokens, s.prompt_len, s.spans, fopt, nullptr);
                return ar_loss(logits, s.tokens, s.prompt_len, nullptr).at(0);
            },
            param, eps);
        Tensor nk = finite_diff_grad(
            [&] {
                Tensor logits =
                    model_forward(w, s.tokens, s.prompt_len, s.spans, fopt, nullptr);
                return kd_loss(logits, teacher, s.tokens, s.prompt_len, nullptr).at(0);
            },
            param, eps);
        GradCheckEntry e;
        e.name = params[pi].first;
        e.rel_ar = tensor_rel(ga[pi], na);
        e.rel_kd = tensor_rel(gk[pi], nk);
        res.entries.push_back(e);
        const double worst_here = std::max(e.rel_ar, e.rel_kd);
        if (worst_here >= res.worst) {
            res.worst = worst_here;
            res.worst_name = e.name;
        }
    }
    return res;
}

}  // namespace stf
