#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stateformer/autodiff.hpp"
#include "stateformer/model_forward.hpp"
#include "stateformer/sample.hpp"
#include "stateformer/weights.hpp"

namespace stf {

// mean NLL over the thinking and answer targets; the prompt tokens are never
// targets, the prediction of the first post-prompt token is included
Tensor ar_loss(const Tensor& logits, const std::vector<int64_t>& tokens, int64_t prompt_len,
               Tape* tape);

// mean per-target KL from the reference distribution to the student's over
// the same positions; teacher_logits act as constants (no gradient flows)
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               const std::vector<int64_t>& tokens, int64_t prompt_len, Tape* tape);

struct SampleLosses {
    Tensor total;  // ar + beta_kd * kd, on the tape
    double ar = 0.0;
    double kd = 0.0;
};

// one student forward (stepwise) plus one detached full-context reference
// forward over the same tokens
SampleLosses sample_losses(const ModelWeights& w, const TrainSequence& s,
                           const ForwardOptions& fopt, double beta_kd, Tape* tape);

// plain Adam (decoupled weight decay at zero is a no-op, so none is applied)
class AdamW {
public:
    AdamW(std::vector<Tensor*> params, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);
    void step(const std::vector<Tensor>& grads, double lr);

private:
    std::vector<Tensor*> params_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
    double beta1_, beta2_, eps_;
};

// linear warmup to lr_max, then cosine decay to zero; step is 0-based
double lr_at(int64_t step, int64_t total_steps, double lr_max, double warmup_ratio);

struct TrainConfig {
    double lr = 2e-4;
    double beta_kd = 0.2;
    int64_t epochs = 2;
    int64_t batch_size = 32;
    double warmup_ratio = 0.03;
    uint64_t seed = 505;
    bool correction = false;  // step corrections stay off in the training forward
    double alpha_max = 0.4;
    int64_t t_max = 40;
    int64_t max_sample_len = 512;
    std::string report_path;             // CSV: step, lr, loss_ar, loss_kd, loss_total
    std::string diag_path = "train_nan_diag.json";
};

struct TrainReportRow {
    int64_t step = 0;
    double lr = 0.0, loss_ar = 0.0, loss_kd = 0.0, loss_total = 0.0;
};

struct TrainResult {
    std::vector<TrainReportRow> rows;
    int64_t skipped = 0;  // overlength samples
};

// fine-tunes exactly the trainable tensors; a non-finite loss aborts with a
// diagnostic snapshot written to diag_path
TrainResult train(ModelWeights& w, const std::vector<TrainSequence>& data, const TrainConfig& cfg);

struct PretrainConfig {
    double lr = 1e-3;
    int64_t epochs = 30;
    int64_t batch_size = 16;
    double warmup_ratio = 0.05;
    uint64_t seed = 606;
    int64_t max_sample_len = 512;
    std::string report_path;
    std::string diag_path = "pretrain_nan_diag.json";
};

// full-parameter training of the plain causal model on raw token streams;
// this is what produces the frozen base the fine-tune builds on
TrainResult pretrain(ModelWeights& w, const std::vector<std::vector<int64_t>>& seqs,
                     const PretrainConfig& cfg);

void write_report_csv(const std::string& path, const std::vector<TrainReportRow>& rows);

struct GradCheckEntry {
    std::string name;
    double rel_ar = 0.0;  // per-tensor: max abs deviation over max abs gradient
    double rel_kd = 0.0;
};

struct GradCheckResult {
    std::vector<GradCheckEntry> entries;
    double worst = 0.0;
    std::string worst_name;
    bool frozen_off_tape = true;  // no frozen tensor ended up recorded
};

// analytic tape gradients of both losses against central differences for
// every trainable tensor; the reference distribution is frozen before the
// perturbations, matching its stop-gradient role in the loss
GradCheckResult grad_check(ModelWeights& w, const TrainSequence& s, const ForwardOptions& fopt,
                           double eps = 1e-5);

}  // namespace stf
