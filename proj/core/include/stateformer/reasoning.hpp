#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stf {

// per-layer linear-attention states; each layer holds `heads` row-major
// d_head x d_head matrices back to back
template <class T>
struct StateSet {
    int64_t layers = 0, heads = 0, d_head = 0;
    std::vector<std::vector<T>> s;

    StateSet() = default;
    StateSet(int64_t layers_, int64_t heads_, int64_t d_head_)
        : layers(layers_), heads(heads_), d_head(d_head_),
          s(size_t(layers_), std::vector<T>(size_t(heads_ * d_head_ * d_head_), T(0))) {}

    T* head_matrix(int64_t layer, int64_t h) {
        return s.at(size_t(layer)).data() + h * d_head * d_head;
    }
    const T* head_matrix(int64_t layer, int64_t h) const {
        return s.at(size_t(layer)).data() + h * d_head * d_head;
    }
    void zero() {
        for (auto& layer : s)
            for (T& x : layer) x = T(0);
    }
};

// correction strength for step t (1-based): alpha ramps linearly with t and
// saturates at alpha_max
inline double alpha_schedule(int64_t t, double alpha_max, int64_t t_max) {
    if (t < 1) throw std::invalid_argument("alpha_schedule: t must be >= 1, got " + std::to_string(t));
    if (t_max < 1) throw std::invalid_argument("alpha_schedule: t_max must be >= 1");
    if (!(alpha_max >= 0.0 && alpha_max <= 1.0))
        throw std::invalid_argument("alpha_schedule: alpha_max must lie in [0, 1]");
    const double ramp = double(t) / double(t_max);
    return ramp < alpha_max ? ramp : alpha_max;
}

// running arithmetic mean over raw deltas: g <- (1 - 1/t) g + (1/t) d.
// t == 1 overwrites g with d exactly.
template <class T>
void momentum_update(std::vector<T>& global_dir, const std::vector<T>& raw_delta, int64_t t) {
    if (t < 1) throw std::invalid_argument("momentum_update: t must be >= 1");
    if (global_dir.size() != raw_delta.size())
        throw std::invalid_argument("momentum_update: size mismatch");
    const T keep = T(1) - T(1) / T(t);
    const T take = T(1) / T(t);
    for (size_t i = 0; i < global_dir.size(); ++i)
        global_dir[i] = keep * global_dir[i] + take * raw_delta[i];
}

struct CorrectionConfig {
    bool enabled = true;
    double alpha_max = 0.4;
    int64_t t_max = 40;
};

// per-layer cosine between two stacked state matrices, averaged over layers.
// A layer where either side is all-zero contributes 0 (no direction); if
// every layer is degenerate the reward is undefined and this throws.
template <class T>
double process_reward(const std::vector<std::vector<T>>& global_dir,
                      const std::vector<std::vector<T>>& delta) {
    if (global_dir.size() != delta.size() || global_dir.empty())
        throw std::invalid_argument("process_reward: layer count mismatch");
    double sum = 0.0;
    bool any_defined = false;
    for (size_t l = 0; l < global_dir.size(); ++l) {
        const auto& g = global_dir[l];
        const auto& d = delta[l];
        if (g.size() != d.size()) throw std::invalid_argument("process_reward: size mismatch");
        double dot = 0.0, ng = 0.0, nd = 0.0;
        for (size_t i = 0; i < g.size(); ++i) {
            dot += double(g[i]) * double(d[i]);
            ng += double(g[i]) * double(g[i]);
            nd += double(d[i]) * double(d[i]);
        }
        if (ng > 0.0 && nd > 0.0) {
            double c = dot / (std::sqrt(ng) * std::sqrt(nd));
            if (c > 1.0) c = 1.0;
            if (c < -1.0) c = -1.0;
            sum += c;
            any_defined = true;
        }
    }
    if (!any_defined)
        throw std::invalid_argument("process_reward: undefined, both directions are zero");
    return sum / double(global_dir.size());
}

// what end_step reports into the generation trace
struct StepInfo {
    int64_t step_index = 0;  // 1-based
    double alpha = 0.0;
    double raw_delta_norm = 0.0;  // Frobenius norm over all layers
    double reward = 0.0;          // cosine against the running mean including this step
};

// Tracks one generation's reasoning steps: snapshots the state at step open,
// on close blends the step's raw delta with the global direction and feeds
// the momentum mean. With correction disabled (or alpha == 0) the live state
// is left untouched, bit-identical to plain accumulation.
template <class T>
class StepLedger {
public:
    StepLedger() = default;
    StepLedger(CorrectionConfig cfg, int64_t layers) : cfg_(cfg) {
        global_dir_.resize(size_t(layers));
        snapshot_.resize(size_t(layers));
    }

    const CorrectionConfig& config() const { return cfg_; }
    int64_t steps_completed() const { return steps_completed_; }
    bool open() const { return open_; }
    const std::vector<std::vector<T>>& global_dir() const { return global_dir_; }

    void begin_step(const StateSet<T>& states) {
        if (open_) throw std::logic_error("begin_step: a step is already open");
        if (states.s.size() != snapshot_.size())
            throw std::invalid_argument("begin_step: layer count mismatch");
        for (size_t l = 0; l < snapshot_.size(); ++l) snapshot_[l] = states.s[l];  // deep copy
        open_ = true;
    }

    StepInfo end_step(StateSet<T>& states) {
        if (!open_) throw std::logic_error("end_step: no step is open");
        const int64_t t = steps_completed_ + 1;
        const double alpha = cfg_.enabled ? alpha_schedule(t, cfg_.alpha_max, cfg_.t_max) : 0.0;
        StepInfo info;
        info.step_index = t;
        info.alpha = alpha;
        double norm_sq = 0.0;
        std::vector<std::vector<T>> raw(states.s.size());
        for (size_t l = 0; l < states.s.size(); ++l) {
            const auto& live = states.s[l];
            const auto& snap = snapshot_[l];
            raw[l].resize(live.size());
            for (size_t i = 0; i < live.size(); ++i) {
                raw[l][i] = live[i] - snap[i];
                norm_sq += double(raw[l][i]) * double(raw[l][i]);
            }
            if (global_dir_[l].empty()) global_dir_[l].assign(live.size(), T(0));
        }
        info.raw_delta_norm = std::sqrt(norm_sq);
        if (alpha != 0.0) {
            // corrected state: snapshot + (1-alpha) raw + alpha global_dir
            const T a = T(alpha), b = T(1.0 - alpha);
            for (size_t l = 0; l < states.s.size(); ++l) {
                auto& live = states.s[l];
                for (size_t i = 0; i < live.size(); ++i)
                    live[i] = snapshot_[l][i] + b * raw[l][i] + a * global_dir_[l][i];
            }
        }
        for (size_t l = 0; l < raw.size(); ++l) momentum_update(global_dir_[l], raw[l], t);
        steps_completed_ = t;
        open_ = false;
        // degenerate (all-zero) steps carry no direction; report 0
        try {
            info.reward = process_reward(global_dir_, raw);
        } catch (const std::invalid_argument&) {
            info.reward = 0.0;
        }
        return info;
    }

private:
    CorrectionConfig cfg_;
    std::vector<std::vector<T>> snapshot_;
    std::vector<std::vector<T>> global_dir_;
    int64_t steps_completed_ = 0;
    bool open_ = false;
};

// indices (ascending) of the ceil(keep_fraction * n) highest-reward steps;
// ties keep the earlier step
std::vector<int64_t> prune_keep_indices(const std::vector<double>& rewards, double keep_fraction);

// mean step reward of one sample
double sample_quality(const std::vector<double>& rewards);

}  // namespace stf
