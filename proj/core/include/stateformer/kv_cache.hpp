#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace stf {

// Two-segment KV cache: the prompt segment persists for the whole
// generation, the step segment holds the current reasoning step and is
// cleared when the step closes. Rows are full d_model vectors with all
// heads concatenated; head h of position i lives at [i*d_model + h*d_head].
template <class T>
class KvCache {
public:
    struct Layer {
        std::vector<T> prompt_k, prompt_v;
        std::vector<T> step_k, step_v;
    };

    KvCache() = default;
    KvCache(int64_t layers, int64_t d_model) : d_model_(d_model), layers_(size_t(layers)) {}

    int64_t d_model() const { return d_model_; }
    int64_t num_layers() const { return int64_t(layers_.size()); }
    Layer& layer(int64_t l) { return layers_.at(size_t(l)); }
    const Layer& layer(int64_t l) const { return layers_.at(size_t(l)); }

    int64_t prompt_len() const {
        return layers_.empty() ? 0 : int64_t(layers_[0].prompt_k.size()) / d_model_;
    }
    int64_t step_len() const {
        return layers_.empty() ? 0 : int64_t(layers_[0].step_k.size()) / d_model_;
    }
    // positions currently held (identical across layers)
    int64_t total_positions() const { return prompt_len() + step_len(); }

    void append_prompt(int64_t l, const T* k, const T* v) {
        Layer& ly = layer(l);
        ly.prompt_k.insert(ly.prompt_k.end(), k, k + d_model_);
        ly.prompt_v.insert(ly.prompt_v.end(), v, v + d_model_);
    }
    void append_step(int64_t l, const T* k, const T* v) {
        Layer& ly = layer(l);
        ly.step_k.insert(ly.step_k.end(), k, k + d_model_);
        ly.step_v.insert(ly.step_v.end(), v, v + d_model_);
    }

    // clears the step segment in every layer; returns the number of evicted
    // positions. No open step -> 0 (idempotent).
    int64_t evict_step() {
        const int64_t count = step_len();
        for (auto& ly : layers_) {  // capacity is kept for the next step
            ly.step_k.clear();
            ly.step_v.clear();
        }
        return count;
    }

private:
    int64_t d_model_ = 0;
    std::vector<Layer> layers_;
};

}  // namespace stf
