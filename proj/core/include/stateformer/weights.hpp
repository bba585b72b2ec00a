#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stateformer/tensor.hpp"

namespace stf {

struct ModelConfig {
    int64_t layers = 2;
    int64_t d_model = 64;
    int64_t heads = 4;
    int64_t d_ff = 256;
    int64_t vocab_base = 64;  // grammar tokens, including eos and the answer marker
    int64_t patterns = 4;     // K thinking patterns; pattern ids are 1..K
    int64_t rank_la = 8;      // low-rank delta width on the state-path projections
    int64_t rank_gate = 4;
    int64_t t_max = 40;            // reasoning step budget per generation
    int64_t step_token_limit = 256;
    int64_t answer_token_limit = 64;
    int64_t context_limit = 16384;
    int64_t eos_id = 0;
    int64_t answer_start_id = 1;  // base-vocab token that opens the answer region
    double rope_base = 10000.0;
    uint64_t seed = 1234;

    int64_t d_head() const { return d_model / heads; }
    int64_t vocab_total() const { return vocab_base + 2 * patterns; }
    void validate() const;
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);
uint64_t config_hash(const ModelConfig& cfg);

// pattern ids are 1..K; the enclosure tokens sit after the base vocabulary
struct SpecialTokenTable {
    int64_t vocab_base = 0;
    int64_t patterns = 0;

    SpecialTokenTable() = default;
    explicit SpecialTokenTable(const ModelConfig& cfg)
        : vocab_base(cfg.vocab_base), patterns(cfg.patterns) {}

    int64_t start_id(int64_t pattern) const;  // opening token of pattern p
    int64_t end_id(int64_t pattern) const;    // matching closing token
    bool is_start(int64_t id) const;
    bool is_end(int64_t id) const;
    // 1..K for enclosure tokens, -1 for base-vocab ids
    int64_t pattern_of(int64_t id) const;
};

struct LayerWeights {
    Tensor attn_gain;              // [d_model]
    Tensor wq, wk, wv, wo;         // [d_model, d_model], frozen
    Tensor la_down_q, la_up_q;     // [d_model, r], [r, d_model], trainable
    Tensor la_down_k, la_up_k;
    Tensor la_down_v, la_up_v;
    Tensor gate_down, gate_up;     // [d_model, r_g], [r_g, d_model], trainable
    Tensor ffn_gain;               // [d_model]
    Tensor w1, w3, w2;             // gated ffn, frozen
};

struct ModelWeights {
    ModelConfig cfg;
    Tensor embed_base;     // [vocab_base, d_model], frozen
    Tensor embed_special;  // [2K, d_model], trainable
    Tensor final_gain;     // [d_model]
    Tensor head;           // [d_model, vocab_total], frozen
    std::vector<LayerWeights> layers;
};

// seeded initialization; low-rank up factors start at zero so the deltas
// vanish and the state-path projections equal the frozen base exactly
ModelWeights init_weights(const ModelConfig& cfg);

// the trainable set: low-rank delta factors, gate factors, special-token
// embeddings; everything else is frozen
std::vector<std::pair<std::string, Tensor*>> trainable_tensors(ModelWeights& w);
std::vector<std::pair<std::string, Tensor*>> frozen_tensors(ModelWeights& w);

// FNV-1a over the raw bytes of the listed tensors, in list order
uint64_t weights_checksum(const std::vector<std::pair<std::string, Tensor*>>& tensors);

// clears stale tape linkage on every tensor; call before starting a fresh
// tape over the same weights
void detach_weights(ModelWeights& w);

void save_weights(const std::string& path, const ModelWeights& w);
ModelWeights load_weights(const std::string& path);

// trainable subset only, guarded by the config hash
void save_checkpoint(const std::string& path, ModelWeights& w);
void load_checkpoint(const std::string& path, ModelWeights& w);

}  // namespace stf
