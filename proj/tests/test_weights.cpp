#include <cstdio>
#include <set>
#include <string>

#include "doctest.h"
#include "stateformer/weights.hpp"
#include "test_util.hpp"

using namespace stf;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_base = 12;
    cfg.patterns = 3;
    cfg.rank_la = 4;
    cfg.rank_gate = 2;
    cfg.seed = 99;
    return cfg;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/stf_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("config survives a json round trip and hashing is content-based") {
    const ModelConfig cfg = tiny_config();
    const ModelConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.d_model == cfg.d_model);
    CHECK(back.patterns == cfg.patterns);
    CHECK(back.rope_base == cfg.rope_base);
    CHECK(back.seed == cfg.seed);
    CHECK(config_hash(back) == config_hash(cfg));
    ModelConfig other = cfg;
    other.d_ff += 1;
    CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("config validation rejects inconsistent shapes") {
    ModelConfig cfg = tiny_config();
    cfg.heads = 3;  // d_model 16 not divisible
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.d_model = 9;
    cfg.heads = 3;  // divides, but d_head = 3 is odd: no rotation pairs
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.patterns = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.answer_start_id = cfg.vocab_base;  // must be a base-vocab id
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("enclosure token ids tile after the base vocabulary") {
    const ModelConfig cfg = tiny_config();  // vocab_base 12, 3 patterns
    const SpecialTokenTable t(cfg);
    CHECK(t.start_id(1) == 12);
    CHECK(t.end_id(1) == 13);
    CHECK(t.start_id(3) == 16);
    CHECK(t.end_id(3) == 17);
    CHECK(t.is_start(12));
    CHECK(!t.is_start(13));
    CHECK(t.is_end(17));
    CHECK(t.pattern_of(16) == 3);
    CHECK(t.pattern_of(5) == -1);
    CHECK_THROWS_AS(t.start_id(0), std::invalid_argument);
    CHECK_THROWS_AS(t.start_id(4), std::invalid_argument);
}

TEST_CASE("initialization is seed-deterministic and starts the deltas at zero") {
    const ModelConfig cfg = tiny_config();
    ModelWeights a = init_weights(cfg);
    ModelWeights b = init_weights(cfg);
    auto ta = trainable_tensors(a), tb = trainable_tensors(b);
    CHECK(weights_checksum(ta) == weights_checksum(tb));
    auto fa = frozen_tensors(a), fb = frozen_tensors(b);
    CHECK(weights_checksum(fa) == weights_checksum(fb));

    ModelConfig cfg2 = cfg;
    cfg2.seed = 100;
    ModelWeights c = init_weights(cfg2);
    auto fc = frozen_tensors(c);
    CHECK(weights_checksum(fc) != weights_checksum(fa));

    for (const LayerWeights& l : a.layers) {
        for (const Tensor* up : {&l.la_up_q, &l.la_up_k, &l.la_up_v, &l.gate_up})
            for (int64_t i = 0; i < up->numel(); ++i) CHECK(up->at(i) == 0.0);
        // down factors are live so training can move immediately
        double mx = 0.0;
        for (int64_t i = 0; i < l.la_down_q.numel(); ++i)
            mx = std::max(mx, std::abs(l.la_down_q.at(i)));
        CHECK(mx > 0.0);
    }
}

TEST_CASE("trainable and frozen sets partition the parameters") {
    ModelWeights w = init_weights(tiny_config());
    auto tr = trainable_tensors(w);
    auto fr = frozen_tensors(w);
    // per layer: 3 low-rank pairs + gate pair = 8 tensors, plus special embeddings
    CHECK(tr.size() == size_t(8 * w.cfg.layers + 1));
    std::set<const Tensor*> seen;
    for (auto& [name, t] : tr) {
        CHECK(!name.empty());
        CHECK(seen.insert(t).second);
    }
    for (auto& [name, t] : fr) CHECK(seen.insert(t).second);
    // everything reachable is listed exactly once
    CHECK(seen.size() == tr.size() + fr.size());
}

TEST_CASE("full weight files round trip bit-exactly") {
    ModelWeights w = init_weights(tiny_config());
    TempFile f("weights.json");
    save_weights(f.path, w);
    ModelWeights back = load_weights(f.path);
    auto t1 = trainable_tensors(w), t2 = trainable_tensors(back);
    auto f1 = frozen_tensors(w), f2 = frozen_tensors(back);
    CHECK(weights_checksum(t1) == weights_checksum(t2));
    CHECK(weights_checksum(f1) == weights_checksum(f2));
    CHECK(config_hash(back.cfg) == config_hash(w.cfg));
}

TEST_CASE("checkpoints restore the trainable subset and guard the config") {
    ModelWeights w = init_weights(tiny_config());
    // make the trainables distinctive
    for (auto& [name, t] : trainable_tensors(w))
        for (int64_t i = 0; i < t->numel(); ++i) t->at(i) = 0.001 * double(i % 7) + 0.5;
    const uint64_t frozen_before = [&] {
        auto f = frozen_tensors(w);
        return weights_checksum(f);
    }();
    auto tr = trainable_tensors(w);
    const uint64_t train_before = weights_checksum(tr);

    TempFile f("ckpt.json");
    save_checkpoint(f.path, w);

    ModelWeights fresh = init_weights(tiny_config());
    load_checkpoint(f.path, fresh);
    auto tr2 = trainable_tensors(fresh);
    CHECK(weights_checksum(tr2) == train_before);
    auto fr2 = frozen_tensors(fresh);
    CHECK(weights_checksum(fr2) == frozen_before);  // same seed, untouched by the load

    ModelConfig other = tiny_config();
    other.d_ff *= 2;
    ModelWeights mismatched = init_weights(other);
    CHECK_THROWS_AS(load_checkpoint(f.path, mismatched), std::runtime_error);
}
