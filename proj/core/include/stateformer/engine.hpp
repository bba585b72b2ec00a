#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stateformer/attention.hpp"
#include "stateformer/kv_cache.hpp"
#include "stateformer/perf.hpp"
#include "stateformer/reasoning.hpp"
#include "stateformer/rng.hpp"
#include "stateformer/weights.hpp"

namespace stf {

// stepwise: prompt + current step in the cache, step segment evicted at
//           step close, step-local rotary positions
// full:     ordinary causal transformer (no eviction, sequential positions)
enum class AttentionKind { stepwise, full };

struct EngineOptions {
    AttentionKind attention = AttentionKind::stepwise;
    bool la_enabled = true;   // linear-attention state path
    bool gate_zero = false;   // force every gate to 0 (state path contributes nothing)
    CorrectionConfig correction;

    // the unmodified transformer: full attention, no state path
    static EngineOptions vanilla() {
        EngineOptions o;
        o.attention = AttentionKind::full;
        o.la_enabled = false;
        o.correction.enabled = false;
        return o;
    }
    // state machinery present but silenced; reproduces vanilla exactly
    static EngineOptions compat() {
        EngineOptions o;
        o.attention = AttentionKind::full;
        o.la_enabled = true;
        o.gate_zero = true;
        o.correction.enabled = false;
        return o;
    }
};

struct DecodePolicy {
    enum class Kind { greedy, nucleus };
    Kind kind = Kind::greedy;
    double temperature = 0.6;
    double top_p = 0.95;
    uint64_t seed = 0;
    bool diversity = true;  // ban the previous pattern's opening token at step starts
};

// bans one token id; used at step-opening decisions
void diversity_filter(std::vector<char>& allowed, int64_t banned_id);

struct TraceStep {
    int64_t step_index = 0;
    int64_t pattern = 0;  // 1..K
    std::vector<int64_t> tokens;  // enclosure tokens included
    double alpha = 0.0;
    double raw_delta_norm = 0.0;
    double reward = 0.0;
    int64_t cache_peak = 0;  // positions held just before eviction
    double ms = 0.0;
    bool truncated = false;  // closing token injected at the step token limit
};

struct GenerationTrace {
    std::vector<int64_t> prompt;
    std::vector<TraceStep> steps;
    std::vector<int64_t> answer;  // answer marker through eos
    bool sampled = false;
    bool correction = false;
    bool diversity = false;
    double alpha_max = 0.0;
    int64_t t_max = 0;
    uint64_t seed = 0;
    bool answer_forced = false;   // step budget exhausted before the marker
    bool answer_truncated = false;
};

std::string trace_to_json(const GenerationTrace& t);
GenerationTrace trace_from_json(const std::string& line);
void write_traces_jsonl(const std::string& path, const std::vector<GenerationTrace>& traces);
std::vector<GenerationTrace> read_traces_jsonl(const std::string& path);

// model weights flattened to the engine scalar; low-rank deltas and gate
// factors are folded into dense effective matrices at construction
template <class T>
struct EngineWeights {
    ModelConfig cfg;
    std::vector<T> embed;  // [vocab_total, d_model], base rows then special rows
    std::vector<T> head;   // [d_model, vocab_total]
    std::vector<T> final_gain;
    struct Layer {
        std::vector<T> attn_gain, ffn_gain;
        std::vector<T> wq, wk, wv, wo;
        std::vector<T> la_wq, la_wk, la_wv;  // frozen base + low-rank delta
        std::vector<T> gate_w;
        std::vector<T> w1, w3, w2;
    };
    std::vector<Layer> layers;

    static EngineWeights from(const ModelWeights& w);
};

namespace detail {

// out[j] = sum_i x[i] W[i, j]; accumulation order fixed by i ascending
template <class T>
void matvec(const T* x, const T* w, int64_t d_in, int64_t d_out, T* out) {
    for (int64_t j = 0; j < d_out; ++j) out[j] = T(0);
    for (int64_t i = 0; i < d_in; ++i) {
        const T xv = x[i];
        const T* row = w + i * d_out;
        for (int64_t j = 0; j < d_out; ++j) out[j] += xv * row[j];
    }
}

template <class T>
void rmsnorm_vec(const T* x, const T* gain, int64_t d, T* out) {
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j) ss += double(x[j]) * double(x[j]);
    const T inv_r = T(1.0 / std::sqrt(ss / double(d) + 1e-6));
    for (int64_t j = 0; j < d; ++j) out[j] = x[j] * inv_r * gain[j];
}

template <class T>
std::vector<T> fold_effective(const Tensor& base, const Tensor& down, const Tensor& up) {
    const int64_t d = base.rows(), n = base.cols(), r = down.cols();
    std::vector<T> out(static_cast<size_t>(d * n));
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = base.at(i, j);
            for (int64_t p = 0; p < r; ++p) acc += down.at(i, p) * up.at(p, j);
            out[size_t(i * n + j)] = T(acc);
        }
    return out;
}

template <class T>
std::vector<T> to_scalar(const Tensor& t) {
    std::vector<T> out(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) out[size_t(i)] = T(t.at(i));
    return out;
}

}  // namespace detail

template <class T>
EngineWeights<T> EngineWeights<T>::from(const ModelWeights& w) {
    w.cfg.validate();
    EngineWeights<T> e;
    e.cfg = w.cfg;
    const int64_t d = w.cfg.d_model, vt = w.cfg.vocab_total();
    e.embed.resize(size_t(vt * d));
    for (int64_t i = 0; i < w.cfg.vocab_base * d; ++i) e.embed[size_t(i)] = T(w.embed_base.at(i));
    for (int64_t i = 0; i < 2 * w.cfg.patterns * d; ++i)
        e.embed[size_t(w.cfg.vocab_base * d + i)] = T(w.embed_special.at(i));
    e.head = detail::to_scalar<T>(w.head);
    e.final_gain = detail::to_scalar<T>(w.final_gain);
    e.layers.resize(w.layers.size());
    for (size_t l = 0; l < w.layers.size(); ++l) {
        const LayerWeights& src = w.layers[l];
        auto& dst = e.layers[l];
        dst.attn_gain = detail::to_scalar<T>(src.attn_gain);
        dst.ffn_gain = detail::to_scalar<T>(src.ffn_gain);
        dst.wq = detail::to_scalar<T>(src.wq);
        dst.wk = detail::to_scalar<T>(src.wk);
        dst.wv = detail::to_scalar<T>(src.wv);
        dst.wo = detail::to_scalar<T>(src.wo);
        dst.la_wq = detail::fold_effective<T>(src.wq, src.la_down_q, src.la_up_q);
        dst.la_wk = detail::fold_effective<T>(src.wk, src.la_down_k, src.la_up_k);
        dst.la_wv = detail::fold_effective<T>(src.wv, src.la_down_v, src.la_up_v);
        // gate has no frozen base: effective = down * up
        {
            Tensor zero({w.cfg.d_model, w.cfg.d_model}, 0.0);
            dst.gate_w = detail::fold_effective<T>(zero, src.gate_down, src.gate_up);
        }
        dst.w1 = detail::to_scalar<T>(src.w1);
        dst.w3 = detail::to_scalar<T>(src.w3);
        dst.w2 = detail::to_scalar<T>(src.w2);
    }
    return e;
}

// One live generation: owns the cache, the per-layer states and the step
// ledger. Tokens enter one at a time through push(); logits() exposes the
// prediction for the next token.
template <class T>
class GenerationContext {
public:
    GenerationContext(const EngineWeights<T>& w, EngineOptions opt, PerfStats* stats = nullptr)
        : w_(w), opt_(opt), stats_(stats),
          cache_(w.cfg.layers, w.cfg.d_model),
          states_(w.cfg.layers, w.cfg.heads, w.cfg.d_head()),
          ledger_(opt.correction, w.cfg.layers) {
        const int64_t d = w.cfg.d_model;
        x_.resize(size_t(d));
        a_.resize(size_t(d));
        q_.resize(size_t(d));
        k_.resize(size_t(d));
        v_.resize(size_t(d));
        o_.resize(size_t(d));
        mix_.resize(size_t(d));
        tmp_.resize(size_t(d));
        ff1_.resize(size_t(w.cfg.d_ff));
        ff3_.resize(size_t(w.cfg.d_ff));
        logits_.resize(size_t(w.cfg.vocab_total()));
    }

    // prompt tokens build the persistent segment and the initial state;
    // per_token_logits, when given, collects the prediction after each one
    void prefill(const std::vector<int64_t>& prompt,
                 std::vector<std::vector<T>>* per_token_logits = nullptr) {
        if (prefilled_) throw std::logic_error("prefill: already prefilled");
        if (prompt.empty()) throw std::invalid_argument("prefill: empty prompt");
        if (int64_t(prompt.size()) > w_.cfg.context_limit)
            throw std::runtime_error("prefill: prompt length " + std::to_string(prompt.size()) +
                                     " exceeds context limit " +
                                     std::to_string(w_.cfg.context_limit));
        for (int64_t id : prompt) {
            forward_token(id, /*in_prompt=*/true);
            if (per_token_logits) per_token_logits->push_back(logits_);
        }
        prefilled_ = true;
    }

    bool step_open() const { return ledger_.open(); }

    void open_step() {
        require_prefilled("open_step");
        ledger_.begin_step(states_);
    }

    // correction, momentum update, then eviction; returns the step report
    StepInfo close_step() {
        require_prefilled("close_step");
        StepInfo info = ledger_.end_step(states_);
        cache_.evict_step();
        return info;
    }

    void push(int64_t token) {
        require_prefilled("push");
        if (opt_.attention == AttentionKind::stepwise && !ledger_.open())
            throw std::logic_error("push: no open step (stepwise mode)");
        forward_token(token, /*in_prompt=*/false);
    }

    const std::vector<T>& logits() const { return logits_; }
    int64_t tokens_processed() const { return tokens_; }
    int64_t prompt_len() const { return cache_.prompt_len(); }
    KvCache<T>& cache() { return cache_; }
    StateSet<T>& states() { return states_; }
    StepLedger<T>& ledger() { return ledger_; }
    const EngineOptions& options() const { return opt_; }
    const ModelConfig& config() const { return w_.cfg; }

private:
    void require_prefilled(const char* who) const {
        if (!prefilled_) throw std::logic_error(std::string(who) + ": prompt not prefilled");
    }

    void forward_token(int64_t id, bool in_prompt) {
        const ModelConfig& cfg = w_.cfg;
        if (id < 0 || id >= cfg.vocab_total())
            throw std::invalid_argument("push: token id " + std::to_string(id) +
                                        " outside vocabulary of " +
                                        std::to_string(cfg.vocab_total()));
        if (tokens_ >= cfg.context_limit)
            throw std::runtime_error("push: context limit " + std::to_string(cfg.context_limit) +
                                     " exceeded");
        const auto t_start = std::chrono::steady_clock::now();
        const int64_t d = cfg.d_model, dh = cfg.d_head(), h = cfg.heads;
        // position: sequential in full mode; step-local restart otherwise
        int64_t pos;
        const bool to_prompt = in_prompt || opt_.attention == AttentionKind::full;
        if (opt_.attention == AttentionKind::full)
            pos = tokens_;
        else
            pos = in_prompt ? cache_.prompt_len() : cache_.prompt_len() + cache_.step_len();

        const T* emb = w_.embed.data() + id * d;
        for (int64_t j = 0; j < d; ++j) x_[size_t(j)] = emb[j];

        for (size_t l = 0; l < w_.layers.size(); ++l) {
            const auto& lw = w_.layers[l];
            detail::rmsnorm_vec(x_.data(), lw.attn_gain.data(), d, a_.data());

            // softmax path: project, rotate, cache, attend (self included)
            detail::matvec(a_.data(), lw.wq.data(), d, d, q_.data());
            detail::matvec(a_.data(), lw.wk.data(), d, d, k_.data());
            detail::matvec(a_.data(), lw.wv.data(), d, d, v_.data());
            rope_inplace(q_.data(), h, dh, pos, cfg.rope_base);
            rope_inplace(k_.data(), h, dh, pos, cfg.rope_base);
            if (to_prompt)
                cache_.append_prompt(int64_t(l), k_.data(), v_.data());
            else
                cache_.append_step(int64_t(l), k_.data(), v_.data());
            const auto& seg = cache_.layer(int64_t(l));
            const int64_t np = cache_.prompt_len(), ns = cache_.step_len();
            const auto t_attn = std::chrono::steady_clock::now();
            for (int64_t hh = 0; hh < h; ++hh) {
                const T* pk = np ? seg.prompt_k.data() + hh * dh : nullptr;
                const T* pv = np ? seg.prompt_v.data() + hh * dh : nullptr;
                const T* sk = ns ? seg.step_k.data() + hh * dh : nullptr;
                const T* sv = ns ? seg.step_v.data() + hh * dh : nullptr;
                softmax_attend(q_.data() + hh * dh, dh, d, pk, pv, np, sk, sv, ns,
                               tmp_.data() + hh * dh, scores_, stats_);
            }
            if (stats_)
                stats_->attention_seconds +=
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t_attn)
                        .count();

            // state path: read pre-update, then accumulate this token
            if (opt_.la_enabled) {
                detail::matvec(a_.data(), lw.la_wq.data(), d, d, q_.data());
                detail::matvec(a_.data(), lw.la_wk.data(), d, d, k_.data());
                detail::matvec(a_.data(), lw.la_wv.data(), d, d, v_.data());
                for (int64_t hh = 0; hh < h; ++hh) {
                    T* S = states_.head_matrix(int64_t(l), hh);
                    state_read(q_.data() + hh * dh, S, dh, o_.data() + hh * dh);
                    state_accumulate(S, k_.data() + hh * dh, v_.data() + hh * dh, dh);
                }
                if (opt_.gate_zero) {
                    for (int64_t j = 0; j < d; ++j) o_[size_t(j)] = T(0);
                } else {
                    detail::matvec(a_.data(), lw.gate_w.data(), d, d, mix_.data());
                    for (int64_t j = 0; j < d; ++j) {
                        const T g = T(1) / (T(1) + std::exp(-mix_[size_t(j)]));
                        o_[size_t(j)] = g * o_[size_t(j)];
                    }
                }
                for (int64_t j = 0; j < d; ++j) o_[size_t(j)] += tmp_[size_t(j)];
            } else {
                for (int64_t j = 0; j < d; ++j) o_[size_t(j)] = tmp_[size_t(j)];
            }
            detail::matvec(o_.data(), lw.wo.data(), d, d, mix_.data());
            for (int64_t j = 0; j < d; ++j) x_[size_t(j)] += mix_[size_t(j)];

            // gated feed-forward
            detail::rmsnorm_vec(x_.data(), lw.ffn_gain.data(), d, a_.data());
            detail::matvec(a_.data(), lw.w1.data(), d, cfg.d_ff, ff1_.data());
            detail::matvec(a_.data(), lw.w3.data(), d, cfg.d_ff, ff3_.data());
            for (int64_t j = 0; j < cfg.d_ff; ++j) {
                const T u = ff1_[size_t(j)];
                const T s = T(1) / (T(1) + std::exp(-u));
                ff1_[size_t(j)] = u * s * ff3_[size_t(j)];
            }
            detail::matvec(ff1_.data(), lw.w2.data(), cfg.d_ff, d, tmp_.data());
            for (int64_t j = 0; j < d; ++j) x_[size_t(j)] += tmp_[size_t(j)];
        }
        detail::rmsnorm_vec(x_.data(), w_.final_gain.data(), d, a_.data());
        detail::matvec(a_.data(), w_.head.data(), d, cfg.vocab_total(), logits_.data());
        ++tokens_;
        if (stats_) {
            stats_->tokens_processed += 1;
            const int64_t held = cache_.total_positions();
            if (held > stats_->cache_positions_peak) stats_->cache_positions_peak = held;
            stats_->total_seconds +=
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        }
    }

    const EngineWeights<T>& w_;
    EngineOptions opt_;
    PerfStats* stats_;
    KvCache<T> cache_;
    StateSet<T> states_;
    StepLedger<T> ledger_;
    bool prefilled_ = false;
    int64_t tokens_ = 0;
    std::vector<T> x_, a_, q_, k_, v_, o_, mix_, tmp_, ff1_, ff3_, logits_;
    std::vector<T> scores_;
};

// greedy argmax or nucleus sampling over the allowed ids; deterministic for
// a given rng state (ties resolve to the lowest id)
template <class T>
int64_t decode_token(const std::vector<T>& logits, const std::vector<char>& allowed,
                     const DecodePolicy& policy, Rng& rng) {
    const int64_t v = int64_t(logits.size());
    if (int64_t(allowed.size()) != v) throw std::invalid_argument("decode_token: mask size mismatch");
    if (policy.kind == DecodePolicy::Kind::greedy) {
        int64_t best = -1;
        for (int64_t i = 0; i < v; ++i) {
            if (!allowed[size_t(i)]) continue;
            if (best < 0 || double(logits[size_t(i)]) > double(logits[size_t(best)])) best = i;
        }
        if (best < 0) throw std::invalid_argument("decode_token: no token is allowed");
        return best;
    }
    // nucleus: softmax at temperature, keep the smallest prefix of the
    // probability-sorted vocabulary reaching top_p, renormalize, sample
    if (policy.temperature <= 0.0) throw std::invalid_argument("decode_token: temperature must be positive");
    std::vector<std::pair<double, int64_t>> items;
    items.reserve(size_t(v));
    bool any = false;
    double mx = 0.0;
    for (int64_t i = 0; i < v; ++i) {
        if (!allowed[size_t(i)]) continue;
        const double li = double(logits[size_t(i)]);
        if (!any || li > mx) mx = li;
        any = true;
    }
    if (!any) throw std::invalid_argument("decode_token: no token is allowed");
    double z = 0.0;
    for (int64_t i = 0; i < v; ++i) {
        if (!allowed[size_t(i)]) continue;
        const double p = std::exp((double(logits[size_t(i)]) - mx) / policy.temperature);
        items.emplace_back(p, i);
        z += p;
    }
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    double cum = 0.0;
    size_t cut = items.size();
    for (size_t i = 0; i < items.size(); ++i) {
        cum += items[i].first / z;
        if (cum >= policy.top_p) {
            cut = i + 1;
            break;
        }
    }
    double zk = 0.0;
    for (size_t i = 0; i < cut; ++i) zk += items[i].first;
    const double r = rng.next_double() * zk;
    double acc = 0.0;
    for (size_t i = 0; i < cut; ++i) {
        acc += items[i].first;
        if (r < acc) return items[i].second;
    }
    return items[cut - 1].second;
}

// structure-constrained generation resumed after a forced chain of steps:
// each prefix entry is one complete step (opening pattern token through its
// matching end token) pushed through the step machinery before free decoding
// takes over; every decoded step opens with a pattern token and closes with
// its end token, and the answer region is the final retained step
template <class T>
GenerationTrace generate_continue(const EngineWeights<T>& w, const EngineOptions& opt,
                                  const std::vector<int64_t>& prompt,
                                  const std::vector<std::vector<int64_t>>& prefix_steps,
                                  const DecodePolicy& policy, PerfStats* stats = nullptr) {
    const ModelConfig& cfg = w.cfg;
    const SpecialTokenTable table(cfg);
    if (policy.diversity && cfg.patterns < 2)
        throw std::invalid_argument("generate: diversity needs at least two patterns");
    GenerationContext<T> ctx(w, opt, stats);
    ctx.prefill(prompt);
    Rng rng(policy.seed);

    GenerationTrace trace;
    trace.prompt = prompt;
    trace.sampled = policy.kind == DecodePolicy::Kind::nucleus;
    trace.correction = opt.correction.enabled;
    trace.diversity = policy.diversity;
    trace.alpha_max = opt.correction.alpha_max;
    trace.t_max = opt.correction.t_max;
    trace.seed = policy.seed;

    const int64_t vt = cfg.vocab_total();
    std::vector<char> allowed(static_cast<size_t>(vt), 0);
    int64_t prev_pattern = -1;

    for (const auto& toks : prefix_steps) {
        if (toks.size() < 2) throw std::invalid_argument("generate: forced step too short");
        const int64_t pattern = table.pattern_of(toks.front());
        if (toks.back() != table.end_id(pattern))
            throw std::invalid_argument("generate: forced step not closed by its end token");
        TraceStep step;
        step.pattern = pattern;
        const auto t0 = std::chrono::steady_clock::now();
        ctx.open_step();
        for (int64_t tok : toks) ctx.push(tok);
        step.tokens = toks;
        step.cache_peak = ctx.cache().total_positions();
        const StepInfo info = ctx.close_step();
        step.step_index = info.step_index;
        step.alpha = info.alpha;
        step.raw_delta_norm = info.raw_delta_norm;
        step.reward = info.reward;
        step.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
        trace.steps.push_back(std::move(step));
        prev_pattern = pattern;
    }

    auto open_decision = [&]() -> int64_t {
        std::fill(allowed.begin(), allowed.end(), 0);
        for (int64_t p = 1; p <= cfg.patterns; ++p) allowed[size_t(table.start_id(p))] = 1;
        allowed[size_t(cfg.answer_start_id)] = 1;
        if (policy.diversity && prev_pattern >= 1)
            diversity_filter(allowed, table.start_id(prev_pattern));
        return decode_token(ctx.logits(), allowed, policy, rng);
    };

    while (true) {
        int64_t tok;
        if (ctx.ledger().steps_completed() >= opt.correction.t_max) {
            tok = cfg.answer_start_id;  // step budget exhausted
            trace.answer_forced = true;
        } else {
            tok = open_decision();
        }
        if (tok == cfg.answer_start_id) break;

        const int64_t pattern = table.pattern_of(tok);
        TraceStep step;
        step.pattern = pattern;
        const auto t0 = std::chrono::steady_clock::now();
        ctx.open_step();
        ctx.push(tok);
        step.tokens.push_back(tok);
        const int64_t end_tok = table.end_id(pattern);
        while (true) {
            if (int64_t(step.tokens.size()) >= cfg.step_token_limit - 1) {
                ctx.push(end_tok);  // inject the closing token at the limit
                step.tokens.push_back(end_tok);
                step.truncated = true;
                break;
            }
            std::fill(allowed.begin(), allowed.end(), 1);
            for (int64_t p = 1; p <= cfg.patterns; ++p) {
                allowed[size_t(table.start_id(p))] = 0;
                if (p != pattern) allowed[size_t(table.end_id(p))] = 0;
            }
            allowed[size_t(cfg.answer_start_id)] = 0;
            allowed[size_t(cfg.eos_id)] = 0;
            const int64_t body = decode_token(ctx.logits(), allowed, policy, rng);
            ctx.push(body);
            step.tokens.push_back(body);
            if (body == end_tok) break;
        }
        step.cache_peak = ctx.cache().total_positions();
        const StepInfo info = ctx.close_step();
        step.step_index = info.step_index;
        step.alpha = info.alpha;
        step.raw_delta_norm = info.raw_delta_norm;
        step.reward = info.reward;
        step.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
        trace.steps.push_back(std::move(step));
        prev_pattern = pattern;
    }

    // answer region: one final step whose kv survives until the end
    ctx.open_step();
    ctx.push(cfg.answer_start_id);
    trace.answer.push_back(cfg.answer_start_id);
    while (true) {
        if (int64_t(trace.answer.size()) >= cfg.answer_token_limit) {
            trace.answer_truncated = true;
            break;
        }
        std::fill(allowed.begin(), allowed.end(), 1);
        for (int64_t p = 1; p <= cfg.patterns; ++p) {
            allowed[size_t(table.start_id(p))] = 0;
            allowed[size_t(table.end_id(p))] = 0;
        }
        allowed[size_t(cfg.answer_start_id)] = 0;
        const int64_t tok = decode_token(ctx.logits(), allowed, policy, rng);
        ctx.push(tok);
        trace.answer.push_back(tok);
        if (tok == cfg.eos_id) break;
    }
    return trace;
}

template <class T>
GenerationTrace generate(const EngineWeights<T>& w, const EngineOptions& opt,
                         const std::vector<int64_t>& prompt, const DecodePolicy& policy,
                         PerfStats* stats = nullptr) {
    return generate_continue(w, opt, prompt, {}, policy, stats);
}

// free-running decode without step structure; the shape used by the
// unmodified transformer and the compat configuration
template <class T>
std::vector<int64_t> generate_free(const EngineWeights<T>& w, const EngineOptions& opt,
                                   const std::vector<int64_t>& prompt, int64_t max_new_tokens,
                                   const DecodePolicy& policy, PerfStats* stats = nullptr) {
    if (opt.attention != AttentionKind::full)
        throw std::invalid_argument("generate_free: requires full attention mode");
    GenerationContext<T> ctx(w, opt, stats);
    ctx.prefill(prompt);
    Rng rng(policy.seed);
    std::vector<char> allowed(static_cast<size_t>(w.cfg.vocab_total()), 1);
    std::vector<int64_t> out;
    for (int64_t i = 0; i < max_new_tokens; ++i) {
        const int64_t tok = decode_token(ctx.logits(), allowed, policy, rng);
        out.push_back(tok);
        if (tok == w.cfg.eos_id) break;
        ctx.push(tok);
    }
    return out;
}

// teacher-forced pass with the generation-side step discipline: spans drive
// open/close/evict, the final span is the retained answer region. Returns
// the logits after every position.
template <class T>
std::vector<std::vector<T>> forced_forward(const EngineWeights<T>& w, const EngineOptions& opt,
                                           const std::vector<int64_t>& tokens, int64_t prompt_len,
                                           const std::vector<Span>& spans,
                                           PerfStats* stats = nullptr) {
    validate_spans(prompt_len, spans, int64_t(tokens.size()));
    if (prompt_len < 1) throw std::invalid_argument("forced_forward: empty prompt");
    GenerationContext<T> ctx(w, opt, stats);
    std::vector<std::vector<T>> out;
    out.reserve(tokens.size());
    ctx.prefill(std::vector<int64_t>(tokens.begin(), tokens.begin() + prompt_len), &out);
    const bool stepwise = opt.attention == AttentionKind::stepwise;
    for (size_t s = 0; s < spans.size(); ++s) {
        if (stepwise) ctx.open_step();
        for (int64_t i = spans[s].begin; i < spans[s].end; ++i) {
            ctx.push(tokens[size_t(i)]);
            out.push_back(ctx.logits());
        }
        // the last span is the answer region: its kv is never evicted
        if (stepwise && s + 1 != spans.size()) ctx.close_step();
    }
    return out;
}

}  // namespace stf
