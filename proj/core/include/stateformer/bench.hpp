#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "stateformer/engine.hpp"

namespace stf {

// global guard: the latency sweep refuses to run while any worker pool is up,
// since background threads would corrupt single-threaded timing claims
std::atomic<int64_t>& active_worker_pools();

struct BenchConfig {
    std::vector<int64_t> lengths = {512, 1024, 2048, 4096, 8192};  // ascending
    int64_t reps = 5;         // measured repetitions per point (median taken)
    int64_t warmup_reps = 1;  // unmeasured run before the measured ones
    int64_t prompt_len = 32;
    int64_t step_body = 48;   // tokens pushed per step before it closes
    std::string csv_path, gnuplot_path;
};

struct BenchRow {
    int64_t context_len = 0;
    std::string mode;  // "baseline" or "mam"
    double per_token_ms = 0.0;
    double total_ms = 0.0;
    int64_t cache_positions_peak = 0;
    int64_t cache_bytes_est = 0;
    uint64_t flops_analytic = 0;
    uint64_t flops_measured = 0;
    bool skipped = false;
    std::string note;
};

struct BenchReport {
    std::vector<BenchRow> rows;

    std::vector<BenchRow> rows_for(const std::string& mode) const {
        std::vector<BenchRow> out;
        for (const auto& r : rows)
            if (r.mode == mode && !r.skipped) out.push_back(r);
        return out;
    }
};

// closed-form attention multiply-accumulate count for a scripted run:
// prompt prefill plus generation to target_len, step-shaped when stepwise
uint64_t attention_macs_analytic(const ModelConfig& cfg, bool stepwise, int64_t prompt_len,
                                 int64_t step_body, int64_t target_len);

// kv bytes at the held peak plus, in stepwise mode, the constant state matrices
int64_t cache_bytes_estimate(const ModelConfig& cfg, bool stepwise, int64_t positions_peak,
                             int64_t scalar_bytes);

// least squares polynomial coefficients (constant first); solved on a scaled
// abscissa for conditioning, returned in raw coordinates
std::vector<double> polyfit(const std::vector<double>& xs, const std::vector<double>& ys,
                            int64_t degree);
double polyval(const std::vector<double>& coef, double x);
double r_squared(const std::vector<double>& xs, const std::vector<double>& ys,
                 const std::vector<double>& coef);

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);
void write_bench_gnuplot(const std::string& path, const std::string& csv_path);

double median_of(std::vector<double> xs);

namespace detail_bench {

inline int64_t scripted_token(const ModelConfig& cfg, int64_t i) {
    return 2 + (i % (cfg.vocab_base - 2));
}

template <class T>
struct RepResult {
    double gen_ms = 0.0;
    PerfStats stats;
};

// one scripted run to exactly target_len processed tokens; generation time
// excludes the prompt prefill
template <class T>
RepResult<T> run_once(const EngineWeights<T>& ew, bool stepwise, int64_t prompt_len,
                      int64_t step_body, int64_t target_len) {
    EngineOptions opt;
    if (stepwise) {
        opt.attention = AttentionKind::stepwise;
        opt.la_enabled = true;
    } else {
        opt = EngineOptions::vanilla();
    }
    RepResult<T> res;
    GenerationContext<T> ctx(ew, opt, &res.stats);

    std::vector<int64_t> prompt;
    for (int64_t i = 0; i < prompt_len; ++i) prompt.push_back(scripted_token(ew.cfg, i));
    ctx.prefill(prompt);

    const auto t0 = std::chrono::steady_clock::now();
    int64_t i = prompt_len;
    while (ctx.tokens_processed() < target_len) {
        if (stepwise) {
            ctx.open_step();
            const int64_t room = target_len - ctx.tokens_processed();
            const int64_t body = std::min(step_body, room);
            for (int64_t j = 0; j < body; ++j) ctx.push(scripted_token(ew.cfg, i++));
            ctx.close_step();
        } else {
            ctx.push(scripted_token(ew.cfg, i++));
        }
    }
    const auto t1 = std::chrono::steady_clock::now();
    res.gen_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    return res;
}

}  // namespace detail_bench

// scripted-generation latency sweep over both attention modes. Lengths run
// ascending; targets beyond the context limit produce skipped rows with a
// note instead of measurements.
template <class T>
BenchReport latency_sweep(const ModelWeights& w, const BenchConfig& bc) {
    if (active_worker_pools().load() != 0)
        throw std::runtime_error(
            "latency_sweep: background worker pools are active; timing requires a single thread");
    if (bc.reps < 5) throw std::invalid_argument("latency_sweep: need at least 5 measured reps");
    if (bc.warmup_reps < 0) throw std::invalid_argument("latency_sweep: negative warmup");
    if (bc.prompt_len < 1 || bc.step_body < 1)
        throw std::invalid_argument("latency_sweep: prompt_len and step_body must be positive");
    if (bc.lengths.empty()) throw std::invalid_argument("latency_sweep: no lengths");
    for (size_t i = 1; i < bc.lengths.size(); ++i)
        if (bc.lengths[i] <= bc.lengths[i - 1])
            throw std::invalid_argument("latency_sweep: lengths must ascend");
    if (bc.lengths.front() <= bc.prompt_len)
        throw std::invalid_argument("latency_sweep: targets must exceed the prompt length");

    const EngineWeights<T> ew = EngineWeights<T>::from(w);
    BenchReport report;

    for (int64_t target : bc.lengths) {
        for (const bool stepwise : {false, true}) {
            BenchRow row;
            row.context_len = target;
            row.mode = stepwise ? "mam" : "baseline";
            if (target > w.cfg.context_limit) {
                row.skipped = true;
                row.note = "target exceeds context_limit " + std::to_string(w.cfg.context_limit);
                report.rows.push_back(row);
                continue;
            }
            for (int64_t r = 0; r < bc.warmup_reps; ++r)
                detail_bench::run_once<T>(ew, stepwise, bc.prompt_len, bc.step_body, target);
            std::vector<double> per_token, totals;
            for (int64_t r = 0; r < bc.reps; ++r) {
                auto rep = detail_bench::run_once<T>(ew, stepwise, bc.prompt_len, bc.step_body,
                                                     target);
                totals.push_back(rep.gen_ms);
                per_token.push_back(rep.gen_ms / double(target - bc.prompt_len));
                row.cache_positions_peak = rep.stats.cache_positions_peak;
                row.flops_measured = rep.stats.attention_macs;
            }
            row.per_token_ms = median_of(per_token);
            row.total_ms = median_of(totals);
            row.flops_analytic =
                attention_macs_analytic(w.cfg, stepwise, bc.prompt_len, bc.step_body, target);
            row.cache_bytes_est = cache_bytes_estimate(w.cfg, stepwise, row.cache_positions_peak,
                                                       int64_t(sizeof(T)));
            report.rows.push_back(row);
        }
    }

    if (!bc.csv_path.empty()) write_bench_csv(bc.csv_path, report.rows);
    if (!bc.gnuplot_path.empty() && !bc.csv_path.empty())
        write_bench_gnuplot(bc.gnuplot_path, bc.csv_path);
    return report;
}

}  // namespace stf
