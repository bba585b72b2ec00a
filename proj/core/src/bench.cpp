#include "stateformer/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace stf {

std::atomic<int64_t>& active_worker_pools() {
    static std::atomic<int64_t> n{0};
    return n;
}

uint64_t attention_macs_analytic(const ModelConfig& cfg, bool stepwise, int64_t prompt_len,
                                 int64_t step_body, int64_t target_len) {
    cfg.validate();
    if (prompt_len < 1 || target_len < prompt_len)
        throw std::invalid_argument("attention_macs_analytic: bad prompt/target lengths");
    if (stepwise && step_body < 1)
        throw std::invalid_argument("attention_macs_analytic: step_body must be positive");

    auto tri = [](int64_t n) { return n * (n + 1) / 2; };  // sum 1..n
    int64_t attended = tri(prompt_len);                    // prefill: token t sees t positions
    if (!stepwise) {
        attended = tri(target_len);
    } else {
        const int64_t gen = target_len - prompt_len;
        const int64_t full_steps = gen / step_body;
        const int64_t rem = gen % step_body;
        // step token j sees the prompt plus j step positions (itself included)
        attended += full_steps * (prompt_len * step_body + tri(step_body));
        attended += prompt_len * rem + tri(rem);
    }
    // per attended position: d_head score macs plus d_head value macs, per head
    return uint64_t(attended) * uint64_t(2 * cfg.d_model * cfg.layers);
}

int64_t cache_bytes_estimate(const ModelConfig& cfg, bool stepwise, int64_t positions_peak,
                             int64_t scalar_bytes) {
    int64_t bytes = positions_peak * cfg.layers * 2 * cfg.d_model * scalar_bytes;
    if (stepwise) bytes += cfg.layers * cfg.heads * cfg.d_head() * cfg.d_head() * scalar_bytes;
    return bytes;
}

double median_of(std::vector<double> xs) {
    if (xs.empty()) throw std::invalid_argument("median_of: empty");
    std::sort(xs.begin(), xs.end());
    const size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::vector<double> polyfit(const std::vector<double>& xs, const std::vector<double>& ys,
                            int64_t degree) {
    if (degree < 0 || degree > 4) throw std::invalid_argument("polyfit: degree outside 0..4");
    if (xs.size() != ys.size() || int64_t(xs.size()) < degree + 1)
        throw std::invalid_argument("polyfit: need more points than coefficients");

    double xmax = 0.0;
    for (double x : xs) xmax = std::max(xmax, std::abs(x));
    if (xmax == 0.0) xmax = 1.0;

    const int64_t m = degree + 1;
    std::vector<double> a(static_cast<size_t>(m * m), 0.0);
    std::vector<double> b(static_cast<size_t>(m), 0.0);
    for (size_t p = 0; p < xs.size(); ++p) {
        const double u = xs[p] / xmax;
        std::vector<double> pw(static_cast<size_t>(m), 1.0);
        for (int64_t i = 1; i < m; ++i) pw[size_t(i)] = pw[size_t(i - 1)] * u;
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < m; ++j) a[size_t(i * m + j)] += pw[size_t(i)] * pw[size_t(j)];
            b[size_t(i)] += pw[size_t(i)] * ys[p];
        }
    }

    // gaussian elimination with partial pivoting on the (m x m) normal system
    for (int64_t col = 0; col < m; ++col) {
        int64_t piv = col;
        for (int64_t r = col + 1; r < m; ++r)
            if (std::abs(a[size_t(r * m + col)]) > std::abs(a[size_t(piv * m + col)])) piv = r;
        if (std::abs(a[size_t(piv * m + col)]) < 1e-300)
            throw std::runtime_error("polyfit: singular normal equations");
        if (piv != col) {
            for (int64_t j = 0; j < m; ++j)
                std::swap(a[size_t(col * m + j)], a[size_t(piv * m + j)]);
            std::swap(b[size_t(col)], b[size_t(piv)]);
        }
        for (int64_t r = col + 1; r < m; ++r) {
            const double f = a[size_t(r * m + col)] / a[size_t(col * m + col)];
            for (int64_t j = col; j < m; ++j) a[size_t(r * m + j)] -= f * a[size_t(col * m + j)];
            b[size_t(r)] -= f * b[size_t(col)];
        }
    }
    std::vector<double> coef(static_cast<size_t>(m), 0.0);
    for (int64_t r = m - 1; r >= 0; --r) {
        double s = b[size_t(r)];
        for (int64_t j = r + 1; j < m; ++j) s -= a[size_t(r * m + j)] * coef[size_t(j)];
        coef[size_t(r)] = s / a[size_t(r * m + r)];
    }
    // unscale: coef_k / xmax^k maps u-space back to x-space
    double scale = 1.0;
    for (int64_t k = 0; k < m; ++k) {
        coef[size_t(k)] /= scale;
        scale *= xmax;
    }
    return coef;
}

double polyval(const std::vector<double>& coef, double x) {
    double y = 0.0;
    for (size_t k = coef.size(); k-- > 0;) y = y * x + coef[k];
    return y;
}

double r_squared(const std::vector<double>& xs, const std::vector<double>& ys,
                 const std::vector<double>& coef) {
    if (xs.size() != ys.size() || xs.empty())
        throw std::invalid_argument("r_squared: empty or mismatched data");
    double mean = 0.0;
    for (double y : ys) mean += y;
    mean /= double(ys.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double e = ys[i] - polyval(coef, xs[i]);
        ss_res += e * e;
        const double d = ys[i] - mean;
        ss_tot += d * d;
    }
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "context_len,mode,per_token_ms,cache_positions_peak,cache_bytes_est,flops_analytic\n";
    char buf[256];
    for (const auto& r : rows) {
        if (r.skipped) continue;
        std::snprintf(buf, sizeof(buf), "%lld,%s,%.6f,%lld,%lld,%llu\n",
                      static_cast<long long>(r.context_len), r.mode.c_str(), r.per_token_ms,
                      static_cast<long long>(r.cache_positions_peak),
                      static_cast<long long>(r.cache_bytes_est),
                      static_cast<unsigned long long>(r.flops_analytic));
        f << buf;
    }
}

void write_bench_gnuplot(const std::string& path, const std::string& csv_path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "set datafile separator \",\"\n"
      << "set key left top\n"
      << "set xlabel \"context length (tokens)\"\n"
      << "set ylabel \"per-token latency (ms)\"\n"
      << "set grid\n"
      << "plot \"" << csv_path
      << "\" using 1:(strcol(2) eq \"baseline\" ? $3 : 1/0) with linespoints title \"baseline\", \\\n"
      << "     \"" << csv_path
      << "\" using 1:(strcol(2) eq \"mam\" ? $3 : 1/0) with linespoints title \"mam\"\n";
}

}  // namespace stf
