#include "stateformer/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stateformer/rng.hpp"

namespace stf {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// returns false when the vector is too small to carry a direction
bool renormalize(std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    if (!(ss > 1e-24)) return false;
    const double inv = 1.0 / std::sqrt(ss);
    for (double& x : v) x *= inv;
    return true;
}

int64_t nearest(const std::vector<std::vector<double>>& centroids, const std::vector<double>& p) {
    int64_t best = 0;
    double best_sim = -2.0;
    for (size_t c = 0; c < centroids.size(); ++c) {
        const double s = dot(centroids[c], p);
        if (s > best_sim) {
            best_sim = s;
            best = int64_t(c);
        }
    }
    return best;
}

}  // namespace

KmeansResult minibatch_kmeans(const std::vector<std::vector<double>>& points,
                              const KmeansOptions& opt) {
    const int64_t n = int64_t(points.size());
    if (n < 1) throw std::invalid_argument("minibatch_kmeans: no points");
    if (opt.k < 1) throw std::invalid_argument("minibatch_kmeans: k < 1");
    if (opt.k > n) throw std::invalid_argument("minibatch_kmeans: k exceeds the point count");
    const size_t dim = points[0].size();
    for (const auto& p : points)
        if (p.size() != dim) throw std::invalid_argument("minibatch_kmeans: ragged point dims");

    Rng rng(opt.seed);

    // init: k distinct points via partial Fisher-Yates
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int64_t i = 0; i < opt.k; ++i) {
        const size_t j = size_t(i) + rng.next_index(size_t(n - i));
        std::swap(order[size_t(i)], order[j]);
    }
    std::vector<std::vector<double>> centroids;
    for (int64_t c = 0; c < opt.k; ++c) centroids.push_back(points[size_t(order[size_t(c)])]);

    // streaming phase: per-centroid running means with decaying step size
    std::vector<int64_t> wins(static_cast<size_t>(opt.k), 0);
    const int64_t batch = std::max<int64_t>(1, std::min(opt.batch_size, n));
    for (int64_t it = 0; it < opt.minibatch_iters; ++it) {
        for (int64_t b = 0; b < batch; ++b) {
            const auto& p = points[rng.next_index(size_t(n))];
            const int64_t c = nearest(centroids, p);
            auto& ctr = centroids[size_t(c)];
            const double eta = 1.0 / double(++wins[size_t(c)]);
            std::vector<double> prev = ctr;
            for (size_t i = 0; i < dim; ++i) ctr[i] = (1.0 - eta) * ctr[i] + eta * p[i];
            if (!renormalize(ctr)) ctr = prev;  // antipodal collapse: keep the old direction
        }
    }

    // full-batch refinement; the objective is non-increasing across passes
    KmeansResult res;
    res.assignment.assign(static_cast<size_t>(n), 0);
    for (int64_t pass = 0; pass < std::max<int64_t>(1, opt.refine_iters); ++pass) {
        for (int64_t i = 0; i < n; ++i)
            res.assignment[size_t(i)] = nearest(centroids, points[size_t(i)]);

        std::vector<std::vector<double>> sums(static_cast<size_t>(opt.k),
                                              std::vector<double>(dim, 0.0));
        std::vector<int64_t> counts(static_cast<size_t>(opt.k), 0);
        for (int64_t i = 0; i < n; ++i) {
            const size_t c = size_t(res.assignment[size_t(i)]);
            counts[c] += 1;
            for (size_t d = 0; d < dim; ++d) sums[c][d] += points[size_t(i)][d];
        }
        for (int64_t c = 0; c < opt.k; ++c)
            if (counts[size_t(c)] > 0 && renormalize(sums[size_t(c)]))
                centroids[size_t(c)] = sums[size_t(c)];

        // reseed empty clusters at the points farthest from their centroids
        std::vector<int64_t> empties;
        for (int64_t c = 0; c < opt.k; ++c)
            if (counts[size_t(c)] == 0) empties.push_back(c);
        if (!empties.empty()) {
            std::vector<int64_t> by_dist(static_cast<size_t>(n));
            std::iota(by_dist.begin(), by_dist.end(), 0);
            std::vector<double> dist(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i)
                dist[size_t(i)] =
                    1.0 - dot(points[size_t(i)], centroids[size_t(res.assignment[size_t(i)])]);
            std::sort(by_dist.begin(), by_dist.end(), [&](int64_t a, int64_t b) {
                if (dist[size_t(a)] != dist[size_t(b)]) return dist[size_t(a)] > dist[size_t(b)];
                return a < b;
            });
            for (size_t e = 0; e < empties.size() && e < size_t(n); ++e)
                centroids[size_t(empties[e])] = points[size_t(by_dist[e])];
        }

        double obj = 0.0;
        for (int64_t i = 0; i < n; ++i)
            obj += 1.0 - dot(points[size_t(i)], centroids[size_t(nearest(centroids, points[size_t(i)]))]);
        res.objective_history.push_back(obj);
    }

    for (int64_t i = 0; i < n; ++i)
        res.assignment[size_t(i)] = nearest(centroids, points[size_t(i)]);
    res.centroids = centroids;
    res.inertia = 0.0;
    for (int64_t i = 0; i < n; ++i)
        res.inertia += 1.0 - dot(points[size_t(i)], centroids[size_t(res.assignment[size_t(i)])]);
    return res;
}

}  // namespace stf
