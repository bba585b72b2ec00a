#pragma once

#include <cstdint>
#include <vector>

namespace stf {

struct KmeansOptions {
    int64_t k = 8;
    uint64_t seed = 2024;
    int64_t batch_size = 64;
    int64_t minibatch_iters = 200;
    int64_t refine_iters = 10;  // full-batch passes after the streaming phase
};

struct KmeansResult {
    std::vector<std::vector<double>> centroids;  // unit norm
    std::vector<int64_t> assignment;             // 0-based cluster per point
    double inertia = 0.0;                        // sum of (1 - cosine) over points
    std::vector<double> objective_history;       // objective after each full-batch pass
};

// spherical k-means over unit-norm points: cosine similarity, centroids
// renormalized after every update, deterministic for a fixed seed. Clusters
// left empty by a full-batch pass are reseeded at the points farthest from
// their assigned centroids. k must not exceed the point count.
KmeansResult minibatch_kmeans(const std::vector<std::vector<double>>& points,
                              const KmeansOptions& opt);

}  // namespace stf
