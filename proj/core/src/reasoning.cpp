#include "stateformer/reasoning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stf {

std::vector<int64_t> prune_keep_indices(const std::vector<double>& rewards, double keep_fraction) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
        throw std::invalid_argument("prune_keep_indices: keep_fraction must lie in (0, 1]");
    const int64_t n = int64_t(rewards.size());
    if (n == 0) throw std::invalid_argument("prune_keep_indices: no steps");
    const int64_t keep = int64_t(std::ceil(keep_fraction * double(n)));
    // removal order: lowest reward first; among equal rewards drop the later
    // step, so the earlier one survives the cut
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (rewards[size_t(a)] != rewards[size_t(b)]) return rewards[size_t(a)] < rewards[size_t(b)];
        return a > b;
    });
    std::vector<bool> removed(size_t(n), false);
    for (int64_t i = 0; i < n - keep; ++i) removed[size_t(order[size_t(i)])] = true;
    std::vector<int64_t> kept;
    kept.reserve(size_t(keep));
    for (int64_t i = 0; i < n; ++i)
        if (!removed[size_t(i)]) kept.push_back(i);
    return kept;
}

double sample_quality(const std::vector<double>& rewards) {
    if (rewards.empty()) throw std::invalid_argument("sample_quality: no steps");
    double s = 0.0;
    for (double r : rewards) s += r;
    return s / double(rewards.size());
}

}  // namespace stf
