#include <cmath>
#include <vector>

#include "doctest.h"
#include "stateformer/cluster.hpp"
#include "stateformer/rng.hpp"
#include "stateformer/sample.hpp"

using namespace stf;

namespace {

std::vector<double> unit(std::vector<double> v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    for (double& x : v) x /= std::sqrt(ss);
    return v;
}

// points scattered in a small cone around a unit direction
std::vector<std::vector<double>> blob(const std::vector<double>& dir, int64_t n, Rng& rng,
                                      double spread = 0.05) {
    std::vector<std::vector<double>> pts;
    for (int64_t i = 0; i < n; ++i) {
        std::vector<double> p = dir;
        for (double& x : p) x += spread * rng.next_normal();
        pts.push_back(unit(p));
    }
    return pts;
}

}  // namespace

TEST_CASE("four well-separated blobs are recovered exactly") {
    Rng rng(5);
    std::vector<std::vector<double>> dirs = {
        unit({1, 0, 0, 0, 0, 0}), unit({0, 1, 0, 0, 0, 0}),
        unit({0, 0, 1, 0, 0, 0}), unit({0, 0, 0, 1, 0, 0})};
    std::vector<std::vector<double>> pts;
    std::vector<int64_t> truth;
    for (size_t d = 0; d < dirs.size(); ++d) {
        for (auto& p : blob(dirs[d], 40, rng)) {
            pts.push_back(p);
            truth.push_back(int64_t(d) + 1);
        }
    }
    KmeansOptions opt;
    opt.k = 4;
    opt.seed = 17;
    auto res = minibatch_kmeans(pts, opt);
    std::vector<int64_t> assigned;
    for (int64_t a : res.assignment) assigned.push_back(a + 1);
    CHECK(pattern_agreement(truth, assigned, 4) == doctest::Approx(1.0));
    CHECK(res.inertia / double(pts.size()) < 0.01);
}

TEST_CASE("k equal to the point count drives inertia to zero") {
    Rng rng(9);
    std::vector<std::vector<double>> pts;
    for (int64_t i = 0; i < 12; ++i) {
        std::vector<double> p(5);
        for (auto& x : p) x = rng.next_normal();
        pts.push_back(unit(p));
    }
    KmeansOptions opt;
    opt.k = 12;
    opt.seed = 3;
    auto res = minibatch_kmeans(pts, opt);
    CHECK(res.inertia < 1e-12);
}

TEST_CASE("the objective never increases across refinement passes") {
    Rng rng(23);
    std::vector<std::vector<double>> pts;
    for (int64_t i = 0; i < 90; ++i) {
        std::vector<double> p(8);
        for (auto& x : p) x = rng.next_normal();
        pts.push_back(unit(p));
    }
    KmeansOptions opt;
    opt.k = 5;
    opt.seed = 77;
    opt.refine_iters = 12;
    auto res = minibatch_kmeans(pts, opt);
    REQUIRE(res.objective_history.size() == 12);
    for (size_t i = 1; i < res.objective_history.size(); ++i)
        CHECK(res.objective_history[i] <= res.objective_history[i - 1] + 1e-12);
    CHECK(res.inertia == doctest::Approx(res.objective_history.back()).epsilon(1e-9));
}

TEST_CASE("centroids stay unit length") {
    Rng rng(41);
    std::vector<std::vector<double>> pts;
    for (int64_t i = 0; i < 60; ++i) {
        std::vector<double> p(7);
        for (auto& x : p) x = rng.next_normal();
        pts.push_back(unit(p));
    }
    KmeansOptions opt;
    opt.k = 6;
    opt.seed = 8;
    auto res = minibatch_kmeans(pts, opt);
    for (const auto& c : res.centroids) {
        double ss = 0.0;
        for (double x : c) ss += x * x;
        CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-9);
    }
}

TEST_CASE("a duplicated heavy pile does not swallow the other blobs") {
    Rng rng(13);
    std::vector<std::vector<double>> pts;
    std::vector<int64_t> truth;
    const auto heavy = unit({1, 1, 0, 0});
    for (int64_t i = 0; i < 100; ++i) {
        pts.push_back(heavy);  // exact duplicates
        truth.push_back(1);
    }
    std::vector<std::vector<double>> dirs = {unit({-1, 1, 0, 0}), unit({0, 0, 1, 0}),
                                             unit({0, 0, 0, 1})};
    for (size_t d = 0; d < dirs.size(); ++d) {
        for (auto& p : blob(dirs[d], 8, rng, 0.02)) {
            pts.push_back(p);
            truth.push_back(int64_t(d) + 2);
        }
    }
    KmeansOptions opt;
    opt.k = 4;
    opt.seed = 29;
    auto res = minibatch_kmeans(pts, opt);
    std::vector<int64_t> assigned;
    for (int64_t a : res.assignment) assigned.push_back(a + 1);
    CHECK(pattern_agreement(truth, assigned, 4) == doctest::Approx(1.0));
}

TEST_CASE("degenerate clustering inputs are rejected") {
    std::vector<std::vector<double>> pts = {unit({1, 0}), unit({0, 1})};
    KmeansOptions opt;
    opt.k = 3;
    CHECK_THROWS_AS(minibatch_kmeans(pts, opt), std::invalid_argument);
    opt.k = 0;
    CHECK_THROWS_AS(minibatch_kmeans(pts, opt), std::invalid_argument);
    CHECK_THROWS_AS(minibatch_kmeans({}, KmeansOptions{}), std::invalid_argument);
    std::vector<std::vector<double>> ragged = {unit({1, 0}), unit({0, 1, 0})};
    KmeansOptions ro;
    ro.k = 1;
    CHECK_THROWS_AS(minibatch_kmeans(ragged, ro), std::invalid_argument);
}

TEST_CASE("clustering is deterministic for a fixed seed") {
    Rng rng(55);
    std::vector<std::vector<double>> pts;
    for (int64_t i = 0; i < 40; ++i) {
        std::vector<double> p(6);
        for (auto& x : p) x = rng.next_normal();
        pts.push_back(unit(p));
    }
    KmeansOptions opt;
    opt.k = 3;
    opt.seed = 101;
    auto a = minibatch_kmeans(pts, opt);
    auto b = minibatch_kmeans(pts, opt);
    CHECK(a.centroids == b.centroids);
    CHECK(a.assignment == b.assignment);
    CHECK(a.inertia == b.inertia);
}
