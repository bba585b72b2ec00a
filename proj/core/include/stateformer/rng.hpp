#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace stf {

// mt19937_64 with hand-rolled draws. std::*_distribution is
// implementation-defined, which would break seed-reproducibility claims
// across standard libraries; these draws are fully specified.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1) with 53 random bits
    double next_double() { return double(gen_() >> 11) * 0x1.0p-53; }

    // uniform index in [0, n)
    size_t next_index(size_t n) {
        // rejection sampling, no modulo bias
        uint64_t bound = n;
        uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return size_t(x % bound);
    }

    // standard normal via Box-Muller
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925287 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double next_normal(double mean, double stddev) { return mean + stddev * next_normal(); }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace stf
