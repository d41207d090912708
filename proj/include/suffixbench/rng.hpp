#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "suffixbench/common.hpp"

namespace suffixbench {

// Deterministic RNG stream. Distribution transforms are hand-rolled so that a
// fixed seed produces the exact same draws on every standard library.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0,1), 53-bit resolution.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi], inclusive. Rejection sampling keeps it unbiased.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw Error("uniform_int: empty range");
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % span);
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit && span != 0);
        return lo + static_cast<std::int64_t>(x % span);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    double normal() {
        // Box-Muller; one draw per call, the pair's second half is discarded
        // to keep stream consumption independent of call history.
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1 + 1e-300));
        return r * std::cos(2.0 * M_PI * u2);
    }

    double gumbel() {
        double u = uniform01();
        return -std::log(-std::log(u + 1e-300) + 1e-300);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Named substream of a master seed. Separate streams keep independent parts of
// a run (parameter init, dropout, masking, splits) from perturbing each other.
inline RngStream substream(std::uint64_t master_seed, const std::string& label) {
    std::uint64_t h = fnv1a64(label);
    return RngStream(master_seed ^ (h | 1ull));
}

inline RngStream substream(std::uint64_t master_seed, const std::string& label, std::uint64_t index) {
    std::uint64_t h = fnv1a64(label);
    h = fnv1a64(&index, sizeof(index), h);
    return RngStream(master_seed ^ (h | 1ull));
}

}  // namespace suffixbench
