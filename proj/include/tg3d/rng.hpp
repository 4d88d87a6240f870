#pragma once

#include "tg3d/common.hpp"

#include <random>
#include <string_view>

namespace tg3d {

// All randomness flows from one root seed through named substreams so that
// every stage is reproducible in isolation from its resolved config.
inline uint64_t derive_seed(uint64_t root, std::string_view name, uint64_t index = 0) {
    uint64_t h = fnv1a(&root, sizeof(root));
    h = fnv1a(name.data(), name.size(), h);
    return fnv1a(&index, sizeof(index), h);
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : seed_(seed), gen_(seed) {}

    uint64_t seed() const { return seed_; }

    Rng substream(std::string_view name, uint64_t index = 0) const {
        return Rng(derive_seed(seed_, name, index));
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mu = 0.0, double sigma = 1.0) {
        return std::normal_distribution<double>(mu, sigma)(gen_);
    }
    // in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return std::uniform_int_distribution<int64_t>(lo, hi)(gen_);
    }
    bool bernoulli(double p) { return uniform() < p; }

    Vec normal_vec(int n, double sigma = 1.0) {
        Vec v(n);
        for (int i = 0; i < n; ++i)
            v[i] = normal(0.0, sigma);
        return v;
    }
    Mat normal_mat(int r, int c, double sigma = 1.0) {
        Mat m(r, c);
        for (int j = 0; j < c; ++j)
            for (int i = 0; i < r; ++i)
                m(i, j) = normal(0.0, sigma);
        return m;
    }

    std::mt19937_64& engine() { return gen_; }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

} // namespace tg3d
