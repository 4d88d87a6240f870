#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tg3d {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Arr = Eigen::ArrayXd;

inline void check(bool cond, const std::string& msg) {
    if (!cond)
        throw std::runtime_error(msg);
}

// FNV-1a over raw bytes. Used for parameter hashing and seed derivation.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return fnv1a(&b, sizeof(b), fnv1a(&a, sizeof(a)));
}

} // namespace tg3d
