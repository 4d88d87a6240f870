#pragma once

#include "tg3d/common.hpp"

#include <string>
#include <vector>

namespace tg3d {

// Flat view over a named parameter (or gradient) buffer.
struct ParamView {
    std::string name;
    double* data = nullptr;
    long size = 0;
};
using ParamSet = std::vector<ParamView>;

inline uint64_t param_hash(const ParamSet& ps) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : ps) {
        h = fnv1a(p.name.data(), p.name.size(), h);
        h = fnv1a(p.data, static_cast<size_t>(p.size) * sizeof(double), h);
    }
    return h;
}

inline long param_count(const ParamSet& ps) {
    long n = 0;
    for (const auto& p : ps)
        n += p.size;
    return n;
}

} // namespace tg3d
