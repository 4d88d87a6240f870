#pragma once

#include "tg3d/common.hpp"
#include "tg3d/params.hpp"
#include "tg3d/rng.hpp"

#include <vector>

namespace tg3d {

struct MlpGrads {
    std::vector<Mat> dW;
    std::vector<Vec> db;

    void add(const MlpGrads& o) {
        for (size_t i = 0; i < dW.size(); ++i) {
            dW[i] += o.dW[i];
            db[i] += o.db[i];
        }
    }
    void scale(double s) {
        for (size_t i = 0; i < dW.size(); ++i) {
            dW[i] *= s;
            db[i] *= s;
        }
    }
    ParamSet param_set(const std::string& prefix);
};

// Fully connected net, tanh on hidden layers, linear output. Batches are
// stored column-wise (dim x n).
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::vector<int>& dims, Rng& rng);

    struct Cache {
        Mat input;
        std::vector<Mat> pre;  // pre-activations per layer
        std::vector<Mat> post; // tanh outputs per hidden layer
    };

    Mat forward(const Mat& x, Cache* cache = nullptr) const;
    Vec forward1(const Vec& x) const;

    // dY is (out_dim x n); accumulates parameter grads into g, returns dX.
    Mat backward(const Mat& dy, const Cache& cache, MlpGrads& g) const;

    // Gradient of the scalar output w.r.t. the input, one sample (out_dim 1).
    Vec input_gradient(const Vec& x) const;

    MlpGrads zero_grads() const;
    ParamSet param_set(const std::string& prefix);
    ParamSet param_set(const std::string& prefix) const;

    int in_dim() const { return W.empty() ? 0 : static_cast<int>(W.front().cols()); }
    int out_dim() const { return W.empty() ? 0 : static_cast<int>(W.back().rows()); }
    size_t depth() const { return W.size(); }

    std::vector<Mat> W;
    std::vector<Vec> b;
};

} // namespace tg3d
