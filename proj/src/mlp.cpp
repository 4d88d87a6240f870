#include "tg3d/mlp.hpp"

#include <cmath>

namespace tg3d {

Mlp::Mlp(const std::vector<int>& dims, Rng& rng) {
    check(dims.size() >= 2, "Mlp: need at least input and output dims");
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        double scale = std::sqrt(2.0 / (dims[i] + dims[i + 1]));
        W.push_back(rng.normal_mat(dims[i + 1], dims[i], scale));
        b.push_back(Vec::Zero(dims[i + 1]));
    }
}

Mat Mlp::forward(const Mat& x, Cache* cache) const {
    if (cache) {
        cache->input = x;
        cache->pre.clear();
        cache->post.clear();
    }
    Mat a = x;
    for (size_t i = 0; i < W.size(); ++i) {
        Mat u = (W[i] * a).colwise() + b[i];
        if (i + 1 < W.size()) {
            a = u.array().tanh().matrix();
            if (cache) {
                cache->pre.push_back(std::move(u));
                cache->post.push_back(a);
            }
        } else {
            a = std::move(u);
        }
    }
    return a;
}

Vec Mlp::forward1(const Vec& x) const { return forward(Mat(x)); }

Mat Mlp::backward(const Mat& dy, const Cache& cache, MlpGrads& g) const {
    Mat d = dy;
    for (size_t ii = W.size(); ii-- > 0;) {
        const Mat& a_prev = (ii == 0) ? cache.input : cache.post[ii - 1];
        g.dW[ii].noalias() += d * a_prev.transpose();
        g.db[ii] += d.rowwise().sum();
        if (ii > 0) {
            Mat da = W[ii].transpose() * d;
            // through tanh: 1 - post^2
            d = (da.array() * (1.0 - cache.post[ii - 1].array().square())).matrix();
        } else {
            return W[0].transpose() * d;
        }
    }
    return {};
}

Vec Mlp::input_gradient(const Vec& x) const {
    check(out_dim() == 1, "input_gradient: scalar output only");
    Cache cache;
    forward(Mat(x), &cache);
    MlpGrads g = zero_grads();
    Mat dx = backward(Mat::Ones(1, 1), cache, g);
    return dx.col(0);
}

MlpGrads Mlp::zero_grads() const {
    MlpGrads g;
    for (size_t i = 0; i < W.size(); ++i) {
        g.dW.push_back(Mat::Zero(W[i].rows(), W[i].cols()));
        g.db.push_back(Vec::Zero(b[i].size()));
    }
    return g;
}

static ParamSet layer_params(std::vector<Mat>& W, std::vector<Vec>& b, const std::string& prefix) {
    ParamSet ps;
    for (size_t i = 0; i < W.size(); ++i) {
        ps.push_back({prefix + ".W" + std::to_string(i), W[i].data(), W[i].size()});
        ps.push_back({prefix + ".b" + std::to_string(i), b[i].data(), b[i].size()});
    }
    return ps;
}

ParamSet Mlp::param_set(const std::string& prefix) { return layer_params(W, b, prefix); }

ParamSet Mlp::param_set(const std::string& prefix) const {
    return layer_params(const_cast<std::vector<Mat>&>(W), const_cast<std::vector<Vec>&>(b),
                        prefix);
}

ParamSet MlpGrads::param_set(const std::string& prefix) { return layer_params(dW, db, prefix); }

} // namespace tg3d
