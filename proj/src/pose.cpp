#include "tg3d/pose.hpp"

#include "tg3d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace tg3d::pose {

namespace {

// Style-robust input representation: per-image standardized luminance plus
// standardized edge magnitude. Pose is a geometric property carried by the
// object silhouette and facial landmarks, so normalized structure channels
// survive palette and brightness changes that raw pixels do not.
Vec pose_features(const Image& x) {
    int res = x.h;
    Vec lum(res * res);
    for (int i = 0; i < res * res; ++i)
        lum[i] = (x.px[3 * i] + x.px[3 * i + 1] + x.px[3 * i + 2]) / 3.0;
    Vec edge = Vec::Zero(res * res);
    for (int y = 0; y < res; ++y)
        for (int xx = 0; xx < res; ++xx) {
            double gx = (xx + 1 < res) ? lum[y * res + xx + 1] - lum[y * res + xx] : 0.0;
            double gy = (y + 1 < res) ? lum[(y + 1) * res + xx] - lum[y * res + xx] : 0.0;
            edge[y * res + xx] = std::sqrt(gx * gx + gy * gy);
        }
    auto standardize = [](Vec& v) {
        double mean = v.mean();
        double sd = std::sqrt((v.array() - mean).square().mean());
        v = (v.array() - mean) / (sd + 1e-6);
    };
    standardize(lum);
    standardize(edge);
    Vec out(2 * res * res);
    out.head(res * res) = lum;
    out.tail(res * res) = edge;
    return out;
}

} // namespace

PoseExtractor::PoseExtractor(const Config& cfg, Rng& rng) : cfg_(cfg) {
    net = Mlp({2 * cfg.res * cfg.res, cfg.hidden, cfg.hidden, 2}, rng);
}

PoseVector PoseExtractor::extract(const Image& x) const {
    check(x.h == cfg_.res && x.w == cfg_.res, "pose: resolution mismatch");
    Vec out = net.forward1(pose_features(x));
    check(out.allFinite(), "pose: non-finite prediction");
    // the net regresses range-normalized angles so yaw and pitch contribute
    // comparable loss; rescale to degrees here
    return {out[0] * kYawMaxDeg, out[1] * kPitchMaxDeg, 0.0};
}

ParamSet PoseExtractor::param_set(const std::string& prefix) { return net.param_set(prefix); }
ParamSet PoseExtractor::param_set(const std::string& prefix) const {
    return net.param_set(prefix);
}

double pose_difference(const Image& x, const Image& x_prime, const PoseExtractor& ex) {
    PoseVector a = ex.extract(x);
    PoseVector b = ex.extract(x_prime);
    double dy = a.yaw - b.yaw, dp = a.pitch - b.pitch, dr = a.roll - b.roll;
    return dy * dy + dp * dp + dr * dr;
}

PoseExtractor train_pose(const scenes::Corpus& corpus, const TrainPoseConfig& cfg,
                         TrainPoseReport* report) {
    int n = static_cast<int>(corpus.records.size());
    check(n >= 10, "train_pose: corpus too small");
    int res = corpus.spec.res;

    Mat pixels(2 * res * res, n);
    Mat target(2, n);
    for (int i = 0; i < n; ++i) {
        pixels.col(i) = pose_features(scenes::render_record(corpus.records[i], res));
        target(0, i) = corpus.records[i].yaw / kYawMaxDeg;
        target(1, i) = corpus.records[i].pitch / kPitchMaxDeg;
    }

    int n_hold = std::max(1, static_cast<int>(std::lround(n * cfg.holdout_frac)));
    int n_train = n - n_hold;
    check(n_train >= 1, "train_pose: holdout leaves no training data");

    Rng rng(derive_seed(cfg.seed, "train-pose"));
    PoseExtractor::Config pc;
    pc.res = res;
    PoseExtractor ex(pc, rng);
    Adam opt(cfg.lr);

    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    if (report)
        report->epoch_loss.clear();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double epoch_loss = 0.0;
        int steps = 0;
        for (int start = 0; start < n_train; start += cfg.batch) {
            int bn = std::min(cfg.batch, n_train - start);
            Mat bp(pixels.rows(), bn), bt(2, bn);
            for (int i = 0; i < bn; ++i) {
                bp.col(i) = pixels.col(order[start + i]);
                bt.col(i) = target.col(order[start + i]);
            }
            Mlp::Cache cache;
            Mat pred = ex.net.forward(bp, &cache);
            Mat diff = pred - bt;
            double loss = diff.squaredNorm() / bn;
            check(std::isfinite(loss), "train_pose: non-finite loss");
            MlpGrads g = ex.net.zero_grads();
            ex.net.backward(diff * (2.0 / bn), cache, g);
            opt.step(ex.param_set(), g.param_set("pose"));
            epoch_loss += loss;
            ++steps;
        }
        epoch_loss /= steps;
        if (report)
            report->epoch_loss.push_back(epoch_loss);
        if (cfg.verbose)
            std::fprintf(stderr, "pose epoch %d/%d loss %.3f\n", epoch + 1, cfg.epochs,
                         epoch_loss);
    }

    if (report) {
        double ymae = 0, pmae = 0;
        for (int i = n_train; i < n; ++i) {
            Vec p = ex.net.forward1(pixels.col(i));
            ymae += std::abs(p[0] - target(0, i)) * kYawMaxDeg;
            pmae += std::abs(p[1] - target(1, i)) * kPitchMaxDeg;
        }
        report->holdout_yaw_mae = ymae / n_hold;
        report->holdout_pitch_mae = pmae / n_hold;
    }
    return ex;
}

} // namespace tg3d::pose
