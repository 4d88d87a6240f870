#include "tg3d/inversion.hpp"

#include "tg3d/optim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace tg3d::inversion {

namespace fs = std::filesystem;

namespace {

Vec tower_features(const clipstub::ClipModel& clip, const Image& x, Mlp::Cache* cache = nullptr) {
    Mlp::Cache local;
    Mlp::Cache& c = cache ? *cache : local;
    clip.tower.forward(Mat(x.px), &c);
    return c.post.back().col(0); // penultimate activation
}

} // namespace

Vec mean_latent(const gen3d::Generator& G, int n_samples, uint64_t seed) {
    check(n_samples >= 1, "mean_latent: need at least one sample");
    Rng rng(derive_seed(seed, "w-mean"));
    Vec acc = Vec::Zero(G.config().d_w);
    for (int i = 0; i < n_samples; ++i)
        acc += G.map_latent(rng.normal_vec(G.config().d_z));
    return acc / n_samples;
}

double perceptual_loss(const clipstub::ClipModel& clip, const Image& x, const Image& target,
                       double pixel_weight, Vec* dpix) {
    check(x.size() == target.size(), "perceptual_loss: size mismatch");
    Mlp::Cache cache;
    Vec fx = tower_features(clip, x, &cache);
    Vec ft = tower_features(clip, target);
    Vec pdiff = x.px - target.px;
    double loss = (fx - ft).squaredNorm() + pixel_weight * pdiff.squaredNorm();
    if (dpix) {
        // back through the hidden stack only; the output layer is not part of
        // the feature map
        Vec d = 2.0 * (fx - ft);
        int hidden = static_cast<int>(clip.tower.W.size()) - 1;
        for (int l = hidden - 1; l >= 0; --l) {
            d = (d.array() * (1.0 - cache.post[l].col(0).array().square())).matrix();
            d = clip.tower.W[l].transpose() * d;
        }
        *dpix = d + 2.0 * pixel_weight * pdiff;
    }
    return loss;
}

InvertResult invert(const Image& x_real, const gen3d::Generator& G,
                    const pose::PoseExtractor& extractor, const clipstub::ClipModel& clip,
                    const InvertConfig& cfg) {
    check(cfg.steps >= 0, "invert: negative steps");
    check(x_real.h == cfg.render.res && x_real.w == cfg.render.res,
          "invert: resolution mismatch");

    InvertResult res;
    pose::PoseVector pv = extractor.extract(x_real);
    res.cam.yaw_deg = std::clamp(pv.yaw, -kYawMaxDeg, kYawMaxDeg);
    res.cam.pitch_deg = std::clamp(pv.pitch, -kPitchMaxDeg, kPitchMaxDeg);

    Vec w0 = mean_latent(G, cfg.mean_samples, cfg.seed);
    res.w = gen3d::WPlus::broadcast(w0);

    std::vector<int> rays(static_cast<size_t>(cfg.render.res) * cfg.render.res);
    std::iota(rays.begin(), rays.end(), 0);
    auto render_px = [&](const gen3d::WPlus& w, gen3d::Generator::RenderCache* cache) {
        Mat pixels = G.render_rays(w, res.cam, cfg.render, rays, cache);
        Image img(cfg.render.res, cfg.render.res);
        img.px = Eigen::Map<const Vec>(pixels.data(), pixels.size());
        return img;
    };

    res.initial_pixel_l2 = (render_px(res.w, nullptr).px - x_real.px).squaredNorm();

    gen3d::WPlus cur = res.w;
    ParamSet ps = {{"w1", cur.w1.data(), cur.w1.size()}, {"w2", cur.w2.data(), cur.w2.size()}};
    Adam opt(cfg.lr);
    double best = std::numeric_limits<double>::infinity();
    double initial_loss = 0.0;
    for (int step = 0; step < cfg.steps; ++step) {
        gen3d::Generator::RenderCache cache;
        Image img = render_px(cur, &cache);
        Vec dpix;
        double loss = perceptual_loss(clip, img, x_real, cfg.pixel_weight, &dpix);
        check(std::isfinite(loss), "invert: non-finite loss");
        if (step == 0)
            initial_loss = loss;
        if (loss < best) {
            best = loss;
            res.w = cur;
        }
        res.loss_trace.push_back(best);
        if (step + 1 == cfg.abort_window)
            check(best < initial_loss,
                  "invert: loss failed to decrease over the probe window; aborting");

        Mat dmat = Eigen::Map<const Mat>(dpix.data(), 3, cfg.render.res * cfg.render.res);
        gen3d::FieldGrads fg = G.zero_grads().field;
        G.render_backward(cache, dmat, fg);
        ParamSet gs = {{"w1", fg.dw1.data(), fg.dw1.size()},
                       {"w2", fg.dw2.data(), fg.dw2.size()}};
        opt.step(ps, gs);
        if (cfg.verbose)
            std::fprintf(stderr, "invert step %d best %.5f\n", step, best);
    }
    res.final_pixel_l2 = (render_px(res.w, nullptr).px - x_real.px).squaredNorm();
    return res;
}

std::vector<std::vector<Image>> manipulated_reconstruction(
    const Image& x_real, const std::vector<const gen3d::Generator*>& generators,
    const pose::PoseExtractor& extractor, const clipstub::ClipModel& clip,
    const InvertConfig& cfg, const SweepConfig& sweep, InvertResult* inv_out,
    const std::string& out_dir) {
    check(!generators.empty(), "manipulated_reconstruction: no generators");
    check(!sweep.yaws.empty(), "manipulated_reconstruction: empty sweep");
    for (const auto* g : generators)
        check(g->config().d_w == generators[0]->config().d_w,
              "manipulated_reconstruction: conditioning width mismatch");

    InvertResult inv = invert(x_real, *generators[0], extractor, clip, cfg);

    std::vector<std::vector<Image>> out;
    for (const auto* g : generators) {
        std::vector<Image> frames;
        for (double yaw : sweep.yaws) {
            CameraPose cam{yaw, sweep.pitch, kCameraRadius};
            frames.push_back(g->render(inv.w, cam, cfg.render));
        }
        out.push_back(std::move(frames));
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        for (size_t i = 0; i < out.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "domain_%02d.png", static_cast<int>(i));
            write_png(make_grid(out[i], static_cast<int>(out[i].size())),
                      (fs::path(out_dir) / name).string());
        }
        nlohmann::ordered_json j;
        j["loss_trace"] = inv.loss_trace;
        j["camera"] = {{"yaw", inv.cam.yaw_deg}, {"pitch", inv.cam.pitch_deg}};
        j["seed"] = cfg.seed;
        j["final_pixel_l2"] = inv.final_pixel_l2;
        std::ofstream f(fs::path(out_dir) / "inversion.json");
        f << j.dump(2) << "\n";
    }
    if (inv_out)
        *inv_out = std::move(inv);
    return out;
}

} // namespace tg3d::inversion
