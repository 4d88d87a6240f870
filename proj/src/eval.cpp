#include "tg3d/eval.hpp"

#include <cmath>

namespace tg3d::eval {

namespace {

double poly_kernel(const Vec& x, const Vec& y) {
    double d = static_cast<double>(x.size());
    double v = x.dot(y) / d + 1.0;
    return v * v * v;
}

Mat embed_set(const std::vector<Image>& imgs, const clipstub::ClipModel& enc) {
    check(!imgs.empty(), "embed_set: empty sample set");
    Mat px(imgs[0].size(), imgs.size());
    for (size_t i = 0; i < imgs.size(); ++i)
        px.col(i) = imgs[i].px;
    return enc.embed_images(px);
}

} // namespace

double kid_features(const Mat& fa, const Mat& fb) {
    int m = static_cast<int>(fa.cols());
    int n = static_cast<int>(fb.cols());
    check(m >= 2 && n >= 2, "kid: need at least two samples per set");
    check(fa.rows() == fb.rows(), "kid: feature dimension mismatch");

    if (m == n) {
        // paired U-statistic form: identically zero when the sets coincide
        double acc = 0;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                if (i == j)
                    continue;
                acc += poly_kernel(fa.col(i), fa.col(j)) + poly_kernel(fb.col(i), fb.col(j)) -
                       poly_kernel(fa.col(i), fb.col(j)) - poly_kernel(fa.col(j), fb.col(i));
            }
        return acc / (static_cast<double>(m) * (m - 1));
    }

    // unequal sizes: standard unbiased three-sum estimator
    double saa = 0, sbb = 0, sab = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i != j)
                saa += poly_kernel(fa.col(i), fa.col(j));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j)
                sbb += poly_kernel(fb.col(i), fb.col(j));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            sab += poly_kernel(fa.col(i), fb.col(j));
    return saa / (static_cast<double>(m) * (m - 1)) + sbb / (static_cast<double>(n) * (n - 1)) -
           2.0 * sab / (static_cast<double>(m) * n);
}

double kid(const std::vector<Image>& a, const std::vector<Image>& b,
           const clipstub::ClipModel& enc) {
    return kid_features(embed_set(a, enc), embed_set(b, enc));
}

double diversity_from_features(const Mat& f) {
    int n = static_cast<int>(f.cols());
    check(n >= 2, "diversity: need at least two samples");
    double acc = 0;
    int pairs = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            acc += 1.0 - f.col(i).dot(f.col(j)) / (f.col(i).norm() * f.col(j).norm());
            ++pairs;
        }
    return acc / pairs;
}

double diversity_score(const std::vector<Image>& samples, const clipstub::ClipModel& enc) {
    return diversity_from_features(embed_set(samples, enc));
}

double pose_consistency_fn(const std::function<Image(int, double)>& render,
                           const pose::PoseExtractor& ex, int n_scenes,
                           const std::vector<double>& yaws) {
    check(n_scenes >= 1 && !yaws.empty(), "pose_consistency: empty grid");
    double acc = 0;
    for (int i = 0; i < n_scenes; ++i)
        for (double yaw : yaws)
            acc += std::abs(ex.extract(render(i, yaw)).yaw - yaw);
    return acc / (n_scenes * static_cast<double>(yaws.size()));
}

double pose_consistency(const gen3d::Generator& G, const pose::PoseExtractor& ex, int n_scenes,
                        const std::vector<double>& yaws, const gen3d::RenderConfig& rc,
                        uint64_t seed) {
    return pose_consistency_fn(
        [&](int i, double yaw) {
            Vec z = Rng(derive_seed(seed, "z", i)).normal_vec(G.config().d_z);
            return G.render_latent(z, CameraPose{yaw, 0.0, kCameraRadius}, rc);
        },
        ex, n_scenes, yaws);
}

std::vector<Image> sample_generator(const gen3d::Generator& G, int n,
                                    const gen3d::RenderConfig& rc, uint64_t seed,
                                    const CameraPose* fixed_cam) {
    std::vector<Image> out;
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, "sample", i));
        Vec z = rng.normal_vec(G.config().d_z);
        CameraPose cam = fixed_cam ? *fixed_cam : CameraPose::sample(rng);
        out.push_back(G.render_latent(z, cam, rc));
    }
    return out;
}

std::vector<Image> style_reference(scenes::Style style, int n, int res, uint64_t seed) {
    std::vector<Image> out;
    for (int i = 0; i < n; ++i) {
        scenes::SceneParams p = scenes::sample_scene(derive_seed(seed, "ref-scene", i));
        Rng rng(derive_seed(seed, "ref-cam", i));
        out.push_back(scenes::render_analytic(p, CameraPose::sample(rng), style, res));
    }
    return out;
}

std::vector<TradeoffRow> tradeoff_sweep(const std::vector<int>& t_rs,
                                        const std::vector<Image>& probes, scenes::Style style,
                                        const diffusion::DiffusionModel& model,
                                        const clipstub::ClipModel& clip,
                                        const pose::PoseExtractor& ex,
                                        const diffusion::DiffusionModel& recon_model,
                                        const diffusion::GuidanceSpec& base_spec,
                                        const diffusion::GuidanceSpec& recon_spec,
                                        uint64_t seed) {
    check(!t_rs.empty() && !probes.empty(), "tradeoff_sweep: empty grid or probe set");
    diffusion::IdentityCodec codec(probes[0].h);
    std::vector<TradeoffRow> rows;
    for (int t_r : t_rs) {
        diffusion::GuidanceSpec spec = base_spec;
        spec.target = style;
        spec.return_step = t_r;
        TradeoffRow row;
        row.t_r = t_r;
        for (size_t i = 0; i < probes.size(); ++i) {
            Rng rng(derive_seed(derive_seed(seed, "sweep-i2i", t_r), "probe", i));
            Image trg = diffusion::t_i2i(probes[i], spec, model, codec, rng);
            row.d_clip += clipstub::clip_distance(clip, trg, style) / probes.size();
            Rng rrng(derive_seed(derive_seed(seed, "sweep-recon", t_r), "probe", i));
            Image rec = diffusion::t_i2i(trg, recon_spec, recon_model, codec, rrng);
            row.d_pose += pose::pose_difference(rec, probes[i], ex) / probes.size();
        }
        check(std::isfinite(row.d_clip) && std::isfinite(row.d_pose),
              "tradeoff_sweep: non-finite row");
        rows.push_back(row);
    }
    return rows;
}

std::vector<NAblationRow> n_ablation(const std::vector<int>& ns,
                                     const gen3d::Generator& G_source,
                                     const diffusion::DiffusionModel& model,
                                     const clipstub::ClipModel& clip,
                                     const pose::PoseExtractor& ex,
                                     const diffusion::DiffusionModel& recon_model,
                                     const NAblationConfig& cfg) {
    check(!ns.empty(), "n_ablation: empty grid");
    std::vector<Image> ref = style_reference(cfg.gen.style, cfg.kid_samples, cfg.gen.render.res,
                                             derive_seed(cfg.seed, "ref"));
    std::vector<NAblationRow> rows;
    for (int n : ns) {
        pipeline::GenDatasetSpec gs = cfg.gen;
        gs.N = n;
        gs.base_seed = derive_seed(cfg.seed, "gen", n);
        pipeline::TargetDataset raw = pipeline::generate_dataset(G_source, model, gs);
        pipeline::TargetDataset kept =
            pipeline::filter_dataset(raw, model, clip, ex, recon_model, cfg.filter);
        adapt::AdaptConfig ac = cfg.adversarial;
        ac.seed = derive_seed(cfg.seed, "adapt", n);
        adapt::AdaptResult ar = adapt::adapt_adversarial(G_source, kept, ac);
        std::vector<Image> samples = sample_generator(ar.G, cfg.kid_samples, cfg.gen.render,
                                                      derive_seed(cfg.seed, "kid", n));
        rows.push_back({n, kid(samples, ref, clip)});
    }
    return rows;
}

} // namespace tg3d::eval
