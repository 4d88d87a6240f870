#pragma once

#include "tg3d/adapt.hpp"
#include "tg3d/pipeline.hpp"

#include <functional>
#include <vector>

namespace tg3d::eval {

// columns are feature vectors; polynomial kernel (<x,y>/d + 1)^3
double kid_features(const Mat& fa, const Mat& fb);

// squared MMD between encoder embeddings of the two image sets; exactly zero
// on identical equally sized sets
double kid(const std::vector<Image>& a, const std::vector<Image>& b,
           const clipstub::ClipModel& enc);

double diversity_from_features(const Mat& f); // mean pairwise cosine distance
double diversity_score(const std::vector<Image>& samples, const clipstub::ClipModel& enc);

// mean |extracted yaw - requested yaw| in degrees over scenes x grid
double pose_consistency_fn(const std::function<Image(int, double)>& render,
                           const pose::PoseExtractor& ex, int n_scenes,
                           const std::vector<double>& yaws);
double pose_consistency(const gen3d::Generator& G, const pose::PoseExtractor& ex, int n_scenes,
                        const std::vector<double>& yaws, const gen3d::RenderConfig& rc,
                        uint64_t seed);

// seeded convenience sample sets for metric comparisons
std::vector<Image> sample_generator(const gen3d::Generator& G, int n,
                                    const gen3d::RenderConfig& rc, uint64_t seed,
                                    const CameraPose* fixed_cam = nullptr);
std::vector<Image> style_reference(scenes::Style style, int n, int res, uint64_t seed);

struct TradeoffRow {
    int t_r = 0;
    double d_pose = 0.0;
    double d_clip = 0.0;
};

// per return step: average style distance of the translations and average
// pose discrepancy of their reconstructions against the probes
std::vector<TradeoffRow> tradeoff_sweep(const std::vector<int>& t_rs,
                                        const std::vector<Image>& probes, scenes::Style style,
                                        const diffusion::DiffusionModel& model,
                                        const clipstub::ClipModel& clip,
                                        const pose::PoseExtractor& ex,
                                        const diffusion::DiffusionModel& recon_model,
                                        const diffusion::GuidanceSpec& base_spec,
                                        const diffusion::GuidanceSpec& recon_spec,
                                        uint64_t seed);

struct NAblationRow {
    int n = 0;
    double kid = 0.0;
};

struct NAblationConfig {
    pipeline::GenDatasetSpec gen; // N is overridden per grid point
    pipeline::FilterConfig filter;
    adapt::AdaptConfig adversarial;
    int kid_samples = 64;
    uint64_t seed = 0;
};

// full pipeline + adaptation per sample count, scored by KID against analytic
// renders of the target style
std::vector<NAblationRow> n_ablation(const std::vector<int>& ns,
                                     const gen3d::Generator& G_source,
                                     const diffusion::DiffusionModel& model,
                                     const clipstub::ClipModel& clip,
                                     const pose::PoseExtractor& ex,
                                     const diffusion::DiffusionModel& recon_model,
                                     const NAblationConfig& cfg);

} // namespace tg3d::eval
