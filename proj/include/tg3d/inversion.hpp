#pragma once

#include "tg3d/clipstub.hpp"
#include "tg3d/gen3d.hpp"
#include "tg3d/pose.hpp"

#include <string>
#include <vector>

namespace tg3d::inversion {

struct InvertConfig {
    int steps = 1000;
    double lr = 0.05;
    double pixel_weight = 0.1; // weight of the pixel L2 term next to features
    int mean_samples = 10000;
    int abort_window = 100; // steps without improvement before giving up
    gen3d::RenderConfig render;
    uint64_t seed = 0;
    bool verbose = false;
};

struct InvertResult {
    gen3d::WPlus w;
    CameraPose cam;
    std::vector<double> loss_trace; // best-so-far per step
    double initial_pixel_l2 = 0.0;
    double final_pixel_l2 = 0.0;
};

// Monte-Carlo mean of the mapped latent distribution; bit-stable per seed.
Vec mean_latent(const gen3d::Generator& G, int n_samples, uint64_t seed);

// feature distance (encoder tower penultimate activations) plus weighted
// pixel L2; gradient w.r.t. the candidate pixels optionally returned
double perceptual_loss(const clipstub::ClipModel& clip, const Image& x, const Image& target,
                       double pixel_weight, Vec* dpix = nullptr);

// optimize a per-layer latent stack so G reproduces x_real under the camera
// read off by the pose extractor
InvertResult invert(const Image& x_real, const gen3d::Generator& G,
                    const pose::PoseExtractor& extractor, const clipstub::ClipModel& clip,
                    const InvertConfig& cfg);

struct SweepConfig {
    std::vector<double> yaws = {-30, -15, 0, 15, 30};
    double pitch = 0.0;
};

// renders the inverted latent through each generator across the yaw sweep;
// all generators must share the source conditioning width. When out_dir is
// set, writes one grid per generator plus inversion.json.
std::vector<std::vector<Image>> manipulated_reconstruction(
    const Image& x_real, const std::vector<const gen3d::Generator*>& generators,
    const pose::PoseExtractor& extractor, const clipstub::ClipModel& clip,
    const InvertConfig& cfg, const SweepConfig& sweep, InvertResult* inv_out = nullptr,
    const std::string& out_dir = "");

} // namespace tg3d::inversion
