#pragma once

#include "tg3d/image.hpp"
#include "tg3d/mlp.hpp"
#include "tg3d/scenes.hpp"

namespace tg3d::pose {

struct PoseVector {
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0; // always 0 in this world, kept for the vector form
};

// Learned pose regressor from pixels to (yaw, pitch) in degrees.
class PoseExtractor {
public:
    struct Config {
        int res = 32;
        int hidden = 128;
    };

    PoseExtractor() = default;
    PoseExtractor(const Config& cfg, Rng& rng);

    const Config& config() const { return cfg_; }
    PoseVector extract(const Image& x) const;

    ParamSet param_set(const std::string& prefix = "pose");
    ParamSet param_set(const std::string& prefix = "pose") const;
    uint64_t hash() const { return param_hash(param_set()); }

    Mlp net;

private:
    Config cfg_;
};

// squared L2 between extracted pose vectors, degrees^2
double pose_difference(const Image& x, const Image& x_prime, const PoseExtractor& ex);

struct TrainPoseConfig {
    int epochs = 60;
    int batch = 32;
    double lr = 2e-3;
    double holdout_frac = 0.1;
    uint64_t seed = 0;
    bool verbose = false;
};

struct TrainPoseReport {
    std::vector<double> epoch_loss;
    double holdout_yaw_mae = 0.0;
    double holdout_pitch_mae = 0.0;
};

PoseExtractor train_pose(const scenes::Corpus& corpus, const TrainPoseConfig& cfg,
                         TrainPoseReport* report = nullptr);

} // namespace tg3d::pose
