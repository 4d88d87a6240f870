#pragma once

#include "tg3d/clipstub.hpp"
#include "tg3d/diffusion.hpp"
#include "tg3d/gen3d.hpp"
#include "tg3d/pose.hpp"

#include <string>
#include <vector>

namespace tg3d::pipeline {

struct TargetRecord {
    int id = 0;
    uint64_t z_seed = 0;
    CameraPose cam;
    std::string src_path, trg_path;
    double clip_score = -1.0;
    double pose_score = -1.0;
    int retries = 0;
    bool accepted = false;
    bool failed = false; // sub-op failure during generation
};

// Paired source/target image set produced by the translation stage; filtering
// prunes it in place into the accepted subset.
struct TargetDataset {
    scenes::Style style = scenes::Style::lego;
    diffusion::GuidanceSpec guidance;
    int res = 32;
    uint64_t base_seed = 0;
    double alpha = 0.7;
    double beta = 150.0;
    int K_f = 5;
    int N = 0;

    std::vector<TargetRecord> records;
    std::vector<Image> src, trg; // parallel to records
};

Vec latent_from_seed(uint64_t z_seed, int d_z);

struct GenDatasetSpec {
    scenes::Style style = scenes::Style::lego;
    diffusion::GuidanceSpec guidance;
    int N = 0;
    uint64_t base_seed = 0;
    gen3d::RenderConfig render;
    int workers = 0; // 0 = hardware concurrency
};

TargetDataset generate_dataset(const gen3d::Generator& G, const diffusion::DiffusionModel& model,
                               const GenDatasetSpec& spec);

void save_target_dataset(const TargetDataset& ds, const std::string& dir);
TargetDataset load_target_dataset(const std::string& dir);

// fine-tune the translation model to map anything back to the source domain
// under token y_src, over the full timestep range
diffusion::DiffusionModel train_reconstructor(const diffusion::DiffusionModel& model,
                                              const std::vector<Image>& source_samples,
                                              scenes::Style y_src,
                                              const diffusion::FinetuneConfig& cfg,
                                              diffusion::FinetuneReport* report = nullptr);

// apply the reconstructor to one image (image-to-image under recon_spec)
Image reconstruct(const Image& x, const diffusion::DiffusionModel& recon_model,
                  const diffusion::GuidanceSpec& recon_spec, Rng& rng);

struct FilterConfig {
    double alpha = 0.7;
    double beta = 150.0;
    int K_f = 5;
    diffusion::GuidanceSpec recon_spec; // target should be the source token
};

struct FilterStats {
    long total_attempts = 0;
    long rejected_attempts = 0;
    int accepted = 0;
    int dropped = 0;
    double filtering_rate = 0.0; // rejected_attempts / total_attempts
};

// dual-criterion filter with bounded per-record regeneration; gen_model
// regenerates targets with the same (z, c) on retries
TargetDataset filter_dataset(const TargetDataset& raw, const diffusion::DiffusionModel& gen_model,
                             const clipstub::ClipModel& clip, const pose::PoseExtractor& extractor,
                             const diffusion::DiffusionModel& recon_model, const FilterConfig& cfg,
                             FilterStats* stats = nullptr);

} // namespace tg3d::pipeline
