#pragma once

#include "tg3d/adapt.hpp"
#include "tg3d/pipeline.hpp"

#include <string>
#include <vector>

namespace tg3d::instance {

// one source image plus its candidate translations; the selection is the only
// human input in the flow
struct InstanceSet {
    Image source;
    std::vector<Image> variants;
    std::vector<uint64_t> seeds;
    int selected_index = -1;

    int size() const { return static_cast<int>(variants.size()); }
    bool selected() const { return selected_index >= 0 && selected_index < size(); }
};

// N_d image-to-image translations of one source under consecutive seeds
InstanceSet propose_instances(const Image& x_src, const diffusion::GuidanceSpec& spec,
                              const diffusion::DiffusionModel& model, int N_d,
                              uint64_t base_seed);

// grid.png (for inspection) + meta.json {seeds, selected_index, token ids}
void save_instance_set(const InstanceSet& set, scenes::Style y, scenes::Style y_star,
                       const std::string& dir);
InstanceSet load_instance_set(const std::string& dir);

struct InstanceFinetuneConfig {
    diffusion::FinetuneConfig finetune;
    // weight of the selected-instance term relative to the variant-set term
    double term_weight = 1.0;
};

// binds the specifier token y_star to the selected variant while token y keeps
// the full variant set; timesteps limited to [0, T_p]
diffusion::DiffusionModel finetune_instance(const diffusion::DiffusionModel& model,
                                            const InstanceSet& set, scenes::Style y,
                                            scenes::Style y_star,
                                            const InstanceFinetuneConfig& cfg,
                                            diffusion::FinetuneReport* report = nullptr);

struct InstanceAdaptConfig {
    pipeline::GenDatasetSpec gen; // style should be the specifier token
    pipeline::FilterConfig filter;
    adapt::AdaptConfig adversarial;
    std::string out_dir; // empty: keep everything in memory
};

struct InstanceAdaptResult {
    adapt::AdaptResult adapted;
    pipeline::FilterStats filter_stats;
    int dataset_size = 0;
};

// full pipeline rerun with the specialized model standing in for the original
InstanceAdaptResult adapt_instance(const gen3d::Generator& G_source,
                                   const diffusion::DiffusionModel& specialized,
                                   const clipstub::ClipModel& clip,
                                   const pose::PoseExtractor& extractor,
                                   const diffusion::DiffusionModel& recon_model,
                                   const InstanceAdaptConfig& cfg);

} // namespace tg3d::instance
