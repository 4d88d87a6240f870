#include "tg3d/instance.hpp"

#include "tg3d/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace tg3d::instance {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

InstanceSet propose_instances(const Image& x_src, const diffusion::GuidanceSpec& spec,
                              const diffusion::DiffusionModel& model, int N_d,
                              uint64_t base_seed) {
    check(N_d >= 2, "propose_instances: need at least two variants");
    InstanceSet set;
    set.source = x_src;
    diffusion::IdentityCodec codec(x_src.h);
    for (int i = 0; i < N_d; ++i) {
        uint64_t seed = base_seed + static_cast<uint64_t>(i);
        Rng rng(seed);
        set.variants.push_back(diffusion::t_i2i(x_src, spec, model, codec, rng));
        set.seeds.push_back(seed);
    }
    return set;
}

void save_instance_set(const InstanceSet& set, scenes::Style y, scenes::Style y_star,
                       const std::string& dir) {
    check(set.size() >= 2, "save_instance_set: too few variants");
    fs::create_directories(dir);
    int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(set.size()))));
    write_png(make_grid(set.variants, cols), (fs::path(dir) / "grid.png").string());
    write_png(set.source, (fs::path(dir) / "source.png").string());
    for (int i = 0; i < set.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "variant_%02d.png", i);
        write_png(set.variants[i], (fs::path(dir) / name).string());
    }
    json meta;
    meta["seeds"] = set.seeds;
    meta["selected_index"] = set.selected_index;
    meta["token"] = style_name(y);
    meta["specifier_token"] = style_name(y_star);
    std::ofstream f(fs::path(dir) / "meta.json");
    check(f.good(), "save_instance_set: cannot write meta in " + dir);
    f << meta.dump(2) << "\n";
}

InstanceSet load_instance_set(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "meta.json");
    check(f.good(), "load_instance_set: no meta in " + dir);
    json meta = json::parse(f);
    InstanceSet set;
    set.seeds = meta.at("seeds").get<std::vector<uint64_t>>();
    set.selected_index = meta.at("selected_index");
    set.source = read_png((fs::path(dir) / "source.png").string());
    for (size_t i = 0; i < set.seeds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "variant_%02d.png", static_cast<int>(i));
        set.variants.push_back(read_png((fs::path(dir) / name).string()));
    }
    return set;
}

diffusion::DiffusionModel finetune_instance(const diffusion::DiffusionModel& model,
                                            const InstanceSet& set, scenes::Style y,
                                            scenes::Style y_star,
                                            const InstanceFinetuneConfig& cfg,
                                            diffusion::FinetuneReport* report) {
    check(set.selected(), "finetune_instance: no variant selected");
    check(cfg.term_weight > 0, "finetune_instance: nonpositive term weight");

    // uniform sampling over this set realizes the term_weight : 1 split
    // between the selected-instance objective and the variant-set objective
    std::vector<Image> images;
    std::vector<scenes::Style> tokens;
    int copies = std::max(1, static_cast<int>(std::lround(cfg.term_weight * set.size())));
    for (int i = 0; i < copies; ++i) {
        images.push_back(set.variants[set.selected_index]);
        tokens.push_back(y_star);
    }
    for (const Image& v : set.variants) {
        images.push_back(v);
        tokens.push_back(y);
    }
    return diffusion::finetune_limited(model, images, tokens, 0, model.schedule().T_p,
                                       cfg.finetune, report);
}

InstanceAdaptResult adapt_instance(const gen3d::Generator& G_source,
                                   const diffusion::DiffusionModel& specialized,
                                   const clipstub::ClipModel& clip,
                                   const pose::PoseExtractor& extractor,
                                   const diffusion::DiffusionModel& recon_model,
                                   const InstanceAdaptConfig& cfg) {
    InstanceAdaptResult res;
    pipeline::TargetDataset raw = pipeline::generate_dataset(G_source, specialized, cfg.gen);
    pipeline::TargetDataset kept = pipeline::filter_dataset(
        raw, specialized, clip, extractor, recon_model, cfg.filter, &res.filter_stats);
    res.dataset_size = static_cast<int>(kept.records.size());

    adapt::AdaptConfig acfg = cfg.adversarial;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        std::string ckpt = (fs::path(cfg.out_dir) / "specialized.ckpt").string();
        save_checkpoint(ckpt, specialized.param_set());
        std::string ds_dir = (fs::path(cfg.out_dir) / "dataset").string();
        pipeline::save_target_dataset(kept, ds_dir);

        // provenance: record which translation model produced the dataset
        fs::path manifest = fs::path(ds_dir) / "manifest.json";
        std::ifstream in(manifest);
        json j = json::parse(in);
        in.close();
        j["meta"]["specialized_ckpt_hash"] = file_hash(ckpt);
        std::ofstream out(manifest);
        out << j.dump(2) << "\n";

        if (acfg.out_dir.empty())
            acfg.out_dir = (fs::path(cfg.out_dir) / "adapt").string();
    }

    res.adapted = adapt::adapt_adversarial(G_source, kept, acfg);
    return res;
}

} // namespace tg3d::instance
