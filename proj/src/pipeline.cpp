#include "tg3d/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <thread>

namespace tg3d::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Vec latent_from_seed(uint64_t z_seed, int d_z) {
    Rng rng(z_seed);
    return rng.normal_vec(d_z);
}

namespace {

std::string record_name(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d.png", id);
    return buf;
}

Image translate_record(const Image& src, const diffusion::DiffusionModel& model,
                       const diffusion::GuidanceSpec& spec, uint64_t base_seed, int id,
                       int attempt) {
    diffusion::IdentityCodec codec(src.h);
    Rng rng(derive_seed(derive_seed(base_seed, "i2i", id), "attempt", attempt));
    return diffusion::t_i2i(src, spec, model, codec, rng);
}

} // namespace

TargetDataset generate_dataset(const gen3d::Generator& G, const diffusion::DiffusionModel& model,
                               const GenDatasetSpec& spec) {
    check(spec.N >= 0, "generate_dataset: negative N");
    TargetDataset ds;
    ds.style = spec.style;
    ds.guidance = spec.guidance;
    ds.guidance.target = spec.style;
    ds.res = spec.render.res;
    ds.base_seed = spec.base_seed;
    ds.N = spec.N;
    ds.records.resize(spec.N);
    ds.src.resize(spec.N);
    ds.trg.resize(spec.N);

    auto run_range = [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            TargetRecord& rec = ds.records[i];
            rec.id = i;
            rec.z_seed = derive_seed(spec.base_seed, "z", i);
            Rng cam_rng(derive_seed(spec.base_seed, "camera", i));
            rec.cam = CameraPose::sample(cam_rng);
            rec.src_path = std::string("src/") + record_name(i);
            rec.trg_path = std::string("trg/") + record_name(i);
            try {
                Vec z = latent_from_seed(rec.z_seed, G.config().d_z);
                ds.src[i] = G.render_latent(z, rec.cam, spec.render);
                ds.trg[i] = translate_record(ds.src[i], model, ds.guidance, spec.base_seed, i, 0);
            } catch (const std::exception&) {
                rec.failed = true;
            }
        }
    };

    int workers = spec.workers > 0 ? spec.workers
                                   : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, std::max(1, spec.N));
    if (workers <= 1) {
        run_range(0, spec.N);
    } else {
        std::vector<std::thread> pool;
        int chunk = (spec.N + workers - 1) / workers;
        for (int t = 0; t < workers; ++t)
            pool.emplace_back(run_range, t * chunk, std::min(spec.N, (t + 1) * chunk));
        for (auto& th : pool)
            th.join();
    }
    return ds;
}

void save_target_dataset(const TargetDataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "src");
    fs::create_directories(fs::path(dir) / "trg");
    json meta;
    meta["style_token"] = static_cast<int>(ds.style);
    meta["t_r"] = ds.guidance.return_step;
    meta["s"] = ds.guidance.scale;
    meta["sampler"] = ds.guidance.sampler == diffusion::Sampler::ddim ? "ddim" : "ddpm";
    meta["ddim_steps"] = ds.guidance.ddim_steps;
    meta["alpha"] = ds.alpha;
    meta["beta"] = ds.beta;
    meta["K_f"] = ds.K_f;
    meta["N"] = ds.N;
    meta["base_seed"] = ds.base_seed;
    meta["res"] = ds.res;

    json recs = json::array();
    for (size_t i = 0; i < ds.records.size(); ++i) {
        const TargetRecord& r = ds.records[i];
        json jr;
        jr["id"] = r.id;
        jr["z_seed"] = r.z_seed;
        jr["yaw"] = r.cam.yaw_deg;
        jr["pitch"] = r.cam.pitch_deg;
        jr["radius"] = r.cam.radius;
        jr["src_path"] = r.src_path;
        jr["trg_path"] = r.trg_path;
        jr["clip_score"] = r.clip_score;
        jr["pose_score"] = r.pose_score;
        jr["retries"] = r.retries;
        jr["accepted"] = r.accepted;
        jr["failed"] = r.failed;
        recs.push_back(jr);
        if (!r.failed) {
            write_png(ds.src[i], (fs::path(dir) / r.src_path).string());
            write_png(ds.trg[i], (fs::path(dir) / r.trg_path).string());
        }
    }
    json manifest;
    manifest["meta"] = meta;
    manifest["records"] = recs;
    std::ofstream f(fs::path(dir) / "manifest.json");
    check(f.good(), "save_target_dataset: cannot write manifest in " + dir);
    f << manifest.dump(2) << "\n";
}

TargetDataset load_target_dataset(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    check(f.good(), "load_target_dataset: no manifest in " + dir);
    json manifest = json::parse(f);
    const json& meta = manifest.at("meta");
    TargetDataset ds;
    ds.style = static_cast<scenes::Style>(meta.at("style_token").get<int>());
    ds.guidance.target = ds.style;
    ds.guidance.return_step = meta.at("t_r");
    ds.guidance.scale = meta.at("s");
    ds.guidance.sampler = meta.at("sampler") == "ddim" ? diffusion::Sampler::ddim
                                                       : diffusion::Sampler::ddpm;
    ds.guidance.ddim_steps = meta.at("ddim_steps");
    ds.alpha = meta.at("alpha");
    ds.beta = meta.at("beta");
    ds.K_f = meta.at("K_f");
    ds.N = meta.at("N");
    ds.base_seed = meta.at("base_seed");
    ds.res = meta.at("res");
    for (const auto& jr : manifest.at("records")) {
        TargetRecord r;
        r.id = jr.at("id");
        r.z_seed = jr.at("z_seed");
        r.cam = CameraPose{jr.at("yaw"), jr.at("pitch"), jr.at("radius")};
        r.src_path = jr.at("src_path");
        r.trg_path = jr.at("trg_path");
        r.clip_score = jr.at("clip_score");
        r.pose_score = jr.at("pose_score");
        r.retries = jr.at("retries");
        r.accepted = jr.at("accepted");
        r.failed = jr.at("failed");
        ds.records.push_back(r);
        if (!r.failed) {
            ds.src.push_back(read_png((fs::path(dir) / r.src_path).string()));
            ds.trg.push_back(read_png((fs::path(dir) / r.trg_path).string()));
        } else {
            ds.src.emplace_back();
            ds.trg.emplace_back();
        }
    }
    return ds;
}

diffusion::DiffusionModel train_reconstructor(const diffusion::DiffusionModel& model,
                                              const std::vector<Image>& source_samples,
                                              scenes::Style y_src,
                                              const diffusion::FinetuneConfig& cfg,
                                              diffusion::FinetuneReport* report) {
    check(!source_samples.empty(), "train_reconstructor: empty source sample set");
    std::vector<scenes::Style> tokens(source_samples.size(), y_src);
    if (cfg.steps == 0)
        return model;
    return diffusion::finetune_limited(model, source_samples, tokens, 0, model.schedule().T, cfg,
                                       report);
}

Image reconstruct(const Image& x, const diffusion::DiffusionModel& recon_model,
                  const diffusion::GuidanceSpec& recon_spec, Rng& rng) {
    diffusion::IdentityCodec codec(x.h);
    return diffusion::t_i2i(x, recon_spec, recon_model, codec, rng);
}

TargetDataset filter_dataset(const TargetDataset& raw, const diffusion::DiffusionModel& gen_model,
                             const clipstub::ClipModel& clip, const pose::PoseExtractor& extractor,
                             const diffusion::DiffusionModel& recon_model, const FilterConfig& cfg,
                             FilterStats* stats) {
    check(cfg.K_f >= 0, "filter_dataset: negative retry bound");
    TargetDataset out = raw;
    out.alpha = cfg.alpha;
    out.beta = cfg.beta;
    out.K_f = cfg.K_f;
    out.records.clear();
    out.src.clear();
    out.trg.clear();

    FilterStats st;
    for (size_t i = 0; i < raw.records.size(); ++i) {
        TargetRecord rec = raw.records[i];
        if (rec.failed)
            continue;
        const Image& src = raw.src[i];
        Image trg = raw.trg[i];
        rec.retries = 0;
        rec.accepted = false;
        for (int attempt = 0; attempt <= cfg.K_f; ++attempt) {
            if (attempt > 0) {
                trg = translate_record(src, gen_model, raw.guidance, raw.base_seed, rec.id,
                                       attempt);
                rec.retries = attempt;
            }
            ++st.total_attempts;
            rec.clip_score = clipstub::clip_distance(clip, trg, raw.style);
            if (rec.clip_score > cfg.alpha) {
                ++st.rejected_attempts;
                continue;
            }
            Rng rrng(derive_seed(derive_seed(raw.base_seed, "recon", rec.id), "attempt", attempt));
            Image rec_img = reconstruct(trg, recon_model, cfg.recon_spec, rrng);
            rec.pose_score = pose::pose_difference(rec_img, src, extractor);
            if (rec.pose_score > cfg.beta) {
                ++st.rejected_attempts;
                continue;
            }
            rec.accepted = true;
            break;
        }
        if (rec.accepted) {
            ++st.accepted;
            out.records.push_back(rec);
            out.src.push_back(src);
            out.trg.push_back(trg);
        } else {
            ++st.dropped;
        }
    }
    st.filtering_rate =
        st.total_attempts > 0 ? double(st.rejected_attempts) / st.total_attempts : 0.0;
    if (stats)
        *stats = st;
    return out;
}

} // namespace tg3d::pipeline
