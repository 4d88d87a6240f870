#include "tg3d/config.hpp"

#include "tg3d/checkpoint.hpp"

#include <filesystem>
#include <fstream>

namespace tg3d::config {

namespace fs = std::filesystem;

Json default_config() {
    Json c;
    c["seed"] = 0;
    c["out"] = "run";
    c["runs_dir"] = "runs";
    c["workers"] = 1;
    c["res"] = 32;

    c["gen"] = {{"d_z", 16},       {"d_w", 32},          {"map_hidden", 32},
                {"field_hidden", 48}, {"posenc_freqs", 4}, {"samples_per_ray", 24}};

    c["pretrain"] = {{"epochs", 6},  {"batch", 8},          {"rays_per_image", 256},
                     {"lr", 0.01},   {"holdout_frac", 0.1}, {"corpus_n", 400},
                     {"verbose", false}};

    c["schedule"] = {{"T", 1000}, {"beta_lo", 1e-4}, {"beta_hi", 0.02}, {"T_p", 850}};

    c["diffusion"] = {{"hidden", 128},
                      {"d_temb", 16},
                      {"d_tok", 16},
                      {"style_weights", {0.4, 0.2, 0.2, 0.2}},
                      {"train",
                       {{"epochs", 120},
                        {"batch", 32},
                        {"lr", 3e-3},
                        {"holdout_frac", 0.1},
                        {"uncond_drop", 0.1},
                        {"corpus_n", 1200},
                        {"verbose", false}}}};

    c["clip"] = {{"hidden", 64},
                 {"d_e", 32},
                 {"train",
                  {{"epochs", 40},
                   {"batch", 32},
                   {"lr", 2e-3},
                   {"temperature", 0.07},
                   {"holdout_frac", 0.1},
                   {"corpus_n", 1000},
                   {"verbose", false}}}};

    c["pose"] = {{"hidden", 64},
                 {"train",
                  {{"epochs", 60},
                   {"batch", 32},
                   {"lr", 2e-3},
                   {"holdout_frac", 0.1},
                   {"corpus_n", 1500},
                   {"verbose", false}}}};

    c["guidance"] = {{"t_r", 700},       {"scale", 10.0}, {"sampler", "ddim"},
                     {"ddim_eta", 0.0},  {"ddim_steps", 50}};

    c["dataset"] = {{"style", "lego"}, {"n", 3000}};

    c["recon"] = {{"steps", 400}, {"batch", 8},        {"lr", 5e-4},
                  {"samples", 64}, {"t_r", 200},       {"ddim_steps", 10}};

    c["filter"] = {{"alpha", 0.7}, {"beta", 150.0}, {"k_f", 5}};

    c["adapt"] = {{"lambda_r1", 5.0},
                  {"lambda_den", 0.25},
                  {"dv_sigma", 0.008},
                  {"den_points", 32},
                  {"batch", 20},
                  {"lr", 0.002},
                  {"epochs", 1},
                  {"p_target", 0.6},
                  {"p_traverse_images", 500000.0},
                  {"blur_sigma0", 2.0},
                  {"blur_frac", 0.1},
                  {"augment", true},
                  {"verbose", false}};

    c["direct"] = {{"mode", "nada"}, {"steps", 200},           {"batch", 8},
                   {"lr", 2e-3},     {"lambda_indomain", 0.5}, {"verbose", false}};

    c["instance"] = {{"n_d", 8},
                     {"select", -1},
                     {"yaw", 0.0},
                     {"pitch", 0.0},
                     {"term_weight", 1.0},
                     {"finetune", {{"steps", 400}, {"batch", 8}, {"lr", 5e-4}}}};

    c["invert"] = {{"steps", 1000},       {"lr", 0.05},          {"pixel_weight", 0.1},
                   {"mean_samples", 10000}, {"abort_window", 100}, {"image", ""},
                   {"yaws", {-30.0, -15.0, 0.0, 15.0, 30.0}},     {"sweep_pitch", 0.0},
                   {"verbose", false}};

    c["eval"] = {{"kid_samples", 64}, {"pose_scenes", 20}, {"yaws", {-30.0, -10.0, 0.0, 10.0, 30.0}}};

    c["sweep"] = {{"t_rs", {100, 300, 500, 700}}, {"probes", 16}};

    c["models"] = {{"gen", ""},     {"diffusion", ""}, {"clip", ""},
                   {"pose", ""},    {"recon", ""},     {"dataset", ""},
                   {"instances", ""}, {"specialized", ""}, {"adapted", Json::array()}};

    Json seeds;
    for (const char* name :
         {"corpus-pretrain", "corpus-diffusion", "corpus-clip", "corpus-pose", "gen-init",
          "pretrain", "diffusion", "clip", "pose", "dataset", "recon-data", "recon", "adapt",
          "direct", "instance-src", "instance", "instance-finetune", "invert", "eval", "sweep"})
        seeds[name] = nullptr;
    c["seeds"] = seeds;
    return c;
}

namespace {

bool type_compatible(const Json& base, const Json& patch) {
    if (base.is_null())
        return patch.is_number_integer() || patch.is_number_unsigned() || patch.is_null();
    if (base.is_number() && patch.is_number())
        return true;
    return base.type() == patch.type();
}

} // namespace

void merge_validated(Json& base, const Json& patch, const std::string& path) {
    if (!patch.is_object())
        throw ConfigError("config: expected an object at '" + (path.empty() ? "." : path) + "'");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        std::string key_path = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key()))
            throw ConfigError("config: unknown key '" + key_path + "'");
        Json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_validated(slot, it.value(), key_path);
        } else {
            if (!type_compatible(slot, it.value()))
                throw ConfigError("config: type mismatch at '" + key_path + "' (expected " +
                                  std::string(slot.type_name()) + ", got " +
                                  std::string(it.value().type_name()) + ")");
            slot = it.value();
        }
    }
}

void apply_override(Json& cfg, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("config: override must look like key.path=value, got '" + assignment +
                          "'");
    std::string dotted = assignment.substr(0, eq);
    std::string raw = assignment.substr(eq + 1);
    Json value = Json::parse(raw, nullptr, false);
    if (value.is_discarded())
        value = raw; // unquoted strings are fine

    // wrap the dotted path into a nested object and reuse the validator
    Json patch = value;
    for (size_t end = dotted.size();;) {
        size_t dot = dotted.rfind('.', end - 1);
        std::string key =
            dot == std::string::npos ? dotted.substr(0, end) : dotted.substr(dot + 1, end - dot - 1);
        if (key.empty())
            throw ConfigError("config: empty path segment in '" + dotted + "'");
        patch = Json{{key, patch}};
        if (dot == std::string::npos)
            break;
        end = dot;
    }
    merge_validated(cfg, patch);
}

Json resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
    Json cfg = default_config();
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f)
            throw ConfigError("config: cannot open '" + config_path + "'");
        Json file = Json::parse(f, nullptr, false);
        if (file.is_discarded())
            throw ConfigError("config: invalid JSON in '" + config_path + "'");
        merge_validated(cfg, file);
    }
    for (const auto& ov : overrides)
        apply_override(cfg, ov);

    uint64_t root = cfg["seed"].get<uint64_t>();
    for (auto it = cfg["seeds"].begin(); it != cfg["seeds"].end(); ++it)
        if (it.value().is_null())
            it.value() = derive_seed(root, it.key());
    return cfg;
}

uint64_t stage_seed(const Json& cfg, const std::string& name) {
    const Json& s = cfg.at("seeds").at(name);
    if (s.is_null())
        return derive_seed(cfg.at("seed").get<uint64_t>(), name);
    return s.get<uint64_t>();
}

std::string run_dir(const Json& cfg) {
    return (fs::path(cfg.at("runs_dir").get<std::string>()) / cfg.at("out").get<std::string>())
        .string();
}

void write_resolved(const Json& cfg, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream f(fs::path(dir) / "config.resolved.json");
    f << cfg.dump(2) << "\n";
}

gen3d::RenderConfig render_from(const Json& cfg) {
    gen3d::RenderConfig rc;
    rc.res = cfg.at("res").get<int>();
    rc.samples_per_ray = cfg.at("gen").at("samples_per_ray").get<int>();
    return rc;
}

diffusion::NoiseSchedule schedule_from(const Json& cfg) {
    const Json& s = cfg.at("schedule");
    return diffusion::NoiseSchedule::linear(s.at("T").get<int>(), s.at("beta_lo").get<double>(),
                                            s.at("beta_hi").get<double>(), s.at("T_p").get<int>());
}

diffusion::GuidanceSpec guidance_from(const Json& cfg) {
    const Json& g = cfg.at("guidance");
    diffusion::GuidanceSpec spec;
    spec.target = scenes::style_from_name(cfg.at("dataset").at("style").get<std::string>());
    spec.scale = g.at("scale").get<double>();
    spec.return_step = g.at("t_r").get<int>();
    std::string sampler = g.at("sampler").get<std::string>();
    if (sampler == "ddim")
        spec.sampler = diffusion::Sampler::ddim;
    else if (sampler == "ddpm")
        spec.sampler = diffusion::Sampler::ddpm;
    else
        throw ConfigError("config: guidance.sampler must be 'ddim' or 'ddpm'");
    spec.ddim_eta = g.at("ddim_eta").get<double>();
    spec.ddim_steps = g.at("ddim_steps").get<int>();
    return spec;
}

pipeline::GenDatasetSpec dataset_spec_from(const Json& cfg) {
    pipeline::GenDatasetSpec spec;
    spec.style = scenes::style_from_name(cfg.at("dataset").at("style").get<std::string>());
    spec.guidance = guidance_from(cfg);
    spec.N = cfg.at("dataset").at("n").get<int>();
    spec.base_seed = stage_seed(cfg, "dataset");
    spec.render = render_from(cfg);
    spec.workers = cfg.at("workers").get<int>();
    return spec;
}

pipeline::FilterConfig filter_from(const Json& cfg) {
    const Json& f = cfg.at("filter");
    pipeline::FilterConfig fc;
    fc.alpha = f.at("alpha").get<double>();
    fc.beta = f.at("beta").get<double>();
    fc.K_f = f.at("k_f").get<int>();
    fc.recon_spec = guidance_from(cfg);
    fc.recon_spec.target = scenes::Style::source;
    fc.recon_spec.return_step = cfg.at("recon").at("t_r").get<int>();
    fc.recon_spec.ddim_steps = cfg.at("recon").at("ddim_steps").get<int>();
    return fc;
}

adapt::AdaptConfig adapt_from(const Json& cfg) {
    const Json& a = cfg.at("adapt");
    adapt::AdaptConfig ac;
    ac.lambda_r1 = a.at("lambda_r1").get<double>();
    ac.lambda_den = a.at("lambda_den").get<double>();
    ac.dv_sigma = a.at("dv_sigma").get<double>();
    ac.den_points = a.at("den_points").get<int>();
    ac.batch = a.at("batch").get<int>();
    ac.lr = a.at("lr").get<double>();
    ac.epochs = a.at("epochs").get<int>();
    ac.p_target = a.at("p_target").get<double>();
    ac.p_traverse_images = a.at("p_traverse_images").get<double>();
    ac.blur_sigma0 = a.at("blur_sigma0").get<double>();
    ac.blur_frac = a.at("blur_frac").get<double>();
    ac.augment = a.at("augment").get<bool>();
    ac.render = render_from(cfg);
    ac.seed = stage_seed(cfg, "adapt");
    ac.verbose = a.at("verbose").get<bool>();
    return ac;
}

adapt::DirectConfig direct_from(const Json& cfg) {
    const Json& d = cfg.at("direct");
    adapt::DirectConfig dc;
    dc.steps = d.at("steps").get<int>();
    dc.batch = d.at("batch").get<int>();
    dc.lr = d.at("lr").get<double>();
    dc.lambda_indomain = d.at("lambda_indomain").get<double>();
    dc.render = render_from(cfg);
    dc.seed = stage_seed(cfg, "direct");
    dc.verbose = d.at("verbose").get<bool>();
    return dc;
}

inversion::InvertConfig invert_from(const Json& cfg) {
    const Json& i = cfg.at("invert");
    inversion::InvertConfig ic;
    ic.steps = i.at("steps").get<int>();
    ic.lr = i.at("lr").get<double>();
    ic.pixel_weight = i.at("pixel_weight").get<double>();
    ic.mean_samples = i.at("mean_samples").get<int>();
    ic.abort_window = i.at("abort_window").get<int>();
    ic.render = render_from(cfg);
    ic.seed = stage_seed(cfg, "invert");
    ic.verbose = i.at("verbose").get<bool>();
    return ic;
}

gen3d::Generator build_generator(const Json& cfg) {
    const Json& g = cfg.at("gen");
    gen3d::Generator::Config gc;
    gc.d_z = g.at("d_z").get<int>();
    gc.d_w = g.at("d_w").get<int>();
    gc.map_hidden = g.at("map_hidden").get<int>();
    gc.field_hidden = g.at("field_hidden").get<int>();
    gc.posenc_freqs = g.at("posenc_freqs").get<int>();
    Rng rng(stage_seed(cfg, "gen-init"));
    return gen3d::Generator(gc, rng);
}

diffusion::DiffusionModel build_diffusion(const Json& cfg) {
    diffusion::DiffusionModel::Config dc;
    dc.res = cfg.at("res").get<int>();
    dc.hidden = cfg.at("diffusion").at("hidden").get<int>();
    dc.d_temb = cfg.at("diffusion").at("d_temb").get<int>();
    dc.d_tok = cfg.at("diffusion").at("d_tok").get<int>();
    Rng rng(derive_seed(stage_seed(cfg, "diffusion"), "train-diffusion"));
    return diffusion::DiffusionModel(dc, schedule_from(cfg), rng);
}

clipstub::ClipModel build_clip(const Json& cfg) {
    clipstub::ClipModel::Config cc;
    cc.res = cfg.at("res").get<int>();
    cc.hidden = cfg.at("clip").at("hidden").get<int>();
    cc.d_e = cfg.at("clip").at("d_e").get<int>();
    Rng rng(derive_seed(stage_seed(cfg, "clip"), "train-clip"));
    return clipstub::ClipModel(cc, rng);
}

pose::PoseExtractor build_pose(const Json& cfg) {
    pose::PoseExtractor::Config pc;
    pc.res = cfg.at("res").get<int>();
    pc.hidden = cfg.at("pose").at("hidden").get<int>();
    Rng rng(derive_seed(stage_seed(cfg, "pose"), "train-pose"));
    return pose::PoseExtractor(pc, rng);
}

gen3d::Generator load_generator(const Json& cfg, const std::string& ckpt) {
    gen3d::Generator g = build_generator(cfg);
    load_checkpoint(ckpt, g.param_set());
    return g;
}

diffusion::DiffusionModel load_diffusion(const Json& cfg, const std::string& ckpt) {
    diffusion::DiffusionModel m = build_diffusion(cfg);
    load_checkpoint(ckpt, m.param_set());
    return m;
}

clipstub::ClipModel load_clip(const Json& cfg, const std::string& ckpt) {
    clipstub::ClipModel m = build_clip(cfg);
    load_checkpoint(ckpt, m.param_set());
    return m;
}

pose::PoseExtractor load_pose(const Json& cfg, const std::string& ckpt) {
    pose::PoseExtractor m = build_pose(cfg);
    load_checkpoint(ckpt, m.param_set());
    return m;
}

std::string model_path(const Json& cfg, const std::string& key) {
    const Json& m = cfg.at("models");
    if (!m.contains(key) || !m.at(key).is_string() || m.at(key).get<std::string>().empty())
        throw ConfigError("config: models." + key + " must point at an existing artifact");
    return m.at(key).get<std::string>();
}

} // namespace tg3d::config
