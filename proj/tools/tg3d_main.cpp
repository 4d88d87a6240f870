#include "tg3d/checkpoint.hpp"
#include "tg3d/config.hpp"
#include "tg3d/eval.hpp"
#include "tg3d/instance.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace tg3d;
using config::Json;

namespace {

void write_json(const Json& j, const fs::path& path) {
    std::ofstream f(path);
    check(f.good(), "cannot write " + path.string());
    f << j.dump(2) << "\n";
}

scenes::Style target_style(const Json& cfg) {
    return scenes::style_from_name(cfg.at("dataset").at("style").get<std::string>());
}

scenes::CorpusSpec corpus_spec(const Json& cfg, scenes::CorpusKind kind, int n,
                               const std::string& seed_name) {
    scenes::CorpusSpec cs;
    cs.kind = kind;
    cs.n = n;
    cs.seed = config::stage_seed(cfg, seed_name);
    cs.res = cfg.at("res").get<int>();
    cs.write_images = false;
    cs.workers = cfg.at("workers").get<int>();
    return cs;
}

// ---- stages ----

void run_pretrain_source(const Json& cfg, const std::string& dir) {
    const Json& p = cfg.at("pretrain");
    scenes::Corpus corpus = scenes::build_corpus(corpus_spec(
        cfg, scenes::CorpusKind::source_pretrain, p.at("corpus_n").get<int>(), "corpus-pretrain"));
    gen3d::Generator G = config::build_generator(cfg);
    gen3d::PretrainConfig pc;
    pc.epochs = p.at("epochs").get<int>();
    pc.batch = p.at("batch").get<int>();
    pc.rays_per_image = p.at("rays_per_image").get<int>();
    pc.lr = p.at("lr").get<double>();
    pc.holdout_frac = p.at("holdout_frac").get<double>();
    pc.seed = config::stage_seed(cfg, "pretrain");
    pc.render = config::render_from(cfg);
    pc.verbose = p.at("verbose").get<bool>();
    gen3d::PretrainReport rep = gen3d::pretrain_source(G, corpus, pc);
    save_checkpoint((fs::path(dir) / "gen_source.ckpt").string(), G.param_set());
    write_json({{"holdout_psnr", rep.holdout_psnr}, {"epoch_loss", rep.epoch_loss}},
               fs::path(dir) / "report.json");
}

void run_train_diffusion(const Json& cfg, const std::string& dir) {
    const Json& t = cfg.at("diffusion").at("train");
    scenes::CorpusSpec cs = corpus_spec(cfg, scenes::CorpusKind::diffusion_train,
                                        t.at("corpus_n").get<int>(), "corpus-diffusion");
    cs.style_weights = cfg.at("diffusion").at("style_weights").get<std::vector<double>>();
    scenes::Corpus corpus = scenes::build_corpus(cs);
    diffusion::TrainDiffusionConfig tc;
    tc.epochs = t.at("epochs").get<int>();
    tc.batch = t.at("batch").get<int>();
    tc.lr = t.at("lr").get<double>();
    tc.holdout_frac = t.at("holdout_frac").get<double>();
    tc.uncond_drop = t.at("uncond_drop").get<double>();
    tc.seed = config::stage_seed(cfg, "diffusion");
    tc.verbose = t.at("verbose").get<bool>();
    diffusion::TrainDiffusionReport rep;
    diffusion::DiffusionModel model =
        diffusion::train_diffusion(corpus, config::schedule_from(cfg), tc, &rep);
    save_checkpoint((fs::path(dir) / "diffusion.ckpt").string(), model.param_set());
    write_json({{"holdout_mse", rep.holdout_mse}, {"epoch_loss", rep.epoch_loss}},
               fs::path(dir) / "report.json");
}

void run_train_clip(const Json& cfg, const std::string& dir) {
    const Json& t = cfg.at("clip").at("train");
    scenes::Corpus corpus = scenes::build_corpus(corpus_spec(
        cfg, scenes::CorpusKind::contrastive_train, t.at("corpus_n").get<int>(), "corpus-clip"));
    clipstub::TrainClipConfig tc;
    tc.epochs = t.at("epochs").get<int>();
    tc.batch = t.at("batch").get<int>();
    tc.lr = t.at("lr").get<double>();
    tc.temperature = t.at("temperature").get<double>();
    tc.holdout_frac = t.at("holdout_frac").get<double>();
    tc.seed = config::stage_seed(cfg, "clip");
    tc.verbose = t.at("verbose").get<bool>();
    clipstub::TrainClipReport rep;
    clipstub::ClipModel model = clipstub::train_contrastive(corpus, tc, &rep);
    save_checkpoint((fs::path(dir) / "clip.ckpt").string(), model.param_set());
    write_json({{"holdout_accuracy", rep.holdout_accuracy}, {"epoch_loss", rep.epoch_loss}},
               fs::path(dir) / "report.json");
}

void run_train_pose(const Json& cfg, const std::string& dir) {
    const Json& t = cfg.at("pose").at("train");
    scenes::Corpus corpus = scenes::build_corpus(corpus_spec(
        cfg, scenes::CorpusKind::pose_train, t.at("corpus_n").get<int>(), "corpus-pose"));
    pose::TrainPoseConfig tc;
    tc.epochs = t.at("epochs").get<int>();
    tc.batch = t.at("batch").get<int>();
    tc.lr = t.at("lr").get<double>();
    tc.holdout_frac = t.at("holdout_frac").get<double>();
    tc.seed = config::stage_seed(cfg, "pose");
    tc.verbose = t.at("verbose").get<bool>();
    pose::TrainPoseReport rep;
    pose::PoseExtractor ex = pose::train_pose(corpus, tc, &rep);
    save_checkpoint((fs::path(dir) / "pose.ckpt").string(), ex.param_set());
    write_json({{"holdout_yaw_mae", rep.holdout_yaw_mae},
                {"holdout_pitch_mae", rep.holdout_pitch_mae},
                {"epoch_loss", rep.epoch_loss}},
               fs::path(dir) / "report.json");
}

void run_gen_dataset(const Json& cfg, const std::string& dir) {
    gen3d::Generator G = config::load_generator(cfg, config::model_path(cfg, "gen"));
    diffusion::DiffusionModel model =
        config::load_diffusion(cfg, config::model_path(cfg, "diffusion"));
    pipeline::TargetDataset ds =
        pipeline::generate_dataset(G, model, config::dataset_spec_from(cfg));
    pipeline::save_target_dataset(ds, (fs::path(dir) / "dataset").string());
    int failed = 0;
    for (const auto& r : ds.records)
        failed += r.failed ? 1 : 0;
    write_json({{"n", static_cast<int>(ds.records.size())}, {"failed", failed}},
               fs::path(dir) / "summary.json");
}

void run_train_reconstructor(const Json& cfg, const std::string& dir) {
    diffusion::DiffusionModel model =
        config::load_diffusion(cfg, config::model_path(cfg, "diffusion"));
    const Json& r = cfg.at("recon");
    uint64_t data_seed = config::stage_seed(cfg, "recon-data");
    int res = cfg.at("res").get<int>();
    std::vector<Image> samples;
    for (int i = 0; i < r.at("samples").get<int>(); ++i) {
        scenes::SceneParams p = scenes::sample_scene(derive_seed(data_seed, "scene", i));
        Rng crng(derive_seed(data_seed, "cam", i));
        samples.push_back(
            scenes::render_analytic(p, CameraPose::sample(crng), scenes::Style::source, res));
    }
    diffusion::FinetuneConfig fc;
    fc.steps = r.at("steps").get<int>();
    fc.batch = r.at("batch").get<int>();
    fc.lr = r.at("lr").get<double>();
    fc.seed = config::stage_seed(cfg, "recon");
    diffusion::FinetuneReport rep;
    diffusion::DiffusionModel recon =
        pipeline::train_reconstructor(model, samples, scenes::Style::source, fc, &rep);
    save_checkpoint((fs::path(dir) / "recon.ckpt").string(), recon.param_set());
    write_json({{"step_loss", rep.step_loss}}, fs::path(dir) / "report.json");
}

void run_filter(const Json& cfg, const std::string& dir) {
    pipeline::TargetDataset ds =
        pipeline::load_target_dataset(config::model_path(cfg, "dataset"));
    pipeline::FilterStats stats;
    pipeline::TargetDataset kept;
    if (ds.records.empty()) {
        kept = ds; // nothing to score; models are not needed
    } else {
        diffusion::DiffusionModel gen_model =
            config::load_diffusion(cfg, config::model_path(cfg, "diffusion"));
        clipstub::ClipModel clip = config::load_clip(cfg, config::model_path(cfg, "clip"));
        pose::PoseExtractor ex = config::load_pose(cfg, config::model_path(cfg, "pose"));
        diffusion::DiffusionModel recon =
            config::load_diffusion(cfg, config::model_path(cfg, "recon"));
        kept = pipeline::filter_dataset(ds, gen_model, clip, ex, recon,
                                        config::filter_from(cfg), &stats);
    }
    pipeline::save_target_dataset(kept, (fs::path(dir) / "dataset").string());
    write_json({{"total_attempts", stats.total_attempts},
                {"rejected_attempts", stats.rejected_attempts},
                {"accepted", stats.accepted},
                {"dropped", stats.dropped},
                {"filtering_rate", stats.filtering_rate}},
               fs::path(dir) / "filter_stats.json");
}

void run_adapt(const Json& cfg, const std::string& dir) {
    gen3d::Generator G = config::load_generator(cfg, config::model_path(cfg, "gen"));
    pipeline::TargetDataset ds =
        pipeline::load_target_dataset(config::model_path(cfg, "dataset"));
    adapt::AdaptConfig ac = config::adapt_from(cfg);
    ac.out_dir = dir;
    adapt::AdaptResult res = adapt::adapt_adversarial(G, ds, ac);
    save_checkpoint((fs::path(dir) / "gen_adapted.ckpt").string(), res.G.param_set());
    save_checkpoint((fs::path(dir) / "disc.ckpt").string(), res.D.param_set());
    write_json({{"g_steps", res.g_steps}, {"d_steps", res.d_steps}, {"aborted", res.aborted}},
               fs::path(dir) / "summary.json");
}

void run_adapt_baseline(const Json& cfg, const std::string& dir) {
    std::string mode = cfg.at("direct").at("mode").get<std::string>();
    if (mode != "nada" && mode != "hyper" && mode != "image")
        throw config::ConfigError("config: direct.mode must be nada, hyper or image");
    gen3d::Generator G = config::load_generator(cfg, config::model_path(cfg, "gen"));
    clipstub::ClipModel clip = config::load_clip(cfg, config::model_path(cfg, "clip"));
    adapt::DirectConfig dc = config::direct_from(cfg);
    std::vector<double> trace, indomain;
    gen3d::Generator out;
    if (mode == "nada") {
        out = adapt::adapt_nada_star(G, clip, scenes::Style::source, target_style(cfg), dc,
                                     &trace);
    } else if (mode == "hyper") {
        out = adapt::adapt_hyper_star(G, clip, scenes::Style::source, target_style(cfg), dc,
                                      &trace, &indomain);
    } else if (mode == "image") {
        pipeline::TargetDataset ds =
            pipeline::load_target_dataset(config::model_path(cfg, "dataset"));
        out = adapt::adapt_nonadversarial_image(G, clip, ds, dc, &trace);
    } else {
        throw config::ConfigError("config: direct.mode must be nada, hyper or image");
    }
    save_checkpoint((fs::path(dir) / ("gen_" + mode + ".ckpt")).string(), out.param_set());
    Json rep = {{"mode", mode}, {"loss_trace", trace}};
    if (mode == "hyper")
        rep["indomain_trace"] = indomain;
    write_json(rep, fs::path(dir) / "report.json");
}

void run_instance_propose(const Json& cfg, const std::string& dir) {
    gen3d::Generator G = config::load_generator(cfg, config::model_path(cfg, "gen"));
    diffusion::DiffusionModel model =
        config::load_diffusion(cfg, config::model_path(cfg, "diffusion"));
    const Json& ins = cfg.at("instance");
    Rng zrng(config::stage_seed(cfg, "instance-src"));
    Vec z = zrng.normal_vec(G.config().d_z);
    CameraPose cam{ins.at("yaw").get<double>(), ins.at("pitch").get<double>()};
    Image src = G.render_latent(z, cam, config::render_from(cfg));
    instance::InstanceSet set =
        instance::propose_instances(src, config::guidance_from(cfg), model,
                                    ins.at("n_d").get<int>(), config::stage_seed(cfg, "instance"));
    int sel = ins.at("select").get<int>();
    if (sel >= set.size())
        throw config::ConfigError("config: instance.select out of range");
    set.selected_index = sel;
    instance::save_instance_set(set, target_style(cfg), scenes::Style::specifier,
                                (fs::path(dir) / "instances").string());
}

void run_instance_finetune(const Json& cfg, const std::string& dir) {
    instance::InstanceSet set =
        instance::load_instance_set(config::model_path(cfg, "instances"));
    const Json& ins = cfg.at("instance");
    int sel = ins.at("select").get<int>();
    if (sel >= 0)
        set.selected_index = sel;
    if (!set.selected())
        throw config::ConfigError("config: pick a variant with --select / instance.select");
    diffusion::DiffusionModel model =
        config::load_diffusion(cfg, config::model_path(cfg, "diffusion"));
    instance::InstanceFinetuneConfig ic;
    ic.finetune.steps = ins.at("finetune").at("steps").get<int>();
    ic.finetune.batch = ins.at("finetune").at("batch").get<int>();
    ic.finetune.lr = ins.at("finetune").at("lr").get<double>();
    ic.finetune.seed = config::stage_seed(cfg, "instance-finetune");
    ic.term_weight = ins.at("term_weight").get<double>();
    diffusion::FinetuneReport rep;
    diffusion::DiffusionModel specialized = instance::finetune_instance(
        model, set, target_style(cfg), scenes::Style::specifier, ic, &rep);
    save_checkpoint((fs::path(dir) / "specialized.ckpt").string(), specialized.param_set());
    write_json({{"selected_index", set.selected_index}, {"step_loss", rep.step_loss}},
               fs::path(dir) / "report.json");
}

Image load_probe_image(const Json& cfg) {
    std::string path = cfg.at("invert").at("image").get<std::string>();
    if (path.empty())
        throw config::ConfigError("config: invert.image must point at a png");
    return read_png(path);
}

void run_invert(const Json& cfg, const std::string& dir) {
    gen3d::Generator G = config::load_generator(cfg, config::model_path(cfg, "gen"));
    clipstub::ClipModel clip = config::load_clip(cfg, config::model_path(cfg, "clip"));
    pose::PoseExtractor ex = config::load_pose(cfg, config::model_path(cfg, "pose"));
    Image x = load_probe_image(cfg);
    inversion::InvertConfig ic = config::invert_from(cfg);
    inversion::InvertResult res = inversion::invert(x, G, ex, clip, ic);
    write_png(G.render(res.w, res.cam, ic.render), (fs::path(dir) / "recon.png").string());
    write_json({{"loss_trace", res.loss_trace},
                {"camera", {{"yaw", res.cam.yaw_deg}, {"pitch", res.cam.pitch_deg}}},
                {"initial_pixel_l2", res.initial_pixel_l2},
                {"final_pixel_l2", res.final_pixel_l2}},
               fs::path(dir) / "inversion.json");
}

void run_reconstruct(const Json& cfg, const std::string& dir) {
    gen3d::Generator G = config::load_generator(cfg, config::model_path(cfg, "gen"));
    std::vector<gen3d::Generator> adapted;
    for (const auto& p : cfg.at("models").at("adapted"))
        adapted.push_back(config::load_generator(cfg, p.get<std::string>()));
    std::vector<const gen3d::Generator*> gens = {&G};
    for (const auto& g : adapted)
        gens.push_back(&g);
    clipstub::ClipModel clip = config::load_clip(cfg, config::model_path(cfg, "clip"));
    pose::PoseExtractor ex = config::load_pose(cfg, config::model_path(cfg, "pose"));
    Image x = load_probe_image(cfg);
    inversion::SweepConfig sw;
    sw.yaws = cfg.at("invert").at("yaws").get<std::vector<double>>();
    sw.pitch = cfg.at("invert").at("sweep_pitch").get<double>();
    inversion::manipulated_reconstruction(x, gens, ex, clip, config::invert_from(cfg), sw,
                                          nullptr, dir);
}

void run_eval(const Json& cfg, const std::string& dir) {
    clipstub::ClipModel clip = config::load_clip(cfg, config::model_path(cfg, "clip"));
    pose::PoseExtractor ex = config::load_pose(cfg, config::model_path(cfg, "pose"));
    const Json& ev = cfg.at("eval");
    int n_kid = ev.at("kid_samples").get<int>();
    int res = cfg.at("res").get<int>();
    gen3d::RenderConfig rc = config::render_from(cfg);
    uint64_t seed = config::stage_seed(cfg, "eval");
    std::vector<Image> ref =
        eval::style_reference(target_style(cfg), n_kid, res, derive_seed(seed, "ref"));
    std::vector<double> yaws = ev.at("yaws").get<std::vector<double>>();

    std::vector<std::pair<std::string, std::string>> entries = {
        {"source", config::model_path(cfg, "gen")}};
    const Json& adapted = cfg.at("models").at("adapted");
    for (size_t i = 0; i < adapted.size(); ++i)
        entries.push_back({"adapted_" + std::to_string(i), adapted[i].get<std::string>()});

    Json rows = Json::array();
    std::string csv = "name,kid,diversity,pose_consistency\n";
    for (const auto& [name, path] : entries) {
        gen3d::Generator G = config::load_generator(cfg, path);
        std::vector<Image> samples =
            eval::sample_generator(G, n_kid, rc, derive_seed(seed, "sample-" + name));
        double k = eval::kid(samples, ref, clip);
        double div = eval::diversity_score(samples, clip);
        double pc = eval::pose_consistency(G, ex, ev.at("pose_scenes").get<int>(), yaws, rc,
                                           derive_seed(seed, "pose-" + name));
        rows.push_back(
            {{"name", name}, {"kid", k}, {"diversity", div}, {"pose_consistency", pc}});
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%.12g,%.12g,%.12g\n", name.c_str(), k, div, pc);
        csv += line;
    }
    write_json({{"style", cfg.at("dataset").at("style")}, {"rows", rows}},
               fs::path(dir) / "metrics.json");
    std::ofstream f(fs::path(dir) / "metrics.csv");
    f << csv;
}

void run_sweep(const Json& cfg, const std::string& dir) {
    gen3d::Generator G = config::load_generator(cfg, config::model_path(cfg, "gen"));
    diffusion::DiffusionModel model =
        config::load_diffusion(cfg, config::model_path(cfg, "diffusion"));
    clipstub::ClipModel clip = config::load_clip(cfg, config::model_path(cfg, "clip"));
    pose::PoseExtractor ex = config::load_pose(cfg, config::model_path(cfg, "pose"));
    diffusion::DiffusionModel recon =
        config::load_diffusion(cfg, config::model_path(cfg, "recon"));
    const Json& sw = cfg.at("sweep");
    uint64_t seed = config::stage_seed(cfg, "sweep");
    std::vector<Image> probes = eval::sample_generator(
        G, sw.at("probes").get<int>(), config::render_from(cfg), derive_seed(seed, "probes"));
    diffusion::GuidanceSpec recon_spec = config::filter_from(cfg).recon_spec;
    std::vector<eval::TradeoffRow> rows =
        eval::tradeoff_sweep(sw.at("t_rs").get<std::vector<int>>(), probes, target_style(cfg),
                             model, clip, ex, recon, config::guidance_from(cfg), recon_spec, seed);
    Json jrows = Json::array();
    std::string csv = "t_r,d_pose,d_clip\n";
    for (const auto& r : rows) {
        jrows.push_back({{"t_r", r.t_r}, {"d_pose", r.d_pose}, {"d_clip", r.d_clip}});
        char line[128];
        std::snprintf(line, sizeof(line), "%d,%.12g,%.12g\n", r.t_r, r.d_pose, r.d_clip);
        csv += line;
    }
    write_json({{"rows", jrows}}, fs::path(dir) / "sweep.json");
    std::ofstream f(fs::path(dir) / "sweep.csv");
    f << csv;
}

int emit_error(int code, const std::string& msg) {
    Json j = {{"error", msg}, {"code", code}};
    std::cerr << j.dump() << "\n";
    return code;
}

} // namespace

int main(int argc, char** argv) {
    const std::map<std::string, std::function<void(const Json&, const std::string&)>> stages = {
        {"pretrain-source", run_pretrain_source},
        {"train-diffusion", run_train_diffusion},
        {"train-clip", run_train_clip},
        {"train-pose", run_train_pose},
        {"gen-dataset", run_gen_dataset},
        {"train-reconstructor", run_train_reconstructor},
        {"filter", run_filter},
        {"adapt", run_adapt},
        {"adapt-baseline", run_adapt_baseline},
        {"instance-propose", run_instance_propose},
        {"instance-finetune", run_instance_finetune},
        {"invert", run_invert},
        {"reconstruct", run_reconstruct},
        {"eval", run_eval},
        {"sweep", run_sweep},
    };

    if (argc >= 2 && argv[1][0] != '-' && stages.find(argv[1]) == stages.end())
        return emit_error(2, std::string("unknown subcommand '") + argv[1] + "'");

    CLI::App app{"text-guided 3D generator domain adaptation pipeline"};
    app.require_subcommand(0, 1);

    std::string config_path, out, style, mode;
    std::vector<std::string> sets;
    // convenience flags are collected as strings and funneled through the
    // same dotted-path override machinery as --set
    std::map<std::string, std::string> conv;
    auto conv_opt = [&](const std::string& flag, const std::string& path,
                        const std::string& desc) {
        app.add_option_function<std::string>(
               flag, [&conv, path](const std::string& v) { conv[path] = v; }, desc)
            ->expected(1);
    };
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--set", sets, "dotted-path override, key.path=value")
        ->type_size(1)
        ->allow_extra_args(false);
    conv_opt("--seed", "seed", "root seed");
    conv_opt("--workers", "workers", "worker threads for parallel stages");
    conv_opt("--out", "out", "run name under runs/");
    conv_opt("--select", "instance.select", "selected variant index");
    conv_opt("--style", "dataset.style", "target style token");
    conv_opt("--tr", "guidance.t_r", "diffusion return step");
    conv_opt("--scale", "guidance.scale", "guidance scale");
    conv_opt("--alpha", "filter.alpha", "style distance threshold");
    conv_opt("--beta", "filter.beta", "pose distance threshold");
    conv_opt("--n", "dataset.n", "target dataset size");

    for (const auto& [name, fn] : stages)
        app.add_subcommand(name)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return emit_error(3, e.what());
    }

    if (app.get_subcommands().empty()) {
        std::cout << app.help();
        return emit_error(2, "missing subcommand");
    }
    std::string sub = app.get_subcommands()[0]->get_name();

    try {
        std::vector<std::string> overrides;
        for (const auto& [path, value] : conv)
            overrides.push_back(path + "=" + value);
        overrides.insert(overrides.end(), sets.begin(), sets.end());
        Json cfg = config::resolve(config_path, overrides);

        std::string dir = config::run_dir(cfg);
        if (fs::exists(dir) && !fs::is_empty(dir))
            throw config::ConfigError("output directory '" + dir +
                                      "' already has contents; pick a fresh --out");
        fs::create_directories(dir);
        std::cout << cfg.dump(2) << "\n";
        config::write_resolved(cfg, dir);

        stages.at(sub)(cfg, dir);
        return 0;
    } catch (const config::ConfigError& e) {
        return emit_error(3, e.what());
    } catch (const std::exception& e) {
        return emit_error(1, e.what());
    }
}
