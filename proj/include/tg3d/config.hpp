#pragma once

#include "tg3d/adapt.hpp"
#include "tg3d/inversion.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace tg3d::config {

using Json = nlohmann::ordered_json;

// configuration problems map to their own exit code in the CLI
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// full tree of defaults; every valid key appears here
Json default_config();

// recursively overlay `patch` onto `base`; unknown keys or type mismatches
// throw ConfigError. `path` is only used for error messages.
void merge_validated(Json& base, const Json& patch, const std::string& path = "");

// "a.b.c=value"; value is parsed as JSON when possible, else taken as string
void apply_override(Json& cfg, const std::string& assignment);

// defaults -> optional file -> dotted overrides, then materialize all stage
// seeds so the resolved config is reproducible on its own
Json resolve(const std::string& config_path, const std::vector<std::string>& overrides);

// stage seed: explicit cfg["seeds"][name] when set, else derived from the
// root seed under the stage name
uint64_t stage_seed(const Json& cfg, const std::string& name);

std::string run_dir(const Json& cfg);
void write_resolved(const Json& cfg, const std::string& dir);

// ---- typed views ----
gen3d::RenderConfig render_from(const Json& cfg);
diffusion::NoiseSchedule schedule_from(const Json& cfg);
diffusion::GuidanceSpec guidance_from(const Json& cfg);
pipeline::GenDatasetSpec dataset_spec_from(const Json& cfg);
pipeline::FilterConfig filter_from(const Json& cfg);
adapt::AdaptConfig adapt_from(const Json& cfg);
adapt::DirectConfig direct_from(const Json& cfg);
inversion::InvertConfig invert_from(const Json& cfg);

// ---- model construction / checkpoint loading ----
// shapes come from the config; loaders overwrite the fresh parameters
gen3d::Generator build_generator(const Json& cfg);
diffusion::DiffusionModel build_diffusion(const Json& cfg);
clipstub::ClipModel build_clip(const Json& cfg);
pose::PoseExtractor build_pose(const Json& cfg);

gen3d::Generator load_generator(const Json& cfg, const std::string& ckpt);
diffusion::DiffusionModel load_diffusion(const Json& cfg, const std::string& ckpt);
clipstub::ClipModel load_clip(const Json& cfg, const std::string& ckpt);
pose::PoseExtractor load_pose(const Json& cfg, const std::string& ckpt);

// path under cfg["models"]; empty or missing -> ConfigError naming the key
std::string model_path(const Json& cfg, const std::string& key);

} // namespace tg3d::config
