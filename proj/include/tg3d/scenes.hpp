#pragma once

#include "tg3d/camera.hpp"
#include "tg3d/image.hpp"
#include "tg3d/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tg3d::scenes {

// Fixed style vocabulary. The first four are renderable; `negative` doubles
// as the unconditional token and `specifier` is reserved for instance
// adaptation.
enum class Style : int {
    source = 0,
    lego = 1,
    statue = 2,
    zombie = 3,
    negative = 4,
    specifier = 5,
};

constexpr int kVocabSize = 6;
const std::vector<std::string>& style_vocab();
std::string style_name(Style s);
Style style_from_name(const std::string& name);
bool renderable(Style s);

struct SceneParams {
    double head_hue = 0.0;       // [0,1)
    double head_radius = 0.4;    // [0.3,0.5]
    double eye_size = 0.05;      // [0.03,0.08]
    double eye_separation = 0.25; // [0.15,0.35]
    double accent_hue = 0.0;     // [0,1)

    bool in_range() const;
    // Per-style procedural sub-mode, a deterministic function of the params.
    int submode() const { return accent_hue >= 0.5 ? 1 : 0; }

    // Probit embedding of the normalized params into the first 5 latent
    // dimensions; remaining dimensions filled with seeded standard normals.
    Vec to_latent(int d_z, uint64_t tail_seed) const;
    // Inverse of the embedding head (first 5 dims only).
    static SceneParams from_latent(const Vec& z);
};

SceneParams sample_scene(uint64_t rng_seed);

Image render_analytic(const SceneParams& params, const CameraPose& cam, Style style,
                      int res = 32);

// Mean column index of dark (eye) pixels, or nullopt when none are visible.
std::optional<double> eye_centroid_col(const Image& img);

Vec3 background_color();

// ---- corpora ----

enum class CorpusKind { diffusion_train, pose_train, contrastive_train, source_pretrain };
std::string corpus_kind_name(CorpusKind k);
CorpusKind corpus_kind_from_name(const std::string& name);

struct CorpusSpec {
    CorpusKind kind = CorpusKind::source_pretrain;
    int n = 0;
    uint64_t seed = 0;
    int res = 32;
    // mixing weights over {source, lego, statue, zombie} for diffusion_train
    std::vector<double> style_weights = {0.4, 0.2, 0.2, 0.2};
    std::string out_dir;
    bool write_images = true;
    int workers = 1;
};

struct CorpusRecord {
    int id = 0;
    int style_token = 0;
    double yaw = 0.0;
    double pitch = 0.0;
    uint64_t scene_seed = 0;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<CorpusRecord> records;
};

Corpus build_corpus(const CorpusSpec& spec);
Corpus load_corpus(const std::string& dir);
Image render_record(const CorpusRecord& rec, int res);

} // namespace tg3d::scenes
