#pragma once

#include "tg3d/camera.hpp"
#include "tg3d/image.hpp"
#include "tg3d/mlp.hpp"
#include "tg3d/scenes.hpp"

#include <vector>

namespace tg3d::gen3d {

struct RenderConfig {
    int samples_per_ray = 24;
    double near = kCameraRadius - 1.1;
    double far = kCameraRadius + 1.1;
    int res = 32;
};

// Per-layer conditioning stack; both entries equal map_latent(z) in normal
// operation and diverge only during W+ inversion.
struct WPlus {
    Vec w1, w2;
    static WPlus broadcast(const Vec& w) { return {w, w}; }
};

struct FieldGrads {
    Mat dW1, dW2, dW3;
    Vec db1, db2, db3;
    Vec dw1, dw2; // grads w.r.t. the conditioning stack

    void add(const FieldGrads& o);
    void scale(double s);
};

struct GenGrads {
    MlpGrads mapping;
    FieldGrads field;
    ParamSet param_set();
    void add(const GenGrads& o);
    void scale(double s);
};

// Pose-conditioned implicit-field generator: latent -> style vector ->
// conditioned MLP density/color field -> volume-rendered image.
class Generator {
public:
    struct Config {
        int d_z = 16;
        int d_w = 32;
        int map_hidden = 32;
        int field_hidden = 48;
        int posenc_freqs = 4;
    };

    Generator() = default;
    Generator(const Config& cfg, Rng& rng);

    const Config& config() const { return cfg_; }
    int pe_dim() const { return 3 + 6 * cfg_.posenc_freqs; }

    Vec map_latent(const Vec& z) const;
    WPlus map_wplus(const Vec& z) const { return WPlus::broadcast(map_latent(z)); }

    // ---- field ----
    struct FieldEval {
        Mat in1, post1, in2, post2, raw; // raw is 4 x N
    };
    FieldEval field_forward(const WPlus& w, const Mat& pts) const; // pts 3 x N
    void field_backward(const FieldEval& ev, const Mat& draw, FieldGrads& g) const;

    // densities via softplus(raw0); rejects points outside [-1,1]^3
    Vec query_density(const WPlus& w, const Mat& pts) const;
    // density + gradient hook for the density regularizer (no volume check,
    // the caller guarantees containment)
    Vec density_with_cache(const WPlus& w, const Mat& pts, FieldEval& ev) const;
    void density_backward(const FieldEval& ev, const Vec& dsigma, FieldGrads& g) const;

    // ---- rendering ----
    struct RenderCache {
        RenderConfig cfg;
        std::vector<int> rays; // pixel ids, row-major
        Mat pts;               // 3 x (K * spr)
        std::vector<char> inside;
        FieldEval ev;
        Arr sigma, alpha;
        Mat rgb;    // 3 x (K * spr)
        Mat pixels; // 3 x K
    };

    // pixels for the given rays (3 x K); pure function of (params, w, cam, cfg)
    Mat render_rays(const WPlus& w, const CameraPose& cam, const RenderConfig& cfg,
                    const std::vector<int>& rays, RenderCache* cache = nullptr) const;
    Image render(const WPlus& w, const CameraPose& cam, const RenderConfig& cfg) const;
    Image render_latent(const Vec& z, const CameraPose& cam, const RenderConfig& cfg) const;

    void render_backward(const RenderCache& cache, const Mat& dpixels, FieldGrads& g) const;

    // full latent-to-image backward: routes w-grads through the mapping net
    void backward_through_mapping(const Vec& z, const Vec& dw, GenGrads& g) const;

    GenGrads zero_grads() const;
    ParamSet param_set(const std::string& prefix = "gen");
    ParamSet param_set(const std::string& prefix = "gen") const;
    uint64_t hash() const { return param_hash(param_set()); }

    Mlp mapping;
    Mat W1, W2, W3;
    Vec b1, b2, b3;

private:
    Config cfg_;
};

struct PretrainConfig {
    int epochs = 6;
    int batch = 8;
    int rays_per_image = 256;
    double lr = 0.01;
    double holdout_frac = 0.1;
    uint64_t seed = 0;
    RenderConfig render;
    bool verbose = false;
};

struct PretrainReport {
    double holdout_psnr = 0.0;
    std::vector<double> epoch_loss;
};

// Latent for a source-pretrain record: probit scene embedding + seeded tail.
Vec record_latent(const scenes::CorpusRecord& rec, int d_z);

PretrainReport pretrain_source(Generator& gen, const scenes::Corpus& corpus,
                               const PretrainConfig& cfg);

} // namespace tg3d::gen3d
