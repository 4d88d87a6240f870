#pragma once

#include "tg3d/gen3d.hpp"
#include "tg3d/pipeline.hpp"

#include <string>
#include <vector>

namespace tg3d::adapt {

// f(u) = -log(1 + exp(-u)), the saturating GAN nonlinearity; stable for |u|
// up to 1e4 and beyond
double softplus_f(double u);

// Pose-conditioned critic: MLP on [centered pixels; normalized camera angles]
// with a scalar logit output.
class Discriminator {
public:
    struct Config {
        int res = 32;
        int hidden = 64;
    };

    Discriminator() = default;
    Discriminator(const Config& cfg, Rng& rng);

    const Config& config() const { return cfg_; }
    int image_dim() const { return cfg_.res * cfg_.res * 3; }
    int input_dim() const { return image_dim() + 2; }

    Vec input_vec(const Image& x, const CameraPose& c) const;
    double logit(const Image& x, const CameraPose& c) const;

    ParamSet param_set(const std::string& prefix = "disc");
    ParamSet param_set(const std::string& prefix = "disc") const;
    uint64_t hash() const { return param_hash(param_set()); }

    Mlp net;

private:
    Config cfg_;
};

// ||grad_x D(x, c)||^2 over the image coordinates. With g given, adds
// gscale * d(penalty)/d(params) via forward-over-reverse double backprop.
double r1_penalty(const Discriminator& D, const Image& x, const CameraPose& c,
                  MlpGrads* g = nullptr, double gscale = 1.0);

// One sampled realization of the augmentation; all ops inactive when p = 0.
struct AugmentDraw {
    bool flip = false;
    int rot = 0; // quarter turns, 0..3
    int dx = 0, dy = 0;
    double bright = 0.0;
};

// Leak-free stochastic augmentation: each op is applied independently with
// probability p; every op has an exact linear adjoint for the fake path.
struct AugmentPipeline {
    double p = 0.0;
    int max_shift = 4;
    double max_bright = 0.2;

    AugmentDraw sample(Rng& rng) const;
    static Image apply(const Image& x, const AugmentDraw& d);
    // adjoint: pushes a gradient on apply's output back to its input
    static Image backward(const Image& dy, const AugmentDraw& d);
};

// zero-padded separable Gaussian; symmetric kernel makes it self-adjoint,
// so the same call serves as its own backward. sigma <= 0 is the identity.
Image gaussian_blur(const Image& x, double sigma);

struct FakeBatch {
    std::vector<Vec> zs;
    std::vector<CameraPose> cams;
    size_t size() const { return zs.size(); }
};

// -f(D(blur(A(G(z,c))), c)) averaged over the batch; gradients reach all
// generator parameters when g is given. Augmentation draws come from aug_rng.
double ada_loss_G(const gen3d::Generator& G, const Discriminator& D, const AugmentPipeline& A,
                  const FakeBatch& batch, const gen3d::RenderConfig& rc, double blur_sigma,
                  Rng& aug_rng, gen3d::GenGrads* g = nullptr);

// softplus(D(fake)) + softplus(-D(real)) + lambda_r1 * R1(real), all averaged;
// R1 is computed on the augmented (and blurred) real inputs only.
double ada_loss_D(const gen3d::Generator& G, const Discriminator& D, const AugmentPipeline& A,
                  const FakeBatch& fake, const std::vector<Image>& real_x,
                  const std::vector<CameraPose>& real_c, double lambda_r1,
                  const gen3d::RenderConfig& rc, double blur_sigma, Rng& aug_rng,
                  MlpGrads* g = nullptr, double* r1_out = nullptr,
                  std::vector<double>* real_logits = nullptr);

// mean |sigma(v) - sigma(v + dv)|, dv ~ N(0, dv_sigma^2 I), base points
// uniform in a margin of the unit cube; parameter and conditioning gradients
// accumulate into g when given.
double density_regularization(const gen3d::Generator& G, const gen3d::WPlus& w, double dv_sigma,
                              int n_points, Rng& rng, gen3d::FieldGrads* g = nullptr,
                              double gscale = 1.0);

struct PControllerState {
    double p = 0.0;
    double target = 0.6;
    double traverse_images = 500000.0; // images to cross [0,1] at full tilt
};

// r_t = mean sign of the real logits; p moves by n_images/traverse_images in
// the direction of sign(r_t - target), clamped to [0,1]. Returns the new p.
double update_p_controller(PControllerState& st, const std::vector<double>& real_logits,
                           int n_images);

struct AdaptConfig {
    double lambda_r1 = 5.0;
    double lambda_den = 0.25;
    double dv_sigma = 0.008; // 0.004 * volume side (side 2)
    int den_points = 32;
    int batch = 20;
    double lr = 0.002;
    int epochs = 1;
    double p_target = 0.6;
    double p_traverse_images = 500000.0;
    double blur_sigma0 = 2.0;
    double blur_frac = 0.1; // fraction of the budget over which blur anneals
    bool augment = true;    // false freezes p at 0 (no-augmentation ablation)
    gen3d::RenderConfig render;
    uint64_t seed = 0;
    std::string out_dir; // empty: no checkpoints or log file
    bool verbose = false;
};

struct AdaptLogEntry {
    int step = 0;
    double loss_G = 0, loss_D = 0, r1 = 0, den = 0, p = 0, r_t = 0;
};

struct AdaptResult {
    gen3d::Generator G;
    Discriminator D;
    std::vector<AdaptLogEntry> log;
    int g_steps = 0, d_steps = 0;
    bool aborted = false; // non-finite loss; parameters rolled back
};

// alternating G-step / D-step adversarial adaptation against the filtered
// paired dataset; checkpoints per epoch when out_dir is set
AdaptResult adapt_adversarial(const gen3d::Generator& G_source,
                              const pipeline::TargetDataset& data, const AdaptConfig& cfg);

struct DirectConfig {
    int steps = 200;
    int batch = 8;
    double lr = 2e-3;
    double lambda_indomain = 0.0;
    gen3d::RenderConfig render;
    uint64_t seed = 0;
    bool verbose = false;
};

// text-directional fine-tuning against a frozen copy of the source generator
gen3d::Generator adapt_nada_star(const gen3d::Generator& G_source,
                                 const clipstub::ClipModel& clip, scenes::Style y_src,
                                 scenes::Style y_tar, const DirectConfig& cfg,
                                 std::vector<double>* loss_trace = nullptr);

// as adapt_nada_star plus lambda_indomain * pairwise angle-consistency loss
gen3d::Generator adapt_hyper_star(const gen3d::Generator& G_source,
                                  const clipstub::ClipModel& clip, scenes::Style y_src,
                                  scenes::Style y_tar, const DirectConfig& cfg,
                                  std::vector<double>* loss_trace = nullptr,
                                  std::vector<double>* indomain_trace = nullptr);

// directional fine-tuning where the target direction is the per-record image
// embedding difference E(trg) - E(src) instead of a text difference
gen3d::Generator adapt_nonadversarial_image(const gen3d::Generator& G_source,
                                            const clipstub::ClipModel& clip,
                                            const pipeline::TargetDataset& data,
                                            const DirectConfig& cfg,
                                            std::vector<double>* loss_trace = nullptr);

} // namespace tg3d::adapt
