#pragma once

#include "tg3d/image.hpp"
#include "tg3d/mlp.hpp"
#include "tg3d/scenes.hpp"

#include <memory>
#include <vector>

namespace tg3d::diffusion {

struct NoiseSchedule {
    int T = 1000;
    int T_p = 850;
    Vec betas;     // size T+1, betas[0] = 0
    Vec alphabars; // size T+1, alphabars[0] = 1

    static NoiseSchedule linear(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02,
                                int T_p = 850);
};

// Latent codec. The default is the identity map on pixel vectors; the
// interface exists so a learned codec can be swapped in without touching the
// samplers.
struct Codec {
    virtual ~Codec() = default;
    virtual Vec encode(const Image& x) const = 0;
    virtual Image decode(const Vec& q) const = 0;
    virtual int latent_dim() const = 0;
};

struct IdentityCodec : Codec {
    int res = 32;
    explicit IdentityCodec(int res = 32) : res(res) {}
    Vec encode(const Image& x) const override;
    Image decode(const Vec& q) const override;
    int latent_dim() const override { return res * res * 3; }
};

enum class Sampler { ddpm, ddim };

struct GuidanceSpec {
    scenes::Style target = scenes::Style::source;
    scenes::Style negative = scenes::Style::negative;
    double scale = 10.0;
    int return_step = 700;
    Sampler sampler = Sampler::ddim;
    double ddim_eta = 0.0;
    int ddim_steps = 50;
};

Vec time_embedding(int t, int T, int dim);

// Conditional noise predictor in the x0 parameterization: the clean-latent
// estimate is an affine shrinkage g_t*q_t + (1 - g_t*sqrt(abar))*mu plus the
// output of an MLP over [latent; timestep embedding; learned style-token
// embedding], and the noise estimate is formed analytically as
// (q_t - sqrt(abar)*x0hat)/sqrt(1-abar). The affine part is initialized to
// the linear-MMSE estimator of the training data, so the network only has to
// learn the residual and stays O(1)-scaled at every timestep.
class DiffusionModel {
public:
    struct Config {
        int res = 32;
        int hidden = 128;
        int d_temb = 16;
        int d_tok = 16;
    };

    DiffusionModel() = default;
    DiffusionModel(const Config& cfg, const NoiseSchedule& sched, Rng& rng);

    const Config& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return sched_; }
    int latent_dim() const { return cfg_.res * cfg_.res * 3; }
    int input_dim() const { return latent_dim() + cfg_.d_temb + cfg_.d_tok; }

    Vec eps(const Vec& q_t, int t, scenes::Style y) const;
    Mat eps_batch(const Mat& q, const std::vector<int>& ts,
                  const std::vector<scenes::Style>& ys, Mlp::Cache* cache = nullptr) const;

    // gradient coefficient of eps w.r.t. the network/gate output at timestep t
    double out_coeff(int t) const;

    ParamSet param_set(const std::string& prefix = "diff");
    ParamSet param_set(const std::string& prefix = "diff") const;
    uint64_t hash() const { return param_hash(param_set()); }

    Mlp net;
    Mat token_emb; // d_tok x vocab
    Vec gate;      // size T+1, skip-gate scalar per timestep
    Vec mu;        // latent base point for the affine part of the estimator

private:
    Mat build_input(const Mat& q, const std::vector<int>& ts,
                    const std::vector<scenes::Style>& ys) const;
    Config cfg_;
    NoiseSchedule sched_;
};

// ---- forward / reverse process ----

Vec forward_perturb(const Vec& q0, int t, const NoiseSchedule& sched, Rng& rng,
                    Vec* noise_out = nullptr);

Vec guided_eps(const DiffusionModel& model, const Vec& q_t, int t, const GuidanceSpec& spec);

// q0 estimate implied by a noise prediction (exact inverse of the perturbation
// when eps is the true noise)
Vec predict_x0(const Vec& q_t, int t, const Vec& eps, const NoiseSchedule& sched);

// one reverse step with an externally supplied noise prediction; t_prev < t
// (consecutive for DDPM, possibly strided for DDIM)
Vec sample_step_with_eps(const Vec& q_t, int t, int t_prev, const Vec& eps,
                         const NoiseSchedule& sched, Sampler sampler, double eta, Rng& rng);

Vec sample_step(const DiffusionModel& model, const Vec& q_t, int t, const GuidanceSpec& spec,
                Rng& rng);

// image-to-image: perturb to the return step, then denoise under the guidance
// spec
Image t_i2i(const Image& x_src, const GuidanceSpec& spec, const DiffusionModel& model,
            const Codec& codec, Rng& rng);

// unconditional-prior sampling from t = T (used for class-conditional probes)
Image sample_prior(const DiffusionModel& model, const Codec& codec, const GuidanceSpec& spec,
                   Rng& rng);

// ---- training ----

struct TrainDiffusionConfig {
    int epochs = 120;
    int batch = 32;
    double lr = 3e-3;
    double holdout_frac = 0.1;
    double uncond_drop = 0.1; // chance a sample trains the `negative` token
    uint64_t seed = 0;
    bool verbose = false;
};

struct TrainDiffusionReport {
    std::vector<double> epoch_loss;
    double holdout_mse = 0.0; // E || eps - eps_hat ||^2, summed over dims
};

// mean squared prediction error (summed over latent dims), averaged over
// seeded (t, noise) draws per sample
double eval_eps_mse(const DiffusionModel& model, const Mat& latents,
                    const std::vector<scenes::Style>& tokens, uint64_t seed, int draws = 8,
                    int t_lo = 1, int t_hi = -1);

DiffusionModel train_diffusion(const scenes::Corpus& corpus, const NoiseSchedule& sched,
                               const TrainDiffusionConfig& cfg,
                               TrainDiffusionReport* report = nullptr);

struct FinetuneConfig {
    int steps = 400;
    int batch = 8;
    double lr = 5e-4;
    uint64_t seed = 0;
};

struct FinetuneReport {
    std::vector<double> step_loss;
    std::vector<int> sampled_t;
};

// fine-tune a copy of the model on a fixed image set, sampling timesteps only
// from [t_lo, t_hi]
DiffusionModel finetune_limited(const DiffusionModel& model, const std::vector<Image>& images,
                                const std::vector<scenes::Style>& tokens, int t_lo, int t_hi,
                                const FinetuneConfig& cfg, FinetuneReport* report = nullptr);

} // namespace tg3d::diffusion
