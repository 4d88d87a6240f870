#pragma once

#include "tg3d/image.hpp"
#include "tg3d/mlp.hpp"
#include "tg3d/scenes.hpp"

#include <vector>

namespace tg3d::clipstub {

// Contrastive dual encoder: MLP image tower onto the unit sphere plus a
// learned per-token text embedding table. Provides the shared space for
// filtering distances and the directional / angle-consistency losses.
class ClipModel {
public:
    struct Config {
        int res = 32;
        int hidden = 64;
        int d_e = 32;
    };

    ClipModel() = default;
    ClipModel(const Config& cfg, Rng& rng);

    const Config& config() const { return cfg_; }
    int input_dim() const { return cfg_.res * cfg_.res * 3; }

    // columns are unit-norm embeddings; raw keeps pre-normalization vectors
    // for the backward pass
    Mat embed_images(const Mat& pixels, Mlp::Cache* cache = nullptr, Mat* raw = nullptr) const;
    Vec embed_image(const Image& x) const;
    Vec embed_text(scenes::Style y) const;
    Mat text_embeddings() const; // d_e x vocab, columns unit-norm

    // backprop d(normalized embedding) -> d(pixels); accumulates tower grads
    Mat embed_backward(const Mat& dv, const Mat& raw, const Mlp::Cache& cache, MlpGrads& g) const;

    ParamSet param_set(const std::string& prefix = "clip");
    ParamSet param_set(const std::string& prefix = "clip") const;
    uint64_t hash() const { return param_hash(param_set()); }

    Mlp tower;
    Mat text_raw; // d_e x vocab, unnormalized

private:
    Config cfg_;
};

// cosine distance between an image and a style token, in [0, 2]
double clip_distance(const ClipModel& model, const Image& x, scenes::Style y);

// 1 - cos(dI, dT) where dI = E(x_gen) - E(x_src), dT = E(y_tar) - E(y_src).
// Zero-norm direction falls back to loss 1 with zero gradient. If dpix_gen is
// given it receives the gradient w.r.t. x_gen pixels.
double directional_loss(const ClipModel& model, const Image& x_gen, const Image& x_src,
                        scenes::Style y_tar, scenes::Style y_src, Vec* dpix_gen = nullptr);

// sum over ordered pairs i != j of (<e_gen_i, e_gen_j> - <e_src_i, e_src_j>)^2
double indomain_angle_loss(const ClipModel& model, const std::vector<Image>& gen_batch,
                           const std::vector<Image>& src_batch,
                           std::vector<Vec>* dpix_gen = nullptr);

struct TrainClipConfig {
    int epochs = 40;
    int batch = 32;
    double lr = 2e-3;
    double temperature = 0.07;
    double holdout_frac = 0.1;
    uint64_t seed = 0;
    bool verbose = false;
};

struct TrainClipReport {
    std::vector<double> epoch_loss;
    double holdout_accuracy = 0.0;
};

// label-retrieval accuracy (nearest text embedding among the styles present)
double retrieval_accuracy(const ClipModel& model, const Mat& pixels,
                          const std::vector<scenes::Style>& labels);

ClipModel train_contrastive(const scenes::Corpus& corpus, const TrainClipConfig& cfg,
                            TrainClipReport* report = nullptr);

} // namespace tg3d::clipstub
