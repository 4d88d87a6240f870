#include "tg3d/diffusion.hpp"

#include "tg3d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace tg3d::diffusion {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end, int T_p) {
    check(T >= 2 && T_p > 0 && T_p < T, "schedule: need 0 < T_p < T");
    check(beta_start > 0 && beta_start < beta_end && beta_end < 1, "schedule: bad beta range");
    NoiseSchedule s;
    s.T = T;
    s.T_p = T_p;
    s.betas = Vec::Zero(T + 1);
    s.alphabars = Vec::Ones(T + 1);
    for (int t = 1; t <= T; ++t) {
        s.betas[t] = beta_start + (beta_end - beta_start) * (t - 1) / double(T - 1);
        s.alphabars[t] = s.alphabars[t - 1] * (1.0 - s.betas[t]);
    }
    return s;
}

Vec IdentityCodec::encode(const Image& x) const {
    check(x.h == res && x.w == res, "codec: resolution mismatch");
    return x.px;
}

Image IdentityCodec::decode(const Vec& q) const {
    check(q.size() == res * res * 3, "codec: latent size mismatch");
    Image img(res, res);
    img.px = q;
    return img;
}

Vec time_embedding(int t, int T, int dim) {
    check(dim % 2 == 0, "time_embedding: dim must be even");
    Vec e(dim);
    double tn = double(t) / double(T);
    for (int k = 0; k < dim / 2; ++k) {
        double w = kPi * std::pow(2.0, k);
        e[2 * k] = std::sin(tn * w);
        e[2 * k + 1] = std::cos(tn * w);
    }
    return e;
}

DiffusionModel::DiffusionModel(const Config& cfg, const NoiseSchedule& sched, Rng& rng)
    : cfg_(cfg), sched_(sched) {
    int d_q = latent_dim();
    net = Mlp({d_q + cfg.d_temb + cfg.d_tok, cfg.hidden, cfg.hidden, d_q}, rng);
    token_emb = rng.normal_mat(cfg.d_tok, scenes::kVocabSize, 0.5);
    gate = Vec::Zero(sched.T + 1);
    mu = Vec::Zero(d_q);
}

Mat DiffusionModel::build_input(const Mat& q, const std::vector<int>& ts,
                                const std::vector<scenes::Style>& ys) const {
    int n = static_cast<int>(q.cols());
    check(static_cast<int>(ts.size()) == n && static_cast<int>(ys.size()) == n,
          "eps: batch size mismatch");
    Mat in(input_dim(), n);
    for (int i = 0; i < n; ++i) {
        check(ts[i] >= 0 && ts[i] <= sched_.T, "eps: timestep out of range");
        in.col(i).head(latent_dim()) = q.col(i);
        in.col(i).segment(latent_dim(), cfg_.d_temb) = time_embedding(ts[i], sched_.T, cfg_.d_temb);
        in.col(i).tail(cfg_.d_tok) = token_emb.col(static_cast<int>(ys[i]));
    }
    return in;
}

double DiffusionModel::out_coeff(int t) const {
    if (t == 0)
        return 1.0; // degenerate timestep: raw network output stands in for eps
    double ab = sched_.alphabars[t];
    return -std::sqrt(ab) / std::sqrt(1.0 - ab);
}

Mat DiffusionModel::eps_batch(const Mat& q, const std::vector<int>& ts,
                              const std::vector<scenes::Style>& ys, Mlp::Cache* cache) const {
    Mat x0hat = net.forward(build_input(q, ts, ys), cache);
    Mat out(x0hat.rows(), x0hat.cols());
    for (int i = 0; i < out.cols(); ++i) {
        int t = ts[i];
        double sab = std::sqrt(sched_.alphabars[t]);
        Vec pred = x0hat.col(i) + gate[t] * q.col(i) + (1.0 - gate[t] * sab) * mu;
        if (t == 0) {
            out.col(i) = pred;
            continue;
        }
        double ab = sched_.alphabars[t];
        out.col(i) = (q.col(i) - std::sqrt(ab) * pred) / std::sqrt(1.0 - ab);
    }
    return out;
}

Vec DiffusionModel::eps(const Vec& q_t, int t, scenes::Style y) const {
    return eps_batch(q_t, {t}, {y});
}

ParamSet DiffusionModel::param_set(const std::string& prefix) {
    ParamSet ps = net.param_set(prefix + ".net");
    ps.push_back({prefix + ".tokens", token_emb.data(), token_emb.size()});
    ps.push_back({prefix + ".gate", gate.data(), gate.size()});
    ps.push_back({prefix + ".mu", mu.data(), mu.size()});
    return ps;
}

ParamSet DiffusionModel::param_set(const std::string& prefix) const {
    return const_cast<DiffusionModel*>(this)->param_set(prefix);
}

Vec forward_perturb(const Vec& q0, int t, const NoiseSchedule& sched, Rng& rng, Vec* noise_out) {
    check(t >= 0 && t <= sched.T, "forward_perturb: t out of [0, T]");
    double ab = sched.alphabars[t];
    Vec n = rng.normal_vec(static_cast<int>(q0.size()));
    if (noise_out)
        *noise_out = n;
    return std::sqrt(ab) * q0 + std::sqrt(1.0 - ab) * n;
}

Vec guided_eps(const DiffusionModel& model, const Vec& q_t, int t, const GuidanceSpec& spec) {
    Mat q(q_t.size(), 2);
    q.col(0) = q_t;
    q.col(1) = q_t;
    Mat e = model.eps_batch(q, {t, t}, {spec.target, spec.negative});
    return spec.scale * e.col(0) + (1.0 - spec.scale) * e.col(1);
}

Vec predict_x0(const Vec& q_t, int t, const Vec& eps, const NoiseSchedule& sched) {
    check(t >= 1 && t <= sched.T, "predict_x0: t out of [1, T]");
    double ab = sched.alphabars[t];
    return (q_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

Vec sample_step_with_eps(const Vec& q_t, int t, int t_prev, const Vec& eps,
                         const NoiseSchedule& sched, Sampler sampler, double eta, Rng& rng) {
    check(t >= 1 && t <= sched.T && t_prev >= 0 && t_prev < t, "sample_step: bad timesteps");
    double ab = sched.alphabars[t];
    double ab_prev = sched.alphabars[t_prev];
    if (sampler == Sampler::ddpm) {
        check(t_prev == t - 1, "ddpm steps are consecutive");
        double beta = sched.betas[t];
        double alpha = 1.0 - beta;
        Vec mean = (q_t - beta / std::sqrt(1.0 - ab) * eps) / std::sqrt(alpha);
        return mean + std::sqrt(beta) * rng.normal_vec(static_cast<int>(q_t.size()));
    }
    Vec x0 = predict_x0(q_t, t, eps, sched);
    double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    Vec out = std::sqrt(ab_prev) * x0 + dir * eps;
    if (sigma > 0.0)
        out += sigma * rng.normal_vec(static_cast<int>(q_t.size()));
    return out;
}

Vec sample_step(const DiffusionModel& model, const Vec& q_t, int t, const GuidanceSpec& spec,
                Rng& rng) {
    Vec e = guided_eps(model, q_t, t, spec);
    return sample_step_with_eps(q_t, t, t - 1, e, model.schedule(), spec.sampler, spec.ddim_eta,
                                rng);
}

namespace {

// descending timestep ladder for the reverse chain starting at t_start
std::vector<int> reverse_timesteps(int t_start, const GuidanceSpec& spec) {
    std::vector<int> ts;
    if (t_start < 1)
        return ts;
    if (spec.sampler == Sampler::ddpm) {
        for (int t = t_start; t >= 1; --t)
            ts.push_back(t);
        return ts;
    }
    int n = std::min(spec.ddim_steps, t_start);
    for (int i = 0; i < n; ++i) {
        int t = static_cast<int>(std::llround(double(t_start) * (n - i) / n));
        if (ts.empty() || t < ts.back())
            ts.push_back(std::max(1, t));
    }
    return ts;
}

Vec denoise_chain(const DiffusionModel& model, Vec q, int t_start, const GuidanceSpec& spec,
                  Rng& rng) {
    std::vector<int> ts = reverse_timesteps(t_start, spec);
    for (size_t i = 0; i < ts.size(); ++i) {
        int t = ts[i];
        int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
        Vec e = guided_eps(model, q, t, spec);
        q = sample_step_with_eps(q, t, t_prev, e, model.schedule(), spec.sampler, spec.ddim_eta,
                                 rng);
        check(q.allFinite(), "denoise_chain: non-finite latent");
    }
    return q;
}

} // namespace

Image t_i2i(const Image& x_src, const GuidanceSpec& spec, const DiffusionModel& model,
            const Codec& codec, Rng& rng) {
    const NoiseSchedule& sched = model.schedule();
    check(spec.return_step >= 0 && spec.return_step < sched.T_p,
          "t_i2i: return step must satisfy t_r < T_p");
    Vec q = codec.encode(x_src);
    q = forward_perturb(q, spec.return_step, sched, rng);
    q = denoise_chain(model, q, spec.return_step, spec, rng);
    return codec.decode(q.cwiseMax(0.0).cwiseMin(1.0));
}

Image sample_prior(const DiffusionModel& model, const Codec& codec, const GuidanceSpec& spec,
                   Rng& rng) {
    Vec q = rng.normal_vec(codec.latent_dim());
    q = denoise_chain(model, q, model.schedule().T, spec, rng);
    return codec.decode(q.cwiseMax(0.0).cwiseMin(1.0));
}

double eval_eps_mse(const DiffusionModel& model, const Mat& latents,
                    const std::vector<scenes::Style>& tokens, uint64_t seed, int draws, int t_lo,
                    int t_hi) {
    int n = static_cast<int>(latents.cols());
    check(n > 0 && draws > 0, "eval_eps_mse: empty set");
    const NoiseSchedule& sched = model.schedule();
    if (t_hi < 0)
        t_hi = sched.T;
    check(1 <= t_lo && t_lo <= t_hi && t_hi <= sched.T, "eval_eps_mse: bad t range");
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, "eval-eps", i));
        for (int d = 0; d < draws; ++d) {
            int t = static_cast<int>(rng.uniform_int(t_lo, t_hi));
            Vec noise;
            Vec q_t = forward_perturb(latents.col(i), t, sched, rng, &noise);
            Vec pred = model.eps(q_t, t, tokens[i]);
            total += (pred - noise).squaredNorm();
        }
    }
    return total / (n * draws);
}

namespace {

struct Batch {
    Mat q_t;
    Mat target; // true noise
    std::vector<int> ts;
    std::vector<scenes::Style> ys;
};

// One Adam step on a batch. The noise-prediction error is reweighted per
// sample into the clean-latent parameterization, which keeps gradient scale
// flat across timesteps; returns that reweighted mean squared error.
double train_step(DiffusionModel& model, const Batch& b, Adam& opt) {
    int n = static_cast<int>(b.q_t.cols());
    Mlp::Cache cache;
    Mat pred = model.eps_batch(b.q_t, b.ts, b.ys, &cache);
    Mat diff = pred - b.target;
    double loss = 0.0;
    Mat dy(diff.rows(), diff.cols());
    for (int i = 0; i < n; ++i) {
        double c = model.out_coeff(b.ts[i]);
        loss += diff.col(i).squaredNorm() / (c * c * n);
        dy.col(i) = diff.col(i) * (2.0 / (c * n));
    }
    check(std::isfinite(loss), "train_diffusion: non-finite loss");

    MlpGrads g = model.net.zero_grads();
    Mat dx = model.net.backward(dy, cache, g);
    Mat dtok = Mat::Zero(model.token_emb.rows(), model.token_emb.cols());
    Vec dgate = Vec::Zero(model.gate.size());
    Vec dmu = Vec::Zero(model.mu.size());
    for (int i = 0; i < n; ++i) {
        dtok.col(static_cast<int>(b.ys[i])) += dx.col(i).tail(model.config().d_tok);
        double sab = std::sqrt(model.schedule().alphabars[b.ts[i]]);
        dgate[b.ts[i]] += dy.col(i).dot(b.q_t.col(i) - sab * model.mu);
        dmu += dy.col(i) * (1.0 - model.gate[b.ts[i]] * sab);
    }

    ParamSet params = model.param_set();
    ParamSet grads = g.param_set("diff.net");
    grads.push_back({"diff.tokens", dtok.data(), dtok.size()});
    grads.push_back({"diff.gate", dgate.data(), dgate.size()});
    grads.push_back({"diff.mu", dmu.data(), dmu.size()});
    opt.step(params, grads);
    return loss;
}

} // namespace

DiffusionModel train_diffusion(const scenes::Corpus& corpus, const NoiseSchedule& sched,
                               const TrainDiffusionConfig& cfg, TrainDiffusionReport* report) {
    int n = static_cast<int>(corpus.records.size());
    check(n >= 2, "train_diffusion: corpus too small");
    int res = corpus.spec.res;
    IdentityCodec codec(res);

    Mat latents(codec.latent_dim(), n);
    std::vector<scenes::Style> tokens(n);
    for (int i = 0; i < n; ++i) {
        latents.col(i) = codec.encode(scenes::render_record(corpus.records[i], res));
        tokens[i] = static_cast<scenes::Style>(corpus.records[i].style_token);
    }

    int n_hold = std::max(1, static_cast<int>(std::lround(n * cfg.holdout_frac)));
    int n_train = n - n_hold;
    check(n_train >= 1, "train_diffusion: holdout leaves no training data");

    Rng rng(derive_seed(cfg.seed, "train-diffusion"));
    DiffusionModel::Config mc;
    mc.res = res;
    DiffusionModel model(mc, sched, rng);

    // start the affine part at the linear-MMSE estimator for the data's mean
    // and per-dim variance; the network only has to learn the residual
    Vec mean = latents.rowwise().mean();
    double v = (latents.colwise() - mean).squaredNorm() / double(latents.size());
    model.mu = mean;
    for (int t = 0; t <= sched.T; ++t) {
        double ab = sched.alphabars[t];
        model.gate[t] = std::sqrt(ab) * v / (ab * v + 1.0 - ab);
    }

    Adam opt(cfg.lr);

    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    if (report)
        report->epoch_loss.clear();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double epoch_loss = 0.0;
        int steps = 0;
        for (int start = 0; start < n_train; start += cfg.batch) {
            int bn = std::min(cfg.batch, n_train - start);
            Batch b;
            b.q_t.resize(latents.rows(), bn);
            b.target.resize(latents.rows(), bn);
            b.ts.resize(bn);
            b.ys.resize(bn);
            for (int i = 0; i < bn; ++i) {
                int idx = order[start + i];
                b.ts[i] = static_cast<int>(rng.uniform_int(1, sched.T));
                b.ys[i] = rng.bernoulli(cfg.uncond_drop) ? scenes::Style::negative : tokens[idx];
                Vec noise;
                b.q_t.col(i) = forward_perturb(latents.col(idx), b.ts[i], sched, rng, &noise);
                b.target.col(i) = noise;
            }
            epoch_loss += train_step(model, b, opt);
            ++steps;
        }
        epoch_loss /= steps;
        if (report)
            report->epoch_loss.push_back(epoch_loss);
        if (cfg.verbose)
            std::fprintf(stderr, "diffusion epoch %d/%d loss %.2f\n", epoch + 1, cfg.epochs,
                         epoch_loss);
    }

    if (report) {
        Mat hold = latents.rightCols(n_hold);
        std::vector<scenes::Style> hold_tok(tokens.end() - n_hold, tokens.end());
        report->holdout_mse = eval_eps_mse(model, hold, hold_tok, derive_seed(cfg.seed, "holdout"));
    }
    return model;
}

DiffusionModel finetune_limited(const DiffusionModel& model, const std::vector<Image>& images,
                                const std::vector<scenes::Style>& tokens, int t_lo, int t_hi,
                                const FinetuneConfig& cfg, FinetuneReport* report) {
    check(!images.empty(), "finetune_limited: empty image set");
    check(images.size() == tokens.size(), "finetune_limited: image/token count mismatch");
    const NoiseSchedule& sched = model.schedule();
    check(0 <= t_lo && t_lo <= t_hi && t_hi <= sched.T, "finetune_limited: bad t range");

    IdentityCodec codec(model.config().res);
    int n = static_cast<int>(images.size());
    Mat latents(codec.latent_dim(), n);
    for (int i = 0; i < n; ++i)
        latents.col(i) = codec.encode(images[i]);

    DiffusionModel out = model;
    Adam opt(cfg.lr);
    Rng rng(derive_seed(cfg.seed, "finetune-limited"));
    if (report) {
        report->step_loss.clear();
        report->sampled_t.clear();
    }

    for (int step = 0; step < cfg.steps; ++step) {
        int bn = std::min(cfg.batch, n);
        Batch b;
        b.q_t.resize(latents.rows(), bn);
        b.target.resize(latents.rows(), bn);
        b.ts.resize(bn);
        b.ys.resize(bn);
        for (int i = 0; i < bn; ++i) {
            int idx = static_cast<int>(rng.uniform_int(0, n - 1));
            b.ts[i] = static_cast<int>(rng.uniform_int(t_lo, t_hi));
            b.ys[i] = tokens[idx];
            Vec noise;
            b.q_t.col(i) = forward_perturb(latents.col(idx), b.ts[i], sched, rng, &noise);
            b.target.col(i) = noise;
            if (report)
                report->sampled_t.push_back(b.ts[i]);
        }
        double loss = train_step(out, b, opt);
        if (report)
            report->step_loss.push_back(loss);
    }
    return out;
}

} // namespace tg3d::diffusion
