#include "tg3d/adapt.hpp"

#include "tg3d/checkpoint.hpp"
#include "tg3d/optim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace tg3d::adapt {

namespace fs = std::filesystem;

namespace {

double softplus(double u) { return u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }
double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }
double sign(double u) { return (u > 0) - (u < 0); }

std::vector<int> all_rays(int res) {
    std::vector<int> r(static_cast<size_t>(res) * res);
    std::iota(r.begin(), r.end(), 0);
    return r;
}

Image image_from_pixels(const Mat& pixels, int res) {
    Image img(res, res);
    img.px = Eigen::Map<const Vec>(pixels.data(), pixels.size());
    return img;
}

Image rot90cw(const Image& x) {
    Image out(x.w, x.h);
    for (int y = 0; y < out.h; ++y)
        for (int xx = 0; xx < out.w; ++xx)
            for (int c = 0; c < 3; ++c)
                out.at(y, xx, c) = x.at(x.h - 1 - xx, y, c);
    return out;
}

Image translate(const Image& x, int dx, int dy) {
    Image out(x.h, x.w);
    for (int y = 0; y < x.h; ++y) {
        int sy = y - dy;
        if (sy < 0 || sy >= x.h)
            continue;
        for (int xx = 0; xx < x.w; ++xx) {
            int sx = xx - dx;
            if (sx < 0 || sx >= x.w)
                continue;
            for (int c = 0; c < 3; ++c)
                out.at(y, xx, c) = x.at(sy, sx, c);
        }
    }
    return out;
}

} // namespace

double softplus_f(double u) { return -softplus(-u); }

Discriminator::Discriminator(const Config& cfg, Rng& rng) : cfg_(cfg) {
    net = Mlp({cfg.res * cfg.res * 3 + 2, cfg.hidden, cfg.hidden, 1}, rng);
}

Vec Discriminator::input_vec(const Image& x, const CameraPose& c) const {
    check(x.h == cfg_.res && x.w == cfg_.res, "discriminator: resolution mismatch");
    Vec in(input_dim());
    in.head(image_dim()) = x.px.array() - 0.5;
    in[image_dim()] = c.yaw_deg / kYawMaxDeg;
    in[image_dim() + 1] = c.pitch_deg / kPitchMaxDeg;
    return in;
}

double Discriminator::logit(const Image& x, const CameraPose& c) const {
    double u = net.forward1(input_vec(x, c))[0];
    check(std::isfinite(u), "discriminator: non-finite logit");
    return u;
}

ParamSet Discriminator::param_set(const std::string& prefix) { return net.param_set(prefix); }
ParamSet Discriminator::param_set(const std::string& prefix) const {
    return net.param_set(prefix);
}

double r1_penalty(const Discriminator& D, const Image& x, const CameraPose& c, MlpGrads* g,
                  double gscale) {
    Vec in = D.input_vec(x, c);
    Vec grad_in = D.net.input_gradient(in);
    int ni = D.image_dim();
    double r1 = grad_in.head(ni).squaredNorm();
    if (!g)
        return r1;

    // parameter gradient of ||grad_x D||^2 by forward-over-reverse: push the
    // tangent u = grad_x D through the net, so the tangent output equals the
    // penalty, then reverse-differentiate that scalar
    const auto& W = D.net.W;
    const auto& b = D.net.b;
    int L = static_cast<int>(W.size());
    Vec u = Vec::Zero(in.size());
    u.head(ni) = grad_in.head(ni);

    std::vector<Vec> a_in(L), adot_in(L), a(L), zdot(L);
    Vec cur = in, curdot = u;
    for (int l = 0; l + 1 < L; ++l) {
        a_in[l] = cur;
        adot_in[l] = curdot;
        Vec z = W[l] * cur + b[l];
        zdot[l] = W[l] * curdot;
        a[l] = z.array().tanh().matrix();
        curdot = ((1.0 - a[l].array().square()) * zdot[l].array()).matrix();
        cur = a[l];
    }
    a_in[L - 1] = cur;
    adot_in[L - 1] = curdot;

    double scale = 2.0 * gscale; // d||v||^2 = 2 v . dv
    g->dW[L - 1].row(0) += scale * adot_in[L - 1].transpose();
    Vec bar_dot = W[L - 1].row(0).transpose();
    Vec bar = Vec::Zero(bar_dot.size());
    for (int l = L - 2; l >= 0; --l) {
        Arr one_m = 1.0 - a[l].array().square();
        Vec zdot_bar = (one_m * bar_dot.array()).matrix();
        bar += (-2.0 * a[l].array() * zdot[l].array() * bar_dot.array()).matrix();
        Vec zbar = (one_m * bar.array()).matrix();
        g->dW[l].noalias() += scale * (zdot_bar * adot_in[l].transpose());
        g->dW[l].noalias() += scale * (zbar * a_in[l].transpose());
        g->db[l] += scale * zbar;
        if (l > 0) {
            bar_dot = W[l].transpose() * zdot_bar;
            bar = W[l].transpose() * zbar;
        }
    }
    return r1;
}

AugmentDraw AugmentPipeline::sample(Rng& rng) const {
    AugmentDraw d;
    if (rng.uniform() < p)
        d.flip = true;
    if (rng.uniform() < p)
        d.rot = static_cast<int>(rng.uniform_int(1, 3));
    if (rng.uniform() < p) {
        d.dx = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
        d.dy = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
    }
    if (rng.uniform() < p)
        d.bright = rng.uniform(-max_bright, max_bright);
    return d;
}

Image AugmentPipeline::apply(const Image& x, const AugmentDraw& d) {
    Image out = x;
    if (d.flip)
        out = out.flipped_horizontal();
    for (int k = 0; k < d.rot; ++k)
        out = rot90cw(out);
    if (d.dx != 0 || d.dy != 0)
        out = translate(out, d.dx, d.dy);
    if (d.bright != 0.0)
        out.px.array() += d.bright;
    return out;
}

Image AugmentPipeline::backward(const Image& dy, const AugmentDraw& d) {
    Image g = dy; // brightness shift has unit derivative
    if (d.dx != 0 || d.dy != 0)
        g = translate(g, -d.dx, -d.dy);
    for (int k = 0; k < (4 - d.rot) % 4; ++k)
        g = rot90cw(g);
    if (d.flip)
        g = g.flipped_horizontal();
    return g;
}

Image gaussian_blur(const Image& x, double sigma) {
    if (sigma < 1e-6)
        return x;
    int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    Vec k(2 * r + 1);
    for (int i = -r; i <= r; ++i)
        k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    k /= k.sum();

    Image tmp(x.h, x.w), out(x.h, x.w);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int i = -r; i <= r; ++i) {
                    int sx = xx + i;
                    if (sx >= 0 && sx < x.w)
                        s += k[i + r] * x.at(y, sx, c);
                }
                tmp.at(y, xx, c) = s;
            }
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int i = -r; i <= r; ++i) {
                    int sy = y + i;
                    if (sy >= 0 && sy < x.h)
                        s += k[i + r] * tmp.at(sy, xx, c);
                }
                out.at(y, xx, c) = s;
            }
    return out;
}

double ada_loss_G(const gen3d::Generator& G, const Discriminator& D, const AugmentPipeline& A,
                  const FakeBatch& batch, const gen3d::RenderConfig& rc, double blur_sigma,
                  Rng& aug_rng, gen3d::GenGrads* g) {
    int n = static_cast<int>(batch.size());
    check(n >= 1, "ada_loss_G: empty batch");
    check(rc.res == D.config().res, "ada_loss_G: resolution mismatch");
    std::vector<int> rays = all_rays(rc.res);
    MlpGrads scratch = D.net.zero_grads(); // discriminator stays frozen here
    double total = 0;
    for (int i = 0; i < n; ++i) {
        gen3d::WPlus wp = G.map_wplus(batch.zs[i]);
        gen3d::Generator::RenderCache cache;
        Mat pixels = G.render_rays(wp, batch.cams[i], rc, rays, g ? &cache : nullptr);
        Image img = image_from_pixels(pixels, rc.res);
        AugmentDraw d = A.sample(aug_rng);
        Image din = gaussian_blur(AugmentPipeline::apply(img, d), blur_sigma);
        Mlp::Cache mc;
        double u = D.net.forward(Mat(D.input_vec(din, batch.cams[i])), &mc)(0, 0);
        total += softplus(-u) / n;
        if (g) {
            Mat dy(1, 1);
            dy(0, 0) = -sigmoid(-u) / n;
            Mat dx = D.net.backward(dy, mc, scratch);
            Image dimg(rc.res, rc.res);
            dimg.px = dx.col(0).head(D.image_dim());
            dimg = gaussian_blur(dimg, blur_sigma); // self-adjoint
            dimg = AugmentPipeline::backward(dimg, d);
            Mat dpixels = Eigen::Map<const Mat>(dimg.px.data(), 3, rc.res * rc.res);
            gen3d::FieldGrads fg = G.zero_grads().field;
            G.render_backward(cache, dpixels, fg);
            g->field.add(fg);
            G.backward_through_mapping(batch.zs[i], fg.dw1 + fg.dw2, *g);
        }
    }
    return total;
}

double ada_loss_D(const gen3d::Generator& G, const Discriminator& D, const AugmentPipeline& A,
                  const FakeBatch& fake, const std::vector<Image>& real_x,
                  const std::vector<CameraPose>& real_c, double lambda_r1,
                  const gen3d::RenderConfig& rc, double blur_sigma, Rng& aug_rng, MlpGrads* g,
                  double* r1_out, std::vector<double>* real_logits) {
    int n = static_cast<int>(fake.size());
    int m = static_cast<int>(real_x.size());
    check(n >= 1 && m >= 1, "ada_loss_D: empty batch");
    check(real_x.size() == real_c.size(), "ada_loss_D: real batch mismatch");
    std::vector<int> rays = all_rays(rc.res);
    if (real_logits)
        real_logits->clear();

    double total = 0;
    for (int i = 0; i < n; ++i) {
        Mat pixels = G.render_rays(G.map_wplus(fake.zs[i]), fake.cams[i], rc, rays);
        Image img = image_from_pixels(pixels, rc.res);
        AugmentDraw d = A.sample(aug_rng);
        Image din = gaussian_blur(AugmentPipeline::apply(img, d), blur_sigma);
        Mlp::Cache mc;
        double u = D.net.forward(Mat(D.input_vec(din, fake.cams[i])), &mc)(0, 0);
        total += softplus(u) / n;
        if (g) {
            Mat dy(1, 1);
            dy(0, 0) = sigmoid(u) / n;
            D.net.backward(dy, mc, *g);
        }
    }
    double r1_sum = 0;
    for (int j = 0; j < m; ++j) {
        AugmentDraw d = A.sample(aug_rng);
        Image din = gaussian_blur(AugmentPipeline::apply(real_x[j], d), blur_sigma);
        Mlp::Cache mc;
        double u = D.net.forward(Mat(D.input_vec(din, real_c[j])), &mc)(0, 0);
        if (real_logits)
            real_logits->push_back(u);
        total += softplus(-u) / m;
        if (g) {
            Mat dy(1, 1);
            dy(0, 0) = -sigmoid(-u) / m;
            D.net.backward(dy, mc, *g);
        }
        r1_sum += r1_penalty(D, din, real_c[j], g, lambda_r1 / m) / m;
    }
    if (r1_out)
        *r1_out = r1_sum;
    return total + lambda_r1 * r1_sum;
}

double density_regularization(const gen3d::Generator& G, const gen3d::WPlus& w, double dv_sigma,
                              int n_points, Rng& rng, gen3d::FieldGrads* g, double gscale) {
    check(n_points >= 1, "density_regularization: need at least one point");
    check(dv_sigma >= 0, "density_regularization: negative sigma");
    // margin keeps perturbed points inside the unit cube with probability
    // well above 0.999 at the default sigma
    Mat pts(3, n_points);
    for (int i = 0; i < n_points; ++i)
        for (int d = 0; d < 3; ++d)
            pts(d, i) = rng.uniform(-0.95, 0.95);
    Mat pts2 = pts;
    for (int i = 0; i < n_points; ++i)
        for (int d = 0; d < 3; ++d)
            pts2(d, i) += rng.normal(0.0, dv_sigma);

    gen3d::Generator::FieldEval e1, e2;
    Vec s1 = G.density_with_cache(w, pts, e1);
    Vec s2 = G.density_with_cache(w, pts2, e2);
    double loss = (s1 - s2).cwiseAbs().mean();
    if (g) {
        Vec ds1(n_points);
        for (int i = 0; i < n_points; ++i)
            ds1[i] = sign(s1[i] - s2[i]) * gscale / n_points;
        G.density_backward(e1, ds1, *g);
        G.density_backward(e2, -ds1, *g);
    }
    return loss;
}

double update_p_controller(PControllerState& st, const std::vector<double>& real_logits,
                           int n_images) {
    check(!real_logits.empty(), "p controller: empty window");
    check(st.traverse_images > 0, "p controller: bad traversal scale");
    double r_t = 0;
    for (double u : real_logits)
        r_t += sign(u);
    r_t /= real_logits.size();
    st.p = std::clamp(st.p + sign(r_t - st.target) * n_images / st.traverse_images, 0.0, 1.0);
    return st.p;
}

AdaptResult adapt_adversarial(const gen3d::Generator& G_source,
                              const pipeline::TargetDataset& data, const AdaptConfig& cfg) {
    std::vector<int> usable;
    for (size_t i = 0; i < data.records.size(); ++i)
        if (!data.records[i].failed)
            usable.push_back(static_cast<int>(i));
    check(!usable.empty(), "adapt_adversarial: empty dataset");
    check(cfg.batch >= 2, "adapt_adversarial: batch must be at least 2");
    check(cfg.render.res == data.res, "adapt_adversarial: resolution mismatch");

    Rng rng(derive_seed(cfg.seed, "adapt"));
    AdaptResult res;
    res.G = G_source;
    Discriminator::Config dcfg;
    dcfg.res = data.res;
    res.D = Discriminator(dcfg, rng);

    Adam opt_g(cfg.lr), opt_d(cfg.lr);
    AugmentPipeline A;
    PControllerState pc;
    pc.target = cfg.p_target;
    pc.traverse_images = cfg.p_traverse_images;

    int n = static_cast<int>(usable.size());
    int d_z = res.G.config().d_z;
    long total_images = static_cast<long>(cfg.epochs) * n;
    long seen = 0;
    double blur_span = cfg.blur_frac * total_images;

    std::ofstream logf;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        logf.open(fs::path(cfg.out_dir) / "train_log.jsonl");
    }

    gen3d::Generator last_G = res.G;
    Discriminator last_D = res.D;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs && !res.aborted; ++epoch) {
        std::vector<int> order = usable;
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (int start = 0; start < n; start += cfg.batch) {
            int bn = std::min(cfg.batch, n - start);
            double blur_sigma =
                blur_span > 0 ? cfg.blur_sigma0 * std::max(0.0, 1.0 - seen / blur_span) : 0.0;

            auto draw_fakes = [&](int count) {
                FakeBatch fb;
                for (int i = 0; i < count; ++i) {
                    fb.zs.push_back(rng.normal_vec(d_z));
                    fb.cams.push_back(CameraPose::sample(rng));
                }
                return fb;
            };

            // generator step: adversarial term plus density smoothness
            FakeBatch fb = draw_fakes(bn);
            Rng aug_g(derive_seed(cfg.seed, "aug-g", step));
            gen3d::GenGrads gg = res.G.zero_grads();
            double loss_g = ada_loss_G(res.G, res.D, A, fb, cfg.render, blur_sigma, aug_g, &gg);
            double den = 0;
            for (int i = 0; i < bn; ++i) {
                gen3d::FieldGrads fg = res.G.zero_grads().field;
                den += density_regularization(res.G, res.G.map_wplus(fb.zs[i]), cfg.dv_sigma,
                                              cfg.den_points, rng, &fg, cfg.lambda_den / bn) /
                       bn;
                gg.field.add(fg);
                res.G.backward_through_mapping(fb.zs[i], fg.dw1 + fg.dw2, gg);
            }
            double loss_g_total = loss_g + cfg.lambda_den * den;
            if (!std::isfinite(loss_g_total)) {
                res.G = last_G;
                res.D = last_D;
                res.aborted = true;
                break;
            }
            opt_g.step(res.G.param_set(), gg.param_set());
            ++res.g_steps;

            // discriminator step on fresh fakes and the next real chunk
            FakeBatch fb2 = draw_fakes(bn);
            std::vector<Image> real_x;
            std::vector<CameraPose> real_c;
            for (int i = 0; i < bn; ++i) {
                int idx = order[start + i];
                real_x.push_back(data.trg[idx]);
                real_c.push_back(data.records[idx].cam);
            }
            Rng aug_d(derive_seed(cfg.seed, "aug-d", step));
            MlpGrads dg = res.D.net.zero_grads();
            double r1 = 0;
            std::vector<double> logits;
            double loss_d = ada_loss_D(res.G, res.D, A, fb2, real_x, real_c, cfg.lambda_r1,
                                       cfg.render, blur_sigma, aug_d, &dg, &r1, &logits);
            if (!std::isfinite(loss_d)) {
                res.G = last_G;
                res.D = last_D;
                res.aborted = true;
                break;
            }
            opt_d.step(res.D.param_set(), dg.param_set("disc"));
            ++res.d_steps;
            seen += bn;

            double r_t = 0;
            for (double u : logits)
                r_t += sign(u);
            r_t /= logits.size();
            if (cfg.augment)
                A.p = update_p_controller(pc, logits, bn);

            AdaptLogEntry e{step, loss_g_total, loss_d, r1, den, A.p, r_t};
            res.log.push_back(e);
            if (logf.is_open()) {
                nlohmann::ordered_json j{{"step", e.step},       {"loss_G", e.loss_G},
                                         {"loss_D", e.loss_D},   {"r1", e.r1},
                                         {"den", e.den},         {"p", e.p},
                                         {"r_t", e.r_t}};
                logf << j.dump() << "\n";
            }
            if (cfg.verbose)
                std::fprintf(stderr, "adapt step %d loss_G %.4f loss_D %.4f p %.3f\n", step,
                             loss_g_total, loss_d, A.p);
            ++step;
        }
        if (!res.aborted) {
            last_G = res.G;
            last_D = res.D;
            if (!cfg.out_dir.empty()) {
                char name[64];
                std::snprintf(name, sizeof(name), "gen_epoch_%03d.ckpt", epoch);
                save_checkpoint((fs::path(cfg.out_dir) / name).string(), res.G.param_set());
            }
        }
    }
    return res;
}

namespace {

// shared core of the two text-directional baselines
gen3d::Generator direct_adapt(const gen3d::Generator& G_source, const clipstub::ClipModel& clip,
                              scenes::Style y_src, scenes::Style y_tar, const DirectConfig& cfg,
                              double lambda, std::vector<double>* loss_trace,
                              std::vector<double>* indomain_trace) {
    check(cfg.steps >= 0 && cfg.batch >= 1, "direct adapt: bad config");
    check(cfg.render.res == clip.config().res, "direct adapt: resolution mismatch");
    gen3d::Generator G = G_source;
    Adam opt(cfg.lr);
    Rng rng(derive_seed(cfg.seed, "direct"));
    std::vector<int> rays = all_rays(cfg.render.res);
    int d_z = G.config().d_z;

    for (int s = 0; s < cfg.steps; ++s) {
        std::vector<Vec> zs;
        std::vector<CameraPose> cams;
        std::vector<Image> gens, srcs;
        std::vector<gen3d::Generator::RenderCache> caches(cfg.batch);
        for (int i = 0; i < cfg.batch; ++i) {
            zs.push_back(rng.normal_vec(d_z));
            cams.push_back(CameraPose::sample(rng));
            srcs.push_back(G_source.render(G_source.map_wplus(zs[i]), cams[i], cfg.render));
            Mat pixels = G.render_rays(G.map_wplus(zs[i]), cams[i], cfg.render, rays, &caches[i]);
            gens.push_back(image_from_pixels(pixels, cfg.render.res));
        }

        double total = 0;
        std::vector<Vec> dpix(cfg.batch, Vec::Zero(gens[0].size()));
        for (int i = 0; i < cfg.batch; ++i) {
            Vec dp;
            total += clipstub::directional_loss(clip, gens[i], srcs[i], y_tar, y_src, &dp) /
                     cfg.batch;
            dpix[i] += dp / cfg.batch;
        }
        if (lambda > 0) {
            std::vector<Vec> dind;
            double lind = clipstub::indomain_angle_loss(clip, gens, srcs, &dind);
            total += lambda * lind;
            for (int i = 0; i < cfg.batch; ++i)
                dpix[i] += lambda * dind[i];
            if (indomain_trace)
                indomain_trace->push_back(lind);
        }
        check(std::isfinite(total), "direct adapt: non-finite loss");

        gen3d::GenGrads gg = G.zero_grads();
        for (int i = 0; i < cfg.batch; ++i) {
            check(dpix[i].allFinite(), "direct adapt: non-finite gradient");
            Mat dmat = Eigen::Map<const Mat>(dpix[i].data(), 3, cfg.render.res * cfg.render.res);
            gen3d::FieldGrads fg = G.zero_grads().field;
            G.render_backward(caches[i], dmat, fg);
            gg.field.add(fg);
            G.backward_through_mapping(zs[i], fg.dw1 + fg.dw2, gg);
        }
        opt.step(G.param_set(), gg.param_set());
        if (loss_trace)
            loss_trace->push_back(total);
        if (cfg.verbose)
            std::fprintf(stderr, "direct step %d loss %.4f\n", s, total);
    }
    return G;
}

} // namespace

gen3d::Generator adapt_nada_star(const gen3d::Generator& G_source,
                                 const clipstub::ClipModel& clip, scenes::Style y_src,
                                 scenes::Style y_tar, const DirectConfig& cfg,
                                 std::vector<double>* loss_trace) {
    return direct_adapt(G_source, clip, y_src, y_tar, cfg, 0.0, loss_trace, nullptr);
}

gen3d::Generator adapt_hyper_star(const gen3d::Generator& G_source,
                                  const clipstub::ClipModel& clip, scenes::Style y_src,
                                  scenes::Style y_tar, const DirectConfig& cfg,
                                  std::vector<double>* loss_trace,
                                  std::vector<double>* indomain_trace) {
    return direct_adapt(G_source, clip, y_src, y_tar, cfg, cfg.lambda_indomain, loss_trace,
                        indomain_trace);
}

gen3d::Generator adapt_nonadversarial_image(const gen3d::Generator& G_source,
                                            const clipstub::ClipModel& clip,
                                            const pipeline::TargetDataset& data,
                                            const DirectConfig& cfg,
                                            std::vector<double>* loss_trace) {
    check(cfg.render.res == clip.config().res, "image adapt: resolution mismatch");
    check(cfg.render.res == data.res, "image adapt: dataset resolution mismatch");
    std::vector<int> usable;
    for (size_t i = 0; i < data.records.size(); ++i)
        if (!data.records[i].failed)
            usable.push_back(static_cast<int>(i));
    check(!usable.empty(), "image adapt: empty dataset");

    std::vector<Vec> e_src(usable.size()), dT(usable.size());
    for (size_t k = 0; k < usable.size(); ++k) {
        e_src[k] = clip.embed_image(data.src[usable[k]]);
        dT[k] = clip.embed_image(data.trg[usable[k]]) - e_src[k];
    }

    gen3d::Generator G = G_source;
    Adam opt(cfg.lr);
    Rng rng(derive_seed(cfg.seed, "image-direct"));
    std::vector<int> rays = all_rays(cfg.render.res);
    int d_z = G.config().d_z;
    MlpGrads clip_scratch = clip.tower.zero_grads(); // encoder stays frozen

    for (int s = 0; s < cfg.steps; ++s) {
        double total = 0;
        gen3d::GenGrads gg = G.zero_grads();
        for (int i = 0; i < cfg.batch; ++i) {
            int k = static_cast<int>(rng.uniform_int(0, static_cast<int>(usable.size()) - 1));
            const pipeline::TargetRecord& rec = data.records[usable[k]];
            Vec z = pipeline::latent_from_seed(rec.z_seed, d_z);
            gen3d::Generator::RenderCache cache;
            Mat pixels = G.render_rays(G.map_wplus(z), rec.cam, cfg.render, rays, &cache);
            Image gen = image_from_pixels(pixels, cfg.render.res);

            Mlp::Cache mc;
            Mat raw;
            Mat e_gen = clip.embed_images(Mat(gen.px), &mc, &raw);
            Vec a = e_gen.col(0) - e_src[k];
            const Vec& b = dT[k];
            double na = a.norm(), nb = b.norm();
            if (na < 1e-12 || nb < 1e-12) {
                total += 1.0 / cfg.batch; // degenerate direction: flat loss
                continue;
            }
            double cosv = a.dot(b) / (na * nb);
            total += (1.0 - cosv) / cfg.batch;
            Vec da = (-(b / (na * nb)) + cosv * a / (na * na)) / cfg.batch;
            Mat dpix = clip.embed_backward(Mat(da), raw, mc, clip_scratch);
            Mat dmat = Eigen::Map<const Mat>(dpix.col(0).data(), 3,
                                             cfg.render.res * cfg.render.res);
            gen3d::FieldGrads fg = G.zero_grads().field;
            G.render_backward(cache, dmat, fg);
            gg.field.add(fg);
            G.backward_through_mapping(z, fg.dw1 + fg.dw2, gg);
        }
        check(std::isfinite(total), "image adapt: non-finite loss");
        opt.step(G.param_set(), gg.param_set());
        if (loss_trace)
            loss_trace->push_back(total);
        if (cfg.verbose)
            std::fprintf(stderr, "image-direct step %d loss %.4f\n", s, total);
    }
    return G;
}

} // namespace tg3d::adapt
