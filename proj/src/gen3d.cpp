#include "tg3d/gen3d.hpp"

#include "tg3d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tg3d::gen3d {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat positional_encoding(const Mat& pts, int freqs) {
    int n = static_cast<int>(pts.cols());
    Mat pe(3 + 6 * freqs, n);
    pe.topRows(3) = pts;
    for (int k = 0; k < freqs; ++k) {
        double f = std::pow(2.0, k) * kPi;
        pe.middleRows(3 + 6 * k, 3) = (pts.array() * f).sin();
        pe.middleRows(3 + 6 * k + 3, 3) = (pts.array() * f).cos();
    }
    return pe;
}

} // namespace

void FieldGrads::add(const FieldGrads& o) {
    dW1 += o.dW1;
    dW2 += o.dW2;
    dW3 += o.dW3;
    db1 += o.db1;
    db2 += o.db2;
    db3 += o.db3;
    dw1 += o.dw1;
    dw2 += o.dw2;
}

void FieldGrads::scale(double s) {
    dW1 *= s;
    dW2 *= s;
    dW3 *= s;
    db1 *= s;
    db2 *= s;
    db3 *= s;
    dw1 *= s;
    dw2 *= s;
}

ParamSet GenGrads::param_set() {
    ParamSet ps = mapping.param_set("gen.map");
    ps.push_back({"gen.field.W1", field.dW1.data(), field.dW1.size()});
    ps.push_back({"gen.field.b1", field.db1.data(), field.db1.size()});
    ps.push_back({"gen.field.W2", field.dW2.data(), field.dW2.size()});
    ps.push_back({"gen.field.b2", field.db2.data(), field.db2.size()});
    ps.push_back({"gen.field.W3", field.dW3.data(), field.dW3.size()});
    ps.push_back({"gen.field.b3", field.db3.data(), field.db3.size()});
    return ps;
}

void GenGrads::add(const GenGrads& o) {
    mapping.add(o.mapping);
    field.add(o.field);
}

void GenGrads::scale(double s) {
    mapping.scale(s);
    field.scale(s);
}

Generator::Generator(const Config& cfg, Rng& rng) : cfg_(cfg) {
    mapping = Mlp({cfg.d_z, cfg.map_hidden, cfg.map_hidden, cfg.d_w}, rng);
    int n1 = pe_dim() + cfg.d_w;
    int h = cfg.field_hidden;
    int n2 = h + cfg.d_w;
    W1 = rng.normal_mat(h, n1, std::sqrt(2.0 / (n1 + h)));
    W2 = rng.normal_mat(h, n2, std::sqrt(2.0 / (n2 + h)));
    W3 = rng.normal_mat(4, h, std::sqrt(2.0 / (h + 4)));
    b1 = Vec::Zero(h);
    b2 = Vec::Zero(h);
    b3 = Vec::Zero(4);
}

Vec Generator::map_latent(const Vec& z) const {
    check(z.allFinite(), "map_latent: non-finite latent");
    return mapping.forward1(z);
}

Generator::FieldEval Generator::field_forward(const WPlus& w, const Mat& pts) const {
    int n = static_cast<int>(pts.cols());
    FieldEval ev;
    Mat pe = positional_encoding(pts, cfg_.posenc_freqs);
    ev.in1.resize(pe.rows() + cfg_.d_w, n);
    ev.in1.topRows(pe.rows()) = pe;
    ev.in1.bottomRows(cfg_.d_w).colwise() = w.w1;
    ev.post1 = (((W1 * ev.in1).colwise() + b1).array().tanh()).matrix();
    ev.in2.resize(ev.post1.rows() + cfg_.d_w, n);
    ev.in2.topRows(ev.post1.rows()) = ev.post1;
    ev.in2.bottomRows(cfg_.d_w).colwise() = w.w2;
    ev.post2 = (((W2 * ev.in2).colwise() + b2).array().tanh()).matrix();
    ev.raw = (W3 * ev.post2).colwise() + b3;
    return ev;
}

void Generator::field_backward(const FieldEval& ev, const Mat& draw, FieldGrads& g) const {
    g.dW3.noalias() += draw * ev.post2.transpose();
    g.db3 += draw.rowwise().sum();
    Mat du2 = ((W3.transpose() * draw).array() * (1.0 - ev.post2.array().square())).matrix();
    g.dW2.noalias() += du2 * ev.in2.transpose();
    g.db2 += du2.rowwise().sum();
    Mat din2 = W2.transpose() * du2;
    g.dw2 += din2.bottomRows(cfg_.d_w).rowwise().sum();
    Mat du1 =
        (din2.topRows(ev.post1.rows()).array() * (1.0 - ev.post1.array().square())).matrix();
    g.dW1.noalias() += du1 * ev.in1.transpose();
    g.db1 += du1.rowwise().sum();
    Mat din1 = W1.transpose() * du1;
    g.dw1 += din1.bottomRows(cfg_.d_w).rowwise().sum();
}

Vec Generator::query_density(const WPlus& w, const Mat& pts) const {
    check(pts.rows() == 3, "query_density: pts must be 3 x N");
    check((pts.array().abs() <= 1.0).all(), "query_density: point outside volume");
    FieldEval ev = field_forward(w, pts);
    Vec sigma(pts.cols());
    for (int i = 0; i < pts.cols(); ++i)
        sigma[i] = softplus(ev.raw(0, i));
    return sigma;
}

Vec Generator::density_with_cache(const WPlus& w, const Mat& pts, FieldEval& ev) const {
    ev = field_forward(w, pts);
    Vec sigma(pts.cols());
    for (int i = 0; i < pts.cols(); ++i)
        sigma[i] = softplus(ev.raw(0, i));
    return sigma;
}

void Generator::density_backward(const FieldEval& ev, const Vec& dsigma, FieldGrads& g) const {
    Mat draw = Mat::Zero(4, ev.raw.cols());
    for (int i = 0; i < ev.raw.cols(); ++i)
        draw(0, i) = dsigma[i] * sigmoid(ev.raw(0, i));
    field_backward(ev, draw, g);
}

Mat Generator::render_rays(const WPlus& w, const CameraPose& cam, const RenderConfig& cfg,
                           const std::vector<int>& rays, RenderCache* cache) const {
    check(cam.in_range(), "render: camera pose outside the valid distribution");
    check(cfg.samples_per_ray >= 2 && cfg.near < cfg.far, "render: bad config");
    int K = static_cast<int>(rays.size());
    int spr = cfg.samples_per_ray;
    long n = static_cast<long>(K) * spr;
    double delta = (cfg.far - cfg.near) / spr;

    Mat pts(3, n);
    std::vector<char> inside(n);
    for (int r = 0; r < K; ++r) {
        int px = rays[r] % cfg.res, py = rays[r] / cfg.res;
        Ray ray = pixel_ray(cam, px, py, cfg.res, cfg.res);
        for (int s = 0; s < spr; ++s) {
            double t = cfg.near + (s + 0.5) * delta;
            Vec3 p = ray.origin + t * ray.dir;
            long idx = static_cast<long>(r) * spr + s;
            pts.col(idx) = p;
            inside[idx] = (p.array().abs() <= 1.0).all() ? 1 : 0;
            if (!inside[idx])
                pts.col(idx).setZero(); // keep the encoding finite; masked out below
        }
    }

    FieldEval ev = field_forward(w, pts);
    Arr sigma(n), alpha(n);
    Mat rgb(3, n);
    for (long i = 0; i < n; ++i) {
        sigma[i] = inside[i] ? softplus(ev.raw(0, i)) : 0.0;
        alpha[i] = 1.0 - std::exp(-sigma[i] * delta);
        for (int c = 0; c < 3; ++c)
            rgb(c, i) = sigmoid(ev.raw(1 + c, i));
    }

    Vec3 bg = scenes::background_color();
    Mat pixels(3, K);
    for (int r = 0; r < K; ++r) {
        double T = 1.0;
        Vec3 acc = Vec3::Zero();
        for (int s = 0; s < spr; ++s) {
            long i = static_cast<long>(r) * spr + s;
            acc += T * alpha[i] * rgb.col(i);
            T *= 1.0 - alpha[i];
        }
        pixels.col(r) = acc + T * bg;
    }

    if (cache) {
        cache->cfg = cfg;
        cache->rays = rays;
        cache->pts = std::move(pts);
        cache->inside = std::move(inside);
        cache->ev = std::move(ev);
        cache->sigma = std::move(sigma);
        cache->alpha = std::move(alpha);
        cache->rgb = std::move(rgb);
        cache->pixels = pixels;
    }
    return pixels;
}

Image Generator::render(const WPlus& w, const CameraPose& cam, const RenderConfig& cfg) const {
    std::vector<int> rays(static_cast<size_t>(cfg.res) * cfg.res);
    std::iota(rays.begin(), rays.end(), 0);
    Mat pixels = render_rays(w, cam, cfg, rays);
    Image img(cfg.res, cfg.res);
    for (size_t r = 0; r < rays.size(); ++r)
        for (int c = 0; c < 3; ++c)
            img.px[static_cast<long>(r) * 3 + c] = std::clamp(pixels(c, static_cast<int>(r)), 0.0, 1.0);
    return img;
}

Image Generator::render_latent(const Vec& z, const CameraPose& cam, const RenderConfig& cfg) const {
    return render(map_wplus(z), cam, cfg);
}

void Generator::render_backward(const RenderCache& cache, const Mat& dpixels,
                                FieldGrads& g) const {
    int K = static_cast<int>(cache.rays.size());
    int spr = cache.cfg.samples_per_ray;
    double delta = (cache.cfg.far - cache.cfg.near) / spr;
    Vec3 bg = scenes::background_color();
    long n = static_cast<long>(K) * spr;
    Mat draw = Mat::Zero(4, n);

    for (int r = 0; r < K; ++r) {
        // suffix S_s = sum_{j>=s} w_j c_j + T_end bg, built back-to-front
        double T_end = 1.0;
        for (int s = 0; s < spr; ++s)
            T_end *= 1.0 - cache.alpha[static_cast<long>(r) * spr + s];
        Vec3 suffix = T_end * bg;
        std::vector<Vec3> suffixes(spr + 1);
        suffixes[spr] = suffix;
        std::vector<double> T(spr + 1);
        T[0] = 1.0;
        for (int s = 0; s < spr; ++s)
            T[s + 1] = T[s] * (1.0 - cache.alpha[static_cast<long>(r) * spr + s]);
        for (int s = spr - 1; s >= 0; --s) {
            long i = static_cast<long>(r) * spr + s;
            suffixes[s] = suffixes[s + 1] + T[s] * cache.alpha[i] * cache.rgb.col(i);
        }
        Vec3 dpix = dpixels.col(r);
        for (int s = 0; s < spr; ++s) {
            long i = static_cast<long>(r) * spr + s;
            if (!cache.inside[i])
                continue;
            double wgt = T[s] * cache.alpha[i];
            // color channels
            for (int c = 0; c < 3; ++c) {
                double dc = dpix[c] * wgt;
                double cv = cache.rgb(c, i);
                draw(1 + c, i) = dc * cv * (1.0 - cv);
            }
            // alpha: d pixel / d alpha_s = T_s c_s - S_{s+1} / (1 - alpha_s)
            double one_m = 1.0 - cache.alpha[i];
            Vec3 dpda = T[s] * cache.rgb.col(i) - suffixes[s + 1] / std::max(one_m, 1e-12);
            double dalpha = dpix.dot(dpda);
            double dsigma = dalpha * delta * one_m; // d alpha / d sigma = delta * exp(-sigma delta)
            draw(0, i) = dsigma * sigmoid(cache.ev.raw(0, i));
        }
    }
    field_backward(cache.ev, draw, g);
}

void Generator::backward_through_mapping(const Vec& z, const Vec& dw, GenGrads& g) const {
    Mlp::Cache cache;
    mapping.forward(Mat(z), &cache);
    mapping.backward(Mat(dw), cache, g.mapping);
}

GenGrads Generator::zero_grads() const {
    GenGrads g;
    g.mapping = mapping.zero_grads();
    g.field.dW1 = Mat::Zero(W1.rows(), W1.cols());
    g.field.dW2 = Mat::Zero(W2.rows(), W2.cols());
    g.field.dW3 = Mat::Zero(W3.rows(), W3.cols());
    g.field.db1 = Vec::Zero(b1.size());
    g.field.db2 = Vec::Zero(b2.size());
    g.field.db3 = Vec::Zero(b3.size());
    g.field.dw1 = Vec::Zero(cfg_.d_w);
    g.field.dw2 = Vec::Zero(cfg_.d_w);
    return g;
}

static ParamSet gen_params(Generator& gen, const std::string& prefix) {
    ParamSet ps = gen.mapping.param_set(prefix + ".map");
    ps.push_back({prefix + ".field.W1", gen.W1.data(), gen.W1.size()});
    ps.push_back({prefix + ".field.b1", gen.b1.data(), gen.b1.size()});
    ps.push_back({prefix + ".field.W2", gen.W2.data(), gen.W2.size()});
    ps.push_back({prefix + ".field.b2", gen.b2.data(), gen.b2.size()});
    ps.push_back({prefix + ".field.W3", gen.W3.data(), gen.W3.size()});
    ps.push_back({prefix + ".field.b3", gen.b3.data(), gen.b3.size()});
    return ps;
}

ParamSet Generator::param_set(const std::string& prefix) { return gen_params(*this, prefix); }
ParamSet Generator::param_set(const std::string& prefix) const {
    return gen_params(const_cast<Generator&>(*this), prefix);
}

Vec record_latent(const scenes::CorpusRecord& rec, int d_z) {
    return scenes::sample_scene(rec.scene_seed).to_latent(d_z, rec.scene_seed);
}

PretrainReport pretrain_source(Generator& gen, const scenes::Corpus& corpus,
                               const PretrainConfig& cfg) {
    check(!corpus.records.empty(), "pretrain_source: empty corpus");
    const auto& recs = corpus.records;
    int n = static_cast<int>(recs.size());
    int n_hold = std::min(std::max(1, static_cast<int>(n * cfg.holdout_frac)), 50);
    int n_train = std::max(1, n - n_hold);
    if (n == 1)
        n_hold = 0; // overfit mode

    Adam opt(cfg.lr);
    Rng rng(derive_seed(cfg.seed, "pretrain"));
    PretrainReport report;

    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    Mlp::Cache map_cache;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double epoch_loss = 0.0;
        int steps = 0;
        for (int off = 0; off < n_train; off += cfg.batch) {
            GenGrads g = gen.zero_grads();
            int bsz = std::min(cfg.batch, n_train - off);
            double batch_loss = 0.0;
            for (int bi = 0; bi < bsz; ++bi) {
                const auto& rec = recs[static_cast<size_t>(order[off + bi])];
                Vec z = record_latent(rec, gen.config().d_z);
                Vec w = gen.mapping.forward(Mat(z), &map_cache).col(0);
                WPlus wp = WPlus::broadcast(w);
                CameraPose cam{rec.yaw, rec.pitch, kCameraRadius};
                Image target = scenes::render_record(rec, cfg.render.res);

                // seeded ray subset per (epoch, record)
                int total = cfg.render.res * cfg.render.res;
                int k = std::min(cfg.rays_per_image, total);
                Rng ray_rng(derive_seed(cfg.seed, "rays",
                                        (static_cast<uint64_t>(epoch) << 32) ^
                                            static_cast<uint64_t>(rec.id)));
                std::vector<int> rays(static_cast<size_t>(k));
                for (int i = 0; i < k; ++i)
                    rays[static_cast<size_t>(i)] = static_cast<int>(ray_rng.uniform_int(0, total - 1));

                Generator::RenderCache cache;
                Mat pred = gen.render_rays(wp, cam, cfg.render, rays, &cache);
                Mat tgt(3, k);
                for (int i = 0; i < k; ++i)
                    for (int c = 0; c < 3; ++c)
                        tgt(c, i) = target.px[static_cast<long>(rays[static_cast<size_t>(i)]) * 3 + c];
                Mat diff = pred - tgt;
                batch_loss += diff.squaredNorm() / (3.0 * k);
                Mat dpix = 2.0 * diff / (3.0 * k * bsz);
                FieldGrads fg = gen.zero_grads().field;
                gen.render_backward(cache, dpix, fg);
                g.field.add(fg);
                gen.mapping.backward(Mat(fg.dw1 + fg.dw2), map_cache, g.mapping);
            }
            batch_loss /= bsz;
            check(std::isfinite(batch_loss), "pretrain_source: loss diverged (NaN/inf)");
            opt.step(gen.param_set(), g.param_set());
            epoch_loss += batch_loss;
            ++steps;
        }
        report.epoch_loss.push_back(epoch_loss / std::max(1, steps));
        if (cfg.verbose)
            std::fprintf(stderr, "pretrain epoch %d loss %.6f\n", epoch,
                         report.epoch_loss.back());
    }

    // held-out PSNR on full renders
    double psnr_acc = 0.0;
    int count = 0;
    int hold_begin = n - n_hold;
    if (n_hold == 0)
        hold_begin = 0, n_hold = n;
    for (int i = hold_begin; i < hold_begin + n_hold; ++i) {
        const auto& rec = recs[static_cast<size_t>(i)];
        Vec z = record_latent(rec, gen.config().d_z);
        CameraPose cam{rec.yaw, rec.pitch, kCameraRadius};
        Image pred = gen.render(gen.map_wplus(z), cam, cfg.render);
        Image tgt = scenes::render_record(rec, cfg.render.res);
        psnr_acc += psnr(pred, tgt);
        ++count;
    }
    report.holdout_psnr = psnr_acc / std::max(1, count);
    return report;
}

} // namespace tg3d::gen3d
