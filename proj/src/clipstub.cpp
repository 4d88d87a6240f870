#include "tg3d/clipstub.hpp"

#include "tg3d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

namespace tg3d::clipstub {

namespace {

Vec normalize(const Vec& u) {
    double n = u.norm();
    check(n > 1e-12, "embedding collapsed to zero");
    return u / n;
}

// d(u/||u||) adjoint: du = (dv - v (v . dv)) / ||u||
Vec normalize_backward(const Vec& dv, const Vec& u) {
    double n = u.norm();
    Vec v = u / n;
    return (dv - v * v.dot(dv)) / n;
}

} // namespace

ClipModel::ClipModel(const Config& cfg, Rng& rng) : cfg_(cfg) {
    tower = Mlp({cfg.res * cfg.res * 3, cfg.hidden, cfg.hidden, cfg.d_e}, rng);
    text_raw = rng.normal_mat(cfg.d_e, scenes::kVocabSize, 1.0);
}

Mat ClipModel::embed_images(const Mat& pixels, Mlp::Cache* cache, Mat* raw) const {
    Mat u = tower.forward(pixels, cache);
    Mat v(u.rows(), u.cols());
    for (int i = 0; i < u.cols(); ++i)
        v.col(i) = normalize(u.col(i));
    if (raw)
        *raw = std::move(u);
    return v;
}

Vec ClipModel::embed_image(const Image& x) const {
    check(x.h == cfg_.res && x.w == cfg_.res, "embed_image: resolution mismatch");
    return embed_images(x.px);
}

Vec ClipModel::embed_text(scenes::Style y) const {
    return normalize(text_raw.col(static_cast<int>(y)));
}

Mat ClipModel::text_embeddings() const {
    Mat t(text_raw.rows(), text_raw.cols());
    for (int c = 0; c < text_raw.cols(); ++c)
        t.col(c) = normalize(text_raw.col(c));
    return t;
}

Mat ClipModel::embed_backward(const Mat& dv, const Mat& raw, const Mlp::Cache& cache,
                              MlpGrads& g) const {
    Mat du(dv.rows(), dv.cols());
    for (int i = 0; i < dv.cols(); ++i)
        du.col(i) = normalize_backward(dv.col(i), raw.col(i));
    return tower.backward(du, cache, g);
}

ParamSet ClipModel::param_set(const std::string& prefix) {
    ParamSet ps = tower.param_set(prefix + ".tower");
    ps.push_back({prefix + ".text", text_raw.data(), text_raw.size()});
    return ps;
}

ParamSet ClipModel::param_set(const std::string& prefix) const {
    return const_cast<ClipModel*>(this)->param_set(prefix);
}

double clip_distance(const ClipModel& model, const Image& x, scenes::Style y) {
    return 1.0 - model.embed_image(x).dot(model.embed_text(y));
}

double directional_loss(const ClipModel& model, const Image& x_gen, const Image& x_src,
                        scenes::Style y_tar, scenes::Style y_src, Vec* dpix_gen) {
    Mlp::Cache cache;
    Mat raw;
    Vec e_gen = model.embed_images(x_gen.px, dpix_gen ? &cache : nullptr, &raw);
    Vec e_src = model.embed_image(x_src);
    Vec dI = e_gen - e_src;
    Vec dT = model.embed_text(y_tar) - model.embed_text(y_src);

    double nI = dI.norm(), nT = dT.norm();
    if (nI < 1e-9 || nT < 1e-9) {
        std::fprintf(stderr, "directional_loss: zero-norm direction, returning neutral loss\n");
        if (dpix_gen)
            *dpix_gen = Vec::Zero(x_gen.px.size());
        return 1.0;
    }
    double cosv = dI.dot(dT) / (nI * nT);
    if (dpix_gen) {
        // d(1 - cos)/d(dI) = -(dT/(nI nT) - cos * dI/nI^2)
        Vec ddI = -(dT / (nI * nT) - cosv * dI / (nI * nI));
        MlpGrads g = model.tower.zero_grads();
        *dpix_gen = model.embed_backward(ddI, raw, cache, g);
    }
    return 1.0 - cosv;
}

double indomain_angle_loss(const ClipModel& model, const std::vector<Image>& gen_batch,
                           const std::vector<Image>& src_batch, std::vector<Vec>* dpix_gen) {
    size_t n = gen_batch.size();
    check(n == src_batch.size() && n >= 2, "indomain_angle_loss: need equal batches of size >= 2");

    int d_pix = static_cast<int>(gen_batch[0].px.size());
    Mat gen_pix(d_pix, n), src_pix(d_pix, n);
    for (size_t i = 0; i < n; ++i) {
        gen_pix.col(i) = gen_batch[i].px;
        src_pix.col(i) = src_batch[i].px;
    }
    Mlp::Cache cache;
    Mat raw;
    Mat eg = model.embed_images(gen_pix, dpix_gen ? &cache : nullptr, &raw);
    Mat es = model.embed_images(src_pix);

    Mat gg = eg.transpose() * eg;
    Mat ss = es.transpose() * es;
    double loss = 0.0;
    Mat dgg = Mat::Zero(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            if (i == j)
                continue;
            double diff = gg(i, j) - ss(i, j);
            loss += diff * diff;
            dgg(i, j) = 2.0 * diff;
        }
    if (dpix_gen) {
        // d loss / d eg = eg * (dgg + dgg^T)
        Mat dv = eg * (dgg + dgg.transpose());
        MlpGrads g = model.tower.zero_grads();
        Mat dpix = model.embed_backward(dv, raw, cache, g);
        dpix_gen->resize(n);
        for (size_t i = 0; i < n; ++i)
            (*dpix_gen)[i] = dpix.col(i);
    }
    return loss;
}

double retrieval_accuracy(const ClipModel& model, const Mat& pixels,
                          const std::vector<scenes::Style>& labels) {
    std::set<int> present;
    for (auto y : labels)
        present.insert(static_cast<int>(y));
    Mat v = model.embed_images(pixels);
    Mat t = model.text_embeddings();
    int hits = 0;
    for (int i = 0; i < v.cols(); ++i) {
        int best = -1;
        double best_sim = -2.0;
        for (int c : present) {
            double sim = v.col(i).dot(t.col(c));
            if (sim > best_sim) {
                best_sim = sim;
                best = c;
            }
        }
        if (best == static_cast<int>(labels[i]))
            ++hits;
    }
    return double(hits) / v.cols();
}

ClipModel train_contrastive(const scenes::Corpus& corpus, const TrainClipConfig& cfg,
                            TrainClipReport* report) {
    int n = static_cast<int>(corpus.records.size());
    check(n >= 4, "train_contrastive: corpus too small");
    std::set<int> labels;
    for (const auto& r : corpus.records)
        labels.insert(r.style_token);
    check(labels.size() >= 2, "train_contrastive: need at least two distinct labels");

    int res = corpus.spec.res;
    Mat pixels(res * res * 3, n);
    std::vector<scenes::Style> tok(n);
    for (int i = 0; i < n; ++i) {
        pixels.col(i) = scenes::render_record(corpus.records[i], res).px;
        tok[i] = static_cast<scenes::Style>(corpus.records[i].style_token);
    }

    int n_hold = std::max(1, static_cast<int>(std::lround(n * cfg.holdout_frac)));
    int n_train = n - n_hold;
    check(n_train >= 2, "train_contrastive: holdout leaves no training data");

    Rng rng(derive_seed(cfg.seed, "train-clip"));
    ClipModel::Config mc;
    mc.res = res;
    ClipModel model(mc, rng);
    Adam opt(cfg.lr);

    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    if (report)
        report->epoch_loss.clear();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        double epoch_loss = 0.0;
        int steps = 0;
        for (int start = 0; start + 1 < n_train; start += cfg.batch) {
            int bn = std::min(cfg.batch, n_train - start);
            Mat bp(pixels.rows(), bn);
            std::vector<int> by(bn);
            for (int i = 0; i < bn; ++i) {
                bp.col(i) = pixels.col(order[start + i]);
                by[i] = static_cast<int>(tok[order[start + i]]);
            }
            Mlp::Cache cache;
            Mat raw;
            Mat v = model.embed_images(bp, &cache, &raw);
            Mat t_all = model.text_embeddings();
            Mat t(t_all.rows(), bn);
            for (int i = 0; i < bn; ++i)
                t.col(i) = t_all.col(by[i]);

            // symmetric InfoNCE over in-batch pairs, diagonal positives
            Mat logits = (v.transpose() * t) / cfg.temperature; // rows: images
            double loss = 0.0;
            Mat dlog = Mat::Zero(bn, bn);
            for (int axis = 0; axis < 2; ++axis) {
                for (int i = 0; i < bn; ++i) {
                    Vec row = axis == 0 ? Vec(logits.row(i)) : Vec(logits.col(i));
                    double mx = row.maxCoeff();
                    Vec ex = (row.array() - mx).exp();
                    double Z = ex.sum();
                    loss += 0.5 * (std::log(Z) - (row[i] - mx));
                    for (int j = 0; j < bn; ++j) {
                        double p = ex[j] / Z;
                        double grad = 0.5 * (p - (i == j ? 1.0 : 0.0));
                        if (axis == 0)
                            dlog(i, j) += grad;
                        else
                            dlog(j, i) += grad;
                    }
                }
            }
            loss /= bn;
            check(std::isfinite(loss), "train_contrastive: non-finite loss");
            dlog /= bn * cfg.temperature;

            Mat dv = t * dlog.transpose();
            Mat dt = v * dlog;
            MlpGrads g = model.tower.zero_grads();
            model.embed_backward(dv, raw, cache, g);
            Mat dtext = Mat::Zero(model.text_raw.rows(), model.text_raw.cols());
            for (int i = 0; i < bn; ++i)
                dtext.col(by[i]) +=
                    normalize_backward(dt.col(i), model.text_raw.col(by[i]));

            ParamSet params = model.param_set();
            ParamSet grads = g.param_set("clip.tower");
            grads.push_back({"clip.text", dtext.data(), dtext.size()});
            opt.step(params, grads);
            epoch_loss += loss;
            ++steps;
        }
        epoch_loss /= std::max(1, steps);
        if (report)
            report->epoch_loss.push_back(epoch_loss);
        if (cfg.verbose)
            std::fprintf(stderr, "clip epoch %d/%d loss %.4f\n", epoch + 1, cfg.epochs,
                         epoch_loss);
    }

    if (report) {
        Mat hold = pixels.rightCols(n_hold);
        std::vector<scenes::Style> hold_tok(tok.end() - n_hold, tok.end());
        report->holdout_accuracy = retrieval_accuracy(model, hold, hold_tok);
    }
    return model;
}

} // namespace tg3d::clipstub
