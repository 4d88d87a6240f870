#include <doctest.h>

#include "tg3d/adapt.hpp"

#include <filesystem>
#include <fstream>

using namespace tg3d;
using namespace tg3d::adapt;

namespace {
namespace fs = std::filesystem;

Image random_image(int res, uint64_t seed) {
    Rng rng(seed);
    Image img(res, res);
    for (long i = 0; i < img.size(); ++i)
        img.px[i] = rng.uniform();
    return img;
}

struct Rig {
    gen3d::Generator G;
    Discriminator D;
    gen3d::RenderConfig rc;

    explicit Rig(int res = 8, uint64_t seed = 5) {
        Rng rng(seed);
        gen3d::Generator::Config gc;
        gc.d_z = 4;
        gc.d_w = 8;
        gc.map_hidden = 8;
        gc.field_hidden = 8;
        gc.posenc_freqs = 2;
        G = gen3d::Generator(gc, rng);
        Discriminator::Config dc;
        dc.res = res;
        dc.hidden = 12;
        D = Discriminator(dc, rng);
        rc.res = res;
        rc.samples_per_ray = 4;
    }

    FakeBatch batch(int n, uint64_t seed) const {
        Rng rng(seed);
        FakeBatch fb;
        for (int i = 0; i < n; ++i) {
            fb.zs.push_back(rng.normal_vec(G.config().d_z));
            fb.cams.push_back(CameraPose::sample(rng));
        }
        return fb;
    }
};

void zero_net(Mlp& net) {
    for (auto& w : net.W)
        w.setZero();
    for (auto& b : net.b)
        b.setZero();
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}
} // namespace

TEST_CASE("saturating nonlinearity: pinned values and asymptotes") {
    CHECK(softplus_f(0.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
    CHECK(softplus_f(50.0) == doctest::Approx(-1.9287498479639178e-22).epsilon(1e-9));
    CHECK(softplus_f(-50.0) == doctest::Approx(-50.0).epsilon(1e-12));
    CHECK(std::isfinite(softplus_f(1e4)));
    CHECK(softplus_f(1e4) <= 0.0); // true value underflows to -0
    CHECK(softplus_f(-1e4) == doctest::Approx(-1e4).epsilon(1e-12));
}

TEST_CASE("zeroed critic pins both adversarial losses at log 2 per term") {
    Rig rig;
    zero_net(rig.D.net);
    FakeBatch fb = rig.batch(3, 11);
    Rng aug(1);
    AugmentPipeline A;
    CHECK(ada_loss_G(rig.G, rig.D, A, fb, rig.rc, 0.0, aug) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));

    std::vector<Image> real = {random_image(8, 2), random_image(8, 3)};
    std::vector<CameraPose> cams = {CameraPose{10, 5}, CameraPose{-20, -8}};
    Rng aug2(1);
    double r1 = -1;
    double ld = ada_loss_D(rig.G, rig.D, A, fb, real, cams, 0.0, rig.rc, 0.0, aug2, nullptr, &r1);
    CHECK(ld == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
    CHECK(r1 == 0.0); // gradient of the zero map
}

TEST_CASE("p=0 augmentation is the identity and losses match the plain path") {
    Rig rig;
    AugmentPipeline A;
    A.p = 0.0;
    Rng rng(4);
    Image x = random_image(8, 9);
    AugmentDraw d = A.sample(rng);
    Image y = AugmentPipeline::apply(x, d);
    CHECK((y.px - x.px).cwiseAbs().maxCoeff() == 0.0);

    FakeBatch fb = rig.batch(3, 17);
    double sigma = 0.8;
    Rng aug(123);
    double with_pipe = ada_loss_G(rig.G, rig.D, A, fb, rig.rc, sigma, aug);

    // plain computation with no augmentation operator at all
    std::vector<int> rays(64);
    std::iota(rays.begin(), rays.end(), 0);
    double plain = 0;
    for (int i = 0; i < 3; ++i) {
        Mat px = rig.G.render_rays(rig.G.map_wplus(fb.zs[i]), fb.cams[i], rig.rc, rays);
        Image img(8, 8);
        img.px = Eigen::Map<const Vec>(px.data(), px.size());
        double u = rig.D.logit(gaussian_blur(img, sigma), fb.cams[i]);
        plain += -softplus_f(u) / 3;
    }
    CHECK(with_pipe == plain);
}

TEST_CASE("augmentation ops: adjoint identity and invertibility") {
    AugmentPipeline A;
    A.p = 1.0;
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        AugmentDraw d = A.sample(rng);
        Image x = random_image(8, 100 + trial);
        Image y = random_image(8, 200 + trial);
        Image zero(8, 8);
        // apply is affine: subtract the image of zero to isolate the linear part
        Image ax = AugmentPipeline::apply(x, d);
        Image a0 = AugmentPipeline::apply(zero, d);
        double lhs = (ax.px - a0.px).dot(y.px);
        double rhs = x.px.dot(AugmentPipeline::backward(y, d).px);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

        // flip and rotation alone are permutations, so adjoint inverts them
        AugmentDraw perm = d;
        perm.dx = perm.dy = 0;
        perm.bright = 0.0;
        Image round = AugmentPipeline::backward(AugmentPipeline::apply(x, perm), perm);
        CHECK((round.px - x.px).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("gaussian blur is self-adjoint and trivial at sigma 0") {
    Image x = random_image(8, 31);
    Image y = random_image(8, 32);
    CHECK((gaussian_blur(x, 0.0).px - x.px).cwiseAbs().maxCoeff() == 0.0);
    for (double sigma : {0.5, 1.0, 2.0}) {
        double lhs = gaussian_blur(x, sigma).px.dot(y.px);
        double rhs = x.px.dot(gaussian_blur(y, sigma).px);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("gradient penalty: linear critic oracle") {
    Rng rng(7);
    Discriminator::Config dc;
    dc.res = 4;
    Discriminator D(dc, rng);
    D.net = Mlp({D.input_dim(), 1}, rng);
    int ni = D.image_dim();
    Vec a = Rng(8).normal_vec(ni);
    D.net.W[0].row(0).head(ni) = a.transpose();
    D.net.W[0](0, ni) = 0.7;
    D.net.W[0](0, ni + 1) = -0.3;

    Image x = random_image(4, 9);
    CameraPose c{5.0, -3.0};
    MlpGrads g = D.net.zero_grads();
    double r1 = r1_penalty(D, x, c, &g);
    CHECK(r1 == doctest::Approx(a.squaredNorm()).epsilon(1e-12));
    CHECK((g.dW[0].row(0).head(ni).transpose() - 2.0 * a).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(g.dW[0](0, ni) == 0.0);
    CHECK(g.db[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient penalty: nonnegative and parameter gradient matches finite differences") {
    Rng rng(13);
    Discriminator::Config dc;
    dc.res = 4;
    dc.hidden = 6;
    Discriminator D(dc, rng);
    Image x = random_image(4, 14);
    CameraPose c{-12.0, 7.0};

    MlpGrads g = D.net.zero_grads();
    double r1 = r1_penalty(D, x, c, &g);
    CHECK(r1 >= 0.0);

    ParamSet ps = D.param_set();
    Rng pick(15);
    double h = 1e-5;
    for (int trial = 0; trial < 12; ++trial) {
        int pi = static_cast<int>(pick.uniform_int(0, static_cast<int>(ps.size()) - 1));
        int j = static_cast<int>(pick.uniform_int(0, static_cast<int>(ps[pi].size) - 1));
        double saved = ps[pi].data[j];
        ps[pi].data[j] = saved + h;
        double up = r1_penalty(D, x, c);
        ps[pi].data[j] = saved - h;
        double dn = r1_penalty(D, x, c);
        ps[pi].data[j] = saved;
        double fd = (up - dn) / (2 * h);
        // grads follow the param_set layout: W0, b0, W1, b1, ...
        double analytic = (pi % 2 == 0) ? g.dW[pi / 2].data()[j] : g.db[pi / 2][j];
        if (std::abs(fd) < 1e-10 && std::abs(analytic) < 1e-10)
            continue;
        CHECK(rel_err(fd, analytic) < 1e-4);
    }
}

TEST_CASE("generator adversarial loss: gradient matches finite differences") {
    Rig rig(8, 21);
    FakeBatch fb = rig.batch(2, 22);
    AugmentPipeline A; // p = 0, deterministic path
    double sigma = 0.6;

    auto eval = [&]() {
        Rng aug(1);
        return ada_loss_G(rig.G, rig.D, A, fb, rig.rc, sigma, aug);
    };
    gen3d::GenGrads gg = rig.G.zero_grads();
    Rng aug(1);
    ada_loss_G(rig.G, rig.D, A, fb, rig.rc, sigma, aug, &gg);

    ParamSet ps = rig.G.param_set();
    ParamSet gs = gg.param_set();
    REQUIRE(ps.size() == gs.size());
    Rng pick(23);
    double h = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 14; ++trial) {
        int pi = static_cast<int>(pick.uniform_int(0, static_cast<int>(ps.size()) - 1));
        int j = static_cast<int>(pick.uniform_int(0, static_cast<int>(ps[pi].size) - 1));
        double saved = ps[pi].data[j];
        ps[pi].data[j] = saved + h;
        double up = eval();
        ps[pi].data[j] = saved - h;
        double dn = eval();
        ps[pi].data[j] = saved;
        double fd = (up - dn) / (2 * h);
        double analytic = gs[pi].data[j];
        if (std::abs(fd) < 1e-9 && std::abs(analytic) < 1e-9)
            continue;
        CHECK(rel_err(fd, analytic) < 1e-3);
        ++checked;
    }
    CHECK(checked >= 6);
}

TEST_CASE("critic loss with R1: gradient matches finite differences") {
    Rig rig(8, 31);
    FakeBatch fb = rig.batch(2, 32);
    std::vector<Image> real = {random_image(8, 33), random_image(8, 34)};
    std::vector<CameraPose> cams = {CameraPose{8, 2}, CameraPose{-15, -6}};
    AugmentPipeline A;
    double lambda = 5.0;

    auto eval = [&]() {
        Rng aug(2);
        return ada_loss_D(rig.G, rig.D, A, fb, real, cams, lambda, rig.rc, 0.0, aug);
    };
    MlpGrads g = rig.D.net.zero_grads();
    Rng aug(2);
    ada_loss_D(rig.G, rig.D, A, fb, real, cams, lambda, rig.rc, 0.0, aug, &g);

    ParamSet ps = rig.D.param_set();
    Rng pick(35);
    double h = 1e-5;
    for (int trial = 0; trial < 12; ++trial) {
        int pi = static_cast<int>(pick.uniform_int(0, static_cast<int>(ps.size()) - 1));
        int j = static_cast<int>(pick.uniform_int(0, static_cast<int>(ps[pi].size) - 1));
        double saved = ps[pi].data[j];
        ps[pi].data[j] = saved + h;
        double up = eval();
        ps[pi].data[j] = saved - h;
        double dn = eval();
        ps[pi].data[j] = saved;
        double fd = (up - dn) / (2 * h);
        double analytic = (pi % 2 == 0) ? g.dW[pi / 2].data()[j] : g.db[pi / 2][j];
        if (std::abs(fd) < 1e-9 && std::abs(analytic) < 1e-9)
            continue;
        CHECK(rel_err(fd, analytic) < 1e-3);
    }
}

TEST_CASE("density smoothness: zero at zero sigma, gradient matches finite differences") {
    Rig rig(8, 41);
    Vec z = Rng(42).normal_vec(rig.G.config().d_z);
    gen3d::WPlus w = rig.G.map_wplus(z);

    Rng r0(43);
    CHECK(density_regularization(rig.G, w, 0.0, 16, r0) == 0.0);

    auto eval = [&]() {
        Rng rng(44);
        return density_regularization(rig.G, w, 0.05, 16, rng);
    };
    gen3d::FieldGrads fg = rig.G.zero_grads().field;
    Rng rng(44);
    double loss = density_regularization(rig.G, w, 0.05, 16, rng, &fg);
    CHECK(loss >= 0.0);

    // field parameter gradient against central differences
    struct Probe {
        double* data;
        double* grad;
        long size;
    };
    std::vector<Probe> probes = {{rig.G.W1.data(), fg.dW1.data(), rig.G.W1.size()},
                                 {rig.G.W3.data(), fg.dW3.data(), rig.G.W3.size()},
                                 {rig.G.b1.data(), fg.db1.data(), rig.G.b1.size()},
                                 {rig.G.b3.data(), fg.db3.data(), rig.G.b3.size()}};
    Rng pick(45);
    double h = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
        Probe& p = probes[pick.uniform_int(0, static_cast<int>(probes.size()) - 1)];
        int j = static_cast<int>(pick.uniform_int(0, p.size - 1));
        double saved = p.data[j];
        p.data[j] = saved + h;
        double up = eval();
        p.data[j] = saved - h;
        double dn = eval();
        p.data[j] = saved;
        double fd = (up - dn) / (2 * h);
        if (std::abs(fd) < 1e-9 && std::abs(p.grad[j]) < 1e-9)
            continue;
        CHECK(rel_err(fd, p.grad[j]) < 1e-3);
    }
}

TEST_CASE("augmentation probability controller: direction and clamping") {
    PControllerState st;
    st.traverse_images = 100.0;
    std::vector<double> positive = {1.0, 2.5, 0.3};
    double prev = st.p;
    for (int i = 0; i < 30; ++i) {
        double p = update_p_controller(st, positive, 10);
        CHECK(p >= prev);
        CHECK(p <= 1.0);
        prev = p;
    }
    CHECK(st.p == 1.0);

    std::vector<double> zeroish = {0.0, 1.0, -1.0}; // mean sign 0 < target
    for (int i = 0; i < 30; ++i)
        update_p_controller(st, zeroish, 10);
    CHECK(st.p == 0.0);

    std::vector<double> negative = {-3.0, -0.1};
    for (int i = 0; i < 5; ++i) {
        double p = update_p_controller(st, negative, 10);
        CHECK(p == 0.0);
    }
}

namespace {
pipeline::TargetDataset tiny_dataset(const gen3d::Generator& G, const gen3d::RenderConfig& rc,
                                     int n, uint64_t seed) {
    pipeline::TargetDataset ds;
    ds.style = scenes::Style::lego;
    ds.res = rc.res;
    ds.base_seed = seed;
    ds.N = n;
    for (int i = 0; i < n; ++i) {
        pipeline::TargetRecord r;
        r.id = i;
        r.z_seed = derive_seed(seed, "z", i);
        Rng crng(derive_seed(seed, "camera", i));
        r.cam = CameraPose::sample(crng);
        Vec z = pipeline::latent_from_seed(r.z_seed, G.config().d_z);
        Image src = G.render_latent(z, r.cam, rc);
        Image trg = src;
        trg.px = (trg.px.array() * 0.7 + 0.2).matrix(); // cheap style shift
        ds.records.push_back(r);
        ds.src.push_back(src);
        ds.trg.push_back(trg);
    }
    return ds;
}
} // namespace

TEST_CASE("adversarial adaptation: bookkeeping, determinism, artifacts, abort") {
    Rig rig(8, 51);
    pipeline::TargetDataset ds = tiny_dataset(rig.G, rig.rc, 10, 52);

    AdaptConfig cfg;
    cfg.batch = 4;
    cfg.epochs = 2;
    cfg.den_points = 8;
    cfg.render = rig.rc;
    cfg.seed = 53;
    cfg.p_traverse_images = 100.0;

    auto dir = fs::temp_directory_path() / "tg3d_adapt_run";
    fs::remove_all(dir);
    cfg.out_dir = dir.string();
    AdaptResult r = adapt_adversarial(rig.G, ds, cfg);
    CHECK(!r.aborted);
    CHECK(r.g_steps == 6); // ceil(10/4) per epoch, 2 epochs
    CHECK(r.d_steps == 6);
    CHECK(r.log.size() == 6);
    for (const auto& e : r.log) {
        CHECK(std::isfinite(e.loss_G));
        CHECK(std::isfinite(e.loss_D));
        CHECK(e.r1 >= 0.0);
        CHECK(e.den >= 0.0);
        CHECK(e.p >= 0.0);
        CHECK(e.p <= 1.0);
    }
    CHECK(fs::exists(dir / "gen_epoch_000.ckpt"));
    CHECK(fs::exists(dir / "gen_epoch_001.ckpt"));
    std::ifstream logf(dir / "train_log.jsonl");
    int lines = 0;
    std::string line;
    while (std::getline(logf, line))
        if (!line.empty())
            ++lines;
    CHECK(lines == 6);
    fs::remove_all(dir);

    CHECK(r.G.hash() != rig.G.hash()); // training moved the generator

    cfg.out_dir.clear();
    AdaptResult r2 = adapt_adversarial(rig.G, ds, cfg);
    CHECK(r2.G.hash() == r.G.hash());
    CHECK(r2.D.hash() == r.D.hash());

    cfg.epochs = 0;
    AdaptResult r0 = adapt_adversarial(rig.G, ds, cfg);
    CHECK(r0.G.hash() == rig.G.hash());

    // a poisoned real image surfaces as a non-finite critic loss: roll back
    cfg.epochs = 1;
    pipeline::TargetDataset bad = ds;
    bad.trg[0].px[0] = std::numeric_limits<double>::quiet_NaN();
    AdaptResult rb = adapt_adversarial(rig.G, bad, cfg);
    CHECK(rb.aborted);
    CHECK(rb.d_steps == 0);
    CHECK(rb.G.hash() == rig.G.hash()); // last-good parameters restored
}

TEST_CASE("text-directional baselines: identity at zero steps, reduction, traces") {
    Rig rig(8, 61);
    Rng crng(62);
    clipstub::ClipModel::Config cc;
    cc.res = 8;
    cc.hidden = 12;
    cc.d_e = 8;
    clipstub::ClipModel clip(cc, crng);

    DirectConfig cfg;
    cfg.steps = 0;
    cfg.batch = 2;
    cfg.render = rig.rc;
    cfg.seed = 63;
    gen3d::Generator same =
        adapt_nada_star(rig.G, clip, scenes::Style::source, scenes::Style::lego, cfg);
    CHECK(same.hash() == rig.G.hash());

    cfg.steps = 12;
    std::vector<double> t_nada, t_hyper0, t_hyper, t_ind;
    gen3d::Generator g_nada =
        adapt_nada_star(rig.G, clip, scenes::Style::source, scenes::Style::lego, cfg, &t_nada);
    cfg.lambda_indomain = 0.0;
    gen3d::Generator g_h0 = adapt_hyper_star(rig.G, clip, scenes::Style::source,
                                             scenes::Style::lego, cfg, &t_hyper0);
    REQUIRE(t_nada.size() == 12);
    for (size_t i = 0; i < t_nada.size(); ++i)
        CHECK(t_nada[i] == t_hyper0[i]);
    CHECK(g_nada.hash() == g_h0.hash());

    cfg.lambda_indomain = 0.5;
    adapt_hyper_star(rig.G, clip, scenes::Style::source, scenes::Style::lego, cfg, &t_hyper,
                     &t_ind);
    REQUIRE(t_ind.size() == 12);
    for (size_t i = 0; i < t_ind.size(); ++i) {
        CHECK(t_ind[i] >= 0.0);
        CHECK(std::isfinite(t_hyper[i]));
    }
}

TEST_CASE("image-directional adaptation: degenerate pairs, determinism") {
    Rig rig(8, 71);
    Rng crng(72);
    clipstub::ClipModel::Config cc;
    cc.res = 8;
    cc.hidden = 12;
    cc.d_e = 8;
    clipstub::ClipModel clip(cc, crng);

    pipeline::TargetDataset ds = tiny_dataset(rig.G, rig.rc, 6, 73);

    DirectConfig cfg;
    cfg.steps = 6;
    cfg.batch = 3;
    cfg.render = rig.rc;
    cfg.seed = 74;
    std::vector<double> trace1, trace2;
    gen3d::Generator a = adapt_nonadversarial_image(rig.G, clip, ds, cfg, &trace1);
    gen3d::Generator b = adapt_nonadversarial_image(rig.G, clip, ds, cfg, &trace2);
    REQUIRE(trace1.size() == 6);
    CHECK(trace1 == trace2);
    CHECK(a.hash() == b.hash());
    for (double v : trace1)
        CHECK(std::isfinite(v));

    // identical pairs give a flat loss of 1 and zero gradient everywhere
    pipeline::TargetDataset flat = ds;
    flat.trg = flat.src;
    std::vector<double> tf;
    gen3d::Generator g = adapt_nonadversarial_image(rig.G, clip, flat, cfg, &tf);
    for (double v : tf)
        CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.hash() == rig.G.hash());
}
