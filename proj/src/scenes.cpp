#include "tg3d/scenes.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

namespace tg3d::scenes {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const std::vector<std::string>& style_vocab() {
    static const std::vector<std::string> v = {"source",   "lego",     "statue",
                                               "zombie",   "negative", "specifier"};
    return v;
}

std::string style_name(Style s) { return style_vocab().at(static_cast<size_t>(s)); }

Style style_from_name(const std::string& name) {
    const auto& v = style_vocab();
    for (size_t i = 0; i < v.size(); ++i)
        if (v[i] == name)
            return static_cast<Style>(i);
    throw std::runtime_error("unknown style: " + name);
}

bool renderable(Style s) { return static_cast<int>(s) <= 3; }

bool SceneParams::in_range() const {
    return head_hue >= 0.0 && head_hue < 1.0 && head_radius >= 0.3 && head_radius <= 0.5 &&
           eye_size >= 0.03 && eye_size <= 0.08 && eye_separation >= 0.15 &&
           eye_separation <= 0.35 && accent_hue >= 0.0 && accent_hue < 1.0;
}

SceneParams sample_scene(uint64_t rng_seed) {
    Rng rng(rng_seed);
    SceneParams p;
    p.head_hue = rng.uniform(0.0, 1.0);
    p.head_radius = rng.uniform(0.3, 0.5);
    p.eye_size = rng.uniform(0.03, 0.08);
    p.eye_separation = rng.uniform(0.15, 0.35);
    p.accent_hue = rng.uniform(0.0, 1.0);
    return p;
}

// Acklam's rational approximation of the standard normal quantile.
static double probit(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double q, r;
    if (p < plow) {
        q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    if (p > phigh) {
        q = std::sqrt(-2 * std::log(1 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

static double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

static double clamp_unit(double u) { return std::clamp(u, 1e-4, 1.0 - 1e-4); }

Vec SceneParams::to_latent(int d_z, uint64_t tail_seed) const {
    check(d_z >= 5, "to_latent: d_z must be >= 5");
    Vec z(d_z);
    z[0] = probit(clamp_unit(head_hue));
    z[1] = probit(clamp_unit((head_radius - 0.3) / 0.2));
    z[2] = probit(clamp_unit((eye_size - 0.03) / 0.05));
    z[3] = probit(clamp_unit((eye_separation - 0.15) / 0.2));
    z[4] = probit(clamp_unit(accent_hue));
    Rng tail(derive_seed(tail_seed, "latent-tail"));
    for (int i = 5; i < d_z; ++i)
        z[i] = tail.normal();
    return z;
}

SceneParams SceneParams::from_latent(const Vec& z) {
    check(z.size() >= 5, "from_latent: need >= 5 dims");
    SceneParams p;
    p.head_hue = normal_cdf(z[0]);
    p.head_radius = 0.3 + 0.2 * normal_cdf(z[1]);
    p.eye_size = 0.03 + 0.05 * normal_cdf(z[2]);
    p.eye_separation = 0.15 + 0.2 * normal_cdf(z[3]);
    p.accent_hue = normal_cdf(z[4]);
    return p;
}

Vec3 background_color() { return Vec3(0.82, 0.86, 0.92); }

static Vec3 hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    double i = std::floor(h * 6.0);
    double f = h * 6.0 - i;
    double p = v * (1.0 - s);
    double q = v * (1.0 - f * s);
    double t = v * (1.0 - (1.0 - f) * s);
    switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
    }
}

namespace {

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal = Vec3::Zero();
    int object = -1; // 0 head, 1/2 eyes
};

bool ray_sphere(const Ray& r, const Vec3& center, double radius, double& t, Vec3& normal) {
    Vec3 oc = r.origin - center;
    double b = oc.dot(r.dir);
    double c = oc.squaredNorm() - radius * radius;
    double disc = b * b - c;
    if (disc < 0)
        return false;
    double s = std::sqrt(disc);
    double t0 = -b - s;
    if (t0 < 1e-9) {
        t0 = -b + s;
        if (t0 < 1e-9)
            return false;
    }
    t = t0;
    normal = (r.origin + t * r.dir - center) / radius;
    return true;
}

bool ray_box(const Ray& r, const Vec3& half, double& t, Vec3& normal) {
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    int axis = 0;
    double sign = 1.0;
    for (int i = 0; i < 3; ++i) {
        double inv = 1.0 / r.dir[i];
        double t0 = (-half[i] - r.origin[i]) * inv;
        double t1 = (half[i] - r.origin[i]) * inv;
        double lo = std::min(t0, t1), hi = std::max(t0, t1);
        if (lo > tmin) {
            tmin = lo;
            axis = i;
            sign = (t0 < t1) ? -1.0 : 1.0;
        }
        tmax = std::min(tmax, hi);
        if (tmin > tmax)
            return false;
    }
    if (tmin < 1e-9)
        return false;
    t = tmin;
    normal = Vec3::Zero();
    normal[axis] = sign;
    return true;
}

struct SceneGeometry {
    bool box_head = false;
    Vec3 box_half = Vec3::Zero();
    double head_radius = 0.0;
    Vec3 eye_center[2];
    double eye_radius = 0.0;
    Vec3 head_rgb, eye_rgb;
    bool grayscale = false;
    double gray_gain = 1.0;
};

SceneGeometry scene_geometry(const SceneParams& p, Style style) {
    SceneGeometry g;
    g.head_radius = p.head_radius;
    g.eye_radius = p.eye_size;
    double ex = p.eye_separation / 2.0;
    double ey = 0.25 * p.head_radius;
    int mode = p.submode();
    switch (style) {
    case Style::source:
        g.head_rgb = hsv_to_rgb(p.head_hue, 0.55, 0.85);
        break;
    case Style::lego: {
        g.box_head = true;
        double r = p.head_radius;
        g.box_half = (mode == 0) ? Vec3(0.85 * r, 0.85 * r, 0.85 * r)
                                 : Vec3(0.70 * r, 1.15 * r, 0.70 * r);
        double hue_q = std::floor(p.head_hue * 4.0) / 4.0 + 0.125;
        g.head_rgb = hsv_to_rgb(hue_q, 0.9, 0.9);
        break;
    }
    case Style::statue:
        g.head_rgb = hsv_to_rgb(p.head_hue, 0.55, 0.85);
        g.grayscale = true;
        g.gray_gain = (mode == 0) ? 1.05 : 0.55;
        break;
    case Style::zombie: {
        double hue = (mode == 0) ? 0.30 + 0.08 * p.head_hue : 0.76 + 0.08 * p.head_hue;
        g.head_rgb = hsv_to_rgb(hue, 0.75, 0.62);
        break;
    }
    default:
        throw std::runtime_error("render_analytic: style not renderable: " +
                                 style_name(style));
    }
    double eye_v = (style == Style::zombie) ? 0.16 : 0.22;
    g.eye_rgb = hsv_to_rgb(p.accent_hue, 0.85, eye_v);
    // widen the rendered eye footprint so eyes stay visible at 32x32
    g.eye_radius = 0.04 + p.eye_size;
    double ez = g.box_head ? g.box_half[2]
                           : std::sqrt(std::max(p.head_radius * p.head_radius - ex * ex - ey * ey,
                                                1e-6));
    g.eye_center[0] = Vec3(-ex, ey, ez);
    g.eye_center[1] = Vec3(ex, ey, ez);
    return g;
}

} // namespace

Image render_analytic(const SceneParams& params, const CameraPose& cam, Style style, int res) {
    check(params.in_range(), "render_analytic: scene params out of range");
    check(cam.in_range(), "render_analytic: camera pose out of range");
    SceneGeometry g = scene_geometry(params, style);
    Image img(res, res);
    Vec3 bg = background_color();
    // 2x2 supersampling; subpixel offsets stay mirror-symmetric
    const int ss = 2;
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            Vec3 acc = Vec3::Zero();
            for (int sy = 0; sy < ss; ++sy)
                for (int sx = 0; sx < ss; ++sx) {
                    Ray ray = pixel_ray(cam, x * ss + sx, y * ss + sy, res * ss, res * ss);
                    Hit best;
                    double t;
                    Vec3 n;
                    bool hit_head = g.box_head
                                        ? ray_box(ray, g.box_half, t, n)
                                        : ray_sphere(ray, Vec3::Zero(), g.head_radius, t, n);
                    if (hit_head && t < best.t)
                        best = {t, n, 0};
                    for (int e = 0; e < 2; ++e)
                        if (ray_sphere(ray, g.eye_center[e], g.eye_radius, t, n) && t < best.t)
                            best = {t, n, 1 + e};
                    Vec3 rgb = bg;
                    if (best.object >= 0) {
                        Vec3 base = (best.object == 0) ? g.head_rgb : g.eye_rgb;
                        double lambert = std::max(best.normal.dot(-ray.dir), 0.0);
                        rgb = base * (0.35 + 0.65 * lambert);
                    }
                    acc += rgb;
                }
            Vec3 rgb = acc / (ss * ss);
            if (g.grayscale) {
                double luma = (rgb[0] + rgb[1] + rgb[2]) / 3.0 * g.gray_gain;
                rgb = Vec3(luma, luma, luma);
            }
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = std::clamp(rgb[c], 0.0, 1.0);
        }
    }
    return img;
}

std::optional<double> eye_centroid_col(const Image& img) {
    double acc = 0.0, wsum = 0.0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double luma = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
            double w = std::max(0.0, 0.40 - luma);
            acc += w * x;
            wsum += w;
        }
    if (wsum < 1e-9)
        return std::nullopt;
    return acc / wsum;
}

// ---- corpora ----

std::string corpus_kind_name(CorpusKind k) {
    switch (k) {
    case CorpusKind::diffusion_train: return "diffusion-train";
    case CorpusKind::pose_train: return "pose-train";
    case CorpusKind::contrastive_train: return "contrastive-train";
    case CorpusKind::source_pretrain: return "source-pretrain";
    }
    throw std::runtime_error("bad corpus kind");
}

CorpusKind corpus_kind_from_name(const std::string& name) {
    for (auto k : {CorpusKind::diffusion_train, CorpusKind::pose_train,
                   CorpusKind::contrastive_train, CorpusKind::source_pretrain})
        if (corpus_kind_name(k) == name)
            return k;
    throw std::runtime_error("unknown corpus kind: " + name);
}

static int sample_style_token(CorpusKind kind, const std::vector<double>& weights, Rng& rng) {
    switch (kind) {
    case CorpusKind::source_pretrain:
        return static_cast<int>(Style::source);
    // pose and contrastive training see every renderable style so both
    // extractors stay valid on stylized images
    case CorpusKind::pose_train:
    case CorpusKind::contrastive_train:
        return static_cast<int>(rng.uniform_int(0, 3));
    case CorpusKind::diffusion_train: {
        check(weights.size() == 4, "style_weights must have 4 entries");
        double total = 0.0;
        for (double w : weights)
            total += w;
        double u = rng.uniform(0.0, total);
        double acc = 0.0;
        for (int i = 0; i < 4; ++i) {
            acc += weights[i];
            if (u < acc)
                return i;
        }
        return 3;
    }
    }
    return 0;
}

Image render_record(const CorpusRecord& rec, int res) {
    SceneParams p = sample_scene(rec.scene_seed);
    CameraPose cam{rec.yaw, rec.pitch, kCameraRadius};
    return render_analytic(p, cam, static_cast<Style>(rec.style_token), res);
}

Corpus build_corpus(const CorpusSpec& spec) {
    check(spec.n >= 0, "build_corpus: negative n");
    Corpus corpus;
    corpus.spec = spec;
    corpus.records.resize(spec.n);
    for (int i = 0; i < spec.n; ++i) {
        CorpusRecord rec;
        rec.id = i;
        rec.scene_seed = derive_seed(spec.seed, "scene", i);
        Rng cam_rng(derive_seed(spec.seed, "camera", i));
        CameraPose cam = CameraPose::sample(cam_rng);
        rec.yaw = cam.yaw_deg;
        rec.pitch = cam.pitch_deg;
        Rng style_rng(derive_seed(spec.seed, "style", i));
        rec.style_token = sample_style_token(spec.kind, spec.style_weights, style_rng);
        corpus.records[i] = rec;
    }

    if (!spec.out_dir.empty()) {
        fs::create_directories(spec.out_dir);
        if (spec.write_images) {
            fs::create_directories(fs::path(spec.out_dir) / "images");
            int workers = std::max(1, spec.workers);
            auto render_range = [&](int lo, int hi) {
                for (int i = lo; i < hi; ++i) {
                    char name[32];
                    std::snprintf(name, sizeof(name), "%06d.png", i);
                    Image img = render_record(corpus.records[i], spec.res);
                    write_png(img, (fs::path(spec.out_dir) / "images" / name).string());
                }
            };
            if (workers == 1) {
                render_range(0, spec.n);
            } else {
                std::vector<std::thread> pool;
                int chunk = (spec.n + workers - 1) / workers;
                for (int t = 0; t < workers; ++t)
                    pool.emplace_back(render_range, t * chunk,
                                      std::min(spec.n, (t + 1) * chunk));
                for (auto& th : pool)
                    th.join();
            }
        }
        json manifest;
        manifest["kind"] = corpus_kind_name(spec.kind);
        manifest["seed"] = spec.seed;
        manifest["n"] = spec.n;
        manifest["res"] = spec.res;
        json recs = json::array();
        for (const auto& r : corpus.records) {
            json jr;
            jr["id"] = r.id;
            jr["kind"] = corpus_kind_name(spec.kind);
            jr["style_token"] = r.style_token;
            jr["yaw"] = r.yaw;
            jr["pitch"] = r.pitch;
            jr["scene_seed"] = r.scene_seed;
            recs.push_back(jr);
        }
        manifest["records"] = recs;
        std::ofstream f(fs::path(spec.out_dir) / "manifest.json");
        check(f.good(), "build_corpus: cannot write manifest in " + spec.out_dir);
        f << manifest.dump(2) << "\n";
    }
    return corpus;
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    check(f.good(), "load_corpus: no manifest in " + dir);
    json manifest = json::parse(f);
    Corpus corpus;
    corpus.spec.kind = corpus_kind_from_name(manifest.at("kind"));
    corpus.spec.seed = manifest.at("seed");
    corpus.spec.n = manifest.at("n");
    corpus.spec.res = manifest.at("res");
    corpus.spec.out_dir = dir;
    for (const auto& jr : manifest.at("records")) {
        CorpusRecord r;
        r.id = jr.at("id");
        r.style_token = jr.at("style_token");
        r.yaw = jr.at("yaw");
        r.pitch = jr.at("pitch");
        r.scene_seed = jr.at("scene_seed");
        corpus.records.push_back(r);
    }
    return corpus;
}

} // namespace tg3d::scenes
