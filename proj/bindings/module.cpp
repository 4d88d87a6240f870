// Python surface over the core pipeline. Every entry point that needs
// configuration takes the same dotted-path overrides the CLI accepts and
// resolves them against the built-in defaults.

#include "tg3d/checkpoint.hpp"
#include "tg3d/config.hpp"
#include "tg3d/eval.hpp"
#include "tg3d/inversion.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace tg3d;
using config::Json;

namespace {

Json resolve(const std::string& path, const std::vector<std::string>& overrides) {
    return config::resolve(path, overrides);
}

Image to_image(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    py::buffer_info b = a.request();
    check(b.ndim == 3 && b.shape[2] == 3, "image array must have shape (h, w, 3)");
    Image img(static_cast<int>(b.shape[0]), static_cast<int>(b.shape[1]));
    std::memcpy(img.px.data(), b.ptr, sizeof(double) * img.size());
    return img;
}

py::array from_image(const Image& img) {
    py::array_t<double> a({img.h, img.w, 3});
    std::memcpy(a.request().ptr, img.px.data(), sizeof(double) * img.size());
    return a;
}

std::vector<Image> to_images(const std::vector<py::array>& arrs) {
    std::vector<Image> out;
    for (const auto& a : arrs)
        out.push_back(to_image(a));
    return out;
}

py::list from_images(const std::vector<Image>& imgs) {
    py::list out;
    for (const auto& img : imgs)
        out.append(from_image(img));
    return out;
}

Vec to_vec(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    py::buffer_info b = a.request();
    check(b.ndim == 1, "expected a 1-d array");
    Vec v(b.shape[0]);
    std::memcpy(v.data(), b.ptr, sizeof(double) * v.size());
    return v;
}

py::array from_vec(const Vec& v) {
    return py::array_t<double>({static_cast<py::ssize_t>(v.size())}, v.data());
}

struct PyGenerator {
    Json cfg;
    gen3d::Generator G;
    gen3d::RenderConfig rc;

    PyGenerator(const std::vector<std::string>& overrides, const std::string& ckpt)
        : cfg(resolve("", overrides)) {
        G = ckpt.empty() ? config::build_generator(cfg) : config::load_generator(cfg, ckpt);
        rc = config::render_from(cfg);
    }
    int d_z() const { return G.config().d_z; }
    py::array sample_z(uint64_t seed) const {
        Rng rng(seed);
        return from_vec(rng.normal_vec(G.config().d_z));
    }
    py::array render(const py::array& z, double yaw, double pitch) const {
        return from_image(G.render_latent(to_vec(z), CameraPose{yaw, pitch}, rc));
    }
    void save(const std::string& path) { save_checkpoint(path, G.param_set()); }
    uint64_t hash() const { return G.hash(); }
};

struct PyDiffusion {
    Json cfg;
    diffusion::DiffusionModel model;

    PyDiffusion(const std::vector<std::string>& overrides, const std::string& ckpt)
        : cfg(resolve("", overrides)) {
        model = ckpt.empty() ? config::build_diffusion(cfg) : config::load_diffusion(cfg, ckpt);
    }
    int T() const { return model.schedule().T; }
    int T_p() const { return model.schedule().T_p; }
    py::array translate(const py::array& src, uint64_t seed) const {
        diffusion::GuidanceSpec spec = config::guidance_from(cfg);
        diffusion::IdentityCodec codec(model.config().res);
        Rng rng(seed);
        return from_image(diffusion::t_i2i(to_image(src), spec, model, codec, rng));
    }
    uint64_t hash() const { return model.hash(); }
};

struct PyClip {
    Json cfg;
    clipstub::ClipModel model;

    PyClip(const std::vector<std::string>& overrides, const std::string& ckpt)
        : cfg(resolve("", overrides)) {
        model = ckpt.empty() ? config::build_clip(cfg) : config::load_clip(cfg, ckpt);
    }
    py::array embed(const py::array& img) const {
        return from_vec(model.embed_image(to_image(img)));
    }
    double distance(const py::array& img, const std::string& style) const {
        return clipstub::clip_distance(model, to_image(img), scenes::style_from_name(style));
    }
    uint64_t hash() const { return model.hash(); }
};

struct PyPose {
    Json cfg;
    pose::PoseExtractor model;

    PyPose(const std::vector<std::string>& overrides, const std::string& ckpt)
        : cfg(resolve("", overrides)) {
        model = ckpt.empty() ? config::build_pose(cfg) : config::load_pose(cfg, ckpt);
    }
    py::tuple extract(const py::array& img) const {
        pose::PoseVector p = model.extract(to_image(img));
        return py::make_tuple(p.yaw, p.pitch);
    }
    double difference(const py::array& a, const py::array& b) const {
        return pose::pose_difference(to_image(a), to_image(b), model);
    }
    uint64_t hash() const { return model.hash(); }
};

} // namespace

PYBIND11_MODULE(_tg3d, m) {
    m.doc() = "text-guided 3d domain adaptation pipeline (core bindings)";

    py::register_exception<config::ConfigError>(m, "ConfigError");

    m.def("derive_seed",
          [](uint64_t root, const std::string& name, uint64_t index) {
              return derive_seed(root, name, index);
          },
          py::arg("root"), py::arg("name"), py::arg("index") = 0);

    m.def("resolve_config",
          [](const std::string& path, const std::vector<std::string>& overrides) {
              return resolve(path, overrides).dump();
          },
          py::arg("path") = "", py::arg("overrides") = std::vector<std::string>{});

    m.def("analytic_scene",
          [](uint64_t seed, const std::string& style, double yaw, double pitch, int res) {
              return from_image(scenes::render_analytic(scenes::sample_scene(seed),
                                                        CameraPose{yaw, pitch},
                                                        scenes::style_from_name(style), res));
          },
          py::arg("seed"), py::arg("style") = "source", py::arg("yaw") = 0.0,
          py::arg("pitch") = 0.0, py::arg("res") = 32);

    m.def("write_png",
          [](const py::array& img, const std::string& path) { write_png(to_image(img), path); });
    m.def("read_png", [](const std::string& path) { return from_image(read_png(path)); });

    py::class_<PyGenerator>(m, "Generator")
        .def(py::init<const std::vector<std::string>&, const std::string&>(),
             py::arg("overrides") = std::vector<std::string>{}, py::arg("ckpt") = "")
        .def_property_readonly("d_z", &PyGenerator::d_z)
        .def("sample_z", &PyGenerator::sample_z, py::arg("seed"))
        .def("render", &PyGenerator::render, py::arg("z"), py::arg("yaw") = 0.0,
             py::arg("pitch") = 0.0)
        .def("save", &PyGenerator::save, py::arg("path"))
        .def("hash", &PyGenerator::hash);

    py::class_<PyDiffusion>(m, "DiffusionModel")
        .def(py::init<const std::vector<std::string>&, const std::string&>(),
             py::arg("overrides") = std::vector<std::string>{}, py::arg("ckpt") = "")
        .def_property_readonly("T", &PyDiffusion::T)
        .def_property_readonly("T_p", &PyDiffusion::T_p)
        .def("translate", &PyDiffusion::translate, py::arg("src"), py::arg("seed") = 0)
        .def("hash", &PyDiffusion::hash);

    py::class_<PyClip>(m, "ClipModel")
        .def(py::init<const std::vector<std::string>&, const std::string&>(),
             py::arg("overrides") = std::vector<std::string>{}, py::arg("ckpt") = "")
        .def("embed", &PyClip::embed, py::arg("img"))
        .def("distance", &PyClip::distance, py::arg("img"), py::arg("style"))
        .def("hash", &PyClip::hash);

    py::class_<PyPose>(m, "PoseExtractor")
        .def(py::init<const std::vector<std::string>&, const std::string&>(),
             py::arg("overrides") = std::vector<std::string>{}, py::arg("ckpt") = "")
        .def("extract", &PyPose::extract, py::arg("img"))
        .def("difference", &PyPose::difference, py::arg("a"), py::arg("b"))
        .def("hash", &PyPose::hash);

    m.def("kid",
          [](const std::vector<py::array>& a, const std::vector<py::array>& b,
             const PyClip& enc) { return eval::kid(to_images(a), to_images(b), enc.model); },
          py::arg("a"), py::arg("b"), py::arg("clip"));
    m.def("diversity",
          [](const std::vector<py::array>& imgs, const PyClip& enc) {
              return eval::diversity_score(to_images(imgs), enc.model);
          },
          py::arg("images"), py::arg("clip"));
    m.def("style_reference",
          [](const std::string& style, int n, int res, uint64_t seed) {
              return from_images(
                  eval::style_reference(scenes::style_from_name(style), n, res, seed));
          },
          py::arg("style"), py::arg("n"), py::arg("res") = 32, py::arg("seed") = 0);
    m.def("sample_generator",
          [](const PyGenerator& g, int n, uint64_t seed) {
              return from_images(eval::sample_generator(g.G, n, g.rc, seed));
          },
          py::arg("gen"), py::arg("n"), py::arg("seed") = 0);

    m.def("invert",
          [](const py::array& target, const PyGenerator& g, const PyPose& p, const PyClip& c) {
              inversion::InvertConfig ic = config::invert_from(g.cfg);
              inversion::InvertResult res =
                  inversion::invert(to_image(target), g.G, p.model, c.model, ic);
              py::dict out;
              out["initial_pixel_l2"] = res.initial_pixel_l2;
              out["final_pixel_l2"] = res.final_pixel_l2;
              out["yaw"] = res.cam.yaw_deg;
              out["pitch"] = res.cam.pitch_deg;
              out["image"] = from_image(g.G.render(res.w, res.cam, g.rc));
              return out;
          },
          py::arg("target"), py::arg("gen"), py::arg("pose"), py::arg("clip"));
}
