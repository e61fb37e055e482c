#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "drpose/checkpoint.hpp"
#include "drpose/commands.hpp"
#include "drpose/error.hpp"

namespace py = pybind11;
using namespace drpose;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Array stack(const std::vector<Pose3D>& poses) {
    const std::size_t n = poses.empty() ? 0 : poses[0].joint_count();
    Array out({static_cast<py::ssize_t>(poses.size()), static_cast<py::ssize_t>(n), py::ssize_t{3}});
    double* dst = out.mutable_data();
    for (const auto& p : poses) dst = std::copy(p.joints().data().begin(), p.joints().data().end(), dst);
    return out;
}

Camera camera_from(const RunConfig& c) { return c.camera; }

RunConfig config_from(const std::string& text) {
    RunConfig c = parse_config(text);
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_drpose, m) {
    m.doc() = "Diffusion-based refinement of 2D-to-3D human pose lifting";

    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

    // config
    m.def("default_config", [] { return dump_config(RunConfig{}); }, "Default config as key = value text.");
    m.def("config_keys", [] {
        std::vector<std::string> out;
        for (const auto& k : config_keys()) out.push_back(k.name);
        return out;
    });
    m.def("normalize_config", [](const std::string& text) { return dump_config(config_from(text)); },
          "Parse, validate and dump a config.");
    m.def("config_get", [](const std::string& text, const std::string& key) { return config_get(config_from(text), key); });

    // diffusion
    m.def("alpha_bar", [](std::size_t T, double offset) { return build_cosine_schedule(T, offset).alpha_bar; },
          py::arg("T") = 1000, py::arg("offset") = 0.008);
    m.def(
        "forward_diffuse",
        [](const Array& y0, std::size_t t, const Array& eps, std::size_t T, double offset) {
            return to_array(forward_diffuse(to_tensor(y0), t, to_tensor(eps), build_cosine_schedule(T, offset)));
        },
        py::arg("y0"), py::arg("t"), py::arg("eps"), py::arg("T") = 1000, py::arg("offset") = 0.008);
    m.def(
        "posterior_mean",
        [](const Array& y_t, const Array& y0_hat, std::size_t t, std::size_t T, double offset) {
            return to_array(
                posterior_mean(to_tensor(y_t), to_tensor(y0_hat), t, build_cosine_schedule(T, offset)));
        },
        py::arg("y_t"), py::arg("y0_hat"), py::arg("t"), py::arg("T") = 1000, py::arg("offset") = 0.008);
    m.def("timestep_plan", [](std::size_t t_start, std::size_t K, std::size_t T) {
        return make_timestep_plan(t_start, K, T).steps;
    });

    // metrics
    m.def("mpjpe", [](const Array& pred, const Array& gt) {
        return mpjpe(Pose3D(to_tensor(pred)), Pose3D(to_tensor(gt)));
    });
    m.def("p_mpjpe", [](const Array& pred, const Array& gt) {
        return p_mpjpe(Pose3D(to_tensor(pred)), Pose3D(to_tensor(gt)));
    });
    m.def(
        "pck", [](const Array& pred, const Array& gt, double thr) { return pck(Pose3D(to_tensor(pred)), Pose3D(to_tensor(gt)), thr); },
        py::arg("pred"), py::arg("gt"), py::arg("threshold_mm") = kPckThresholdMm);
    m.def("procrustes_align", [](const Array& pred, const Array& gt) {
        return to_array(procrustes_align(to_tensor(pred), to_tensor(gt)));
    });

    // hypotheses
    m.def(
        "aggregate",
        [](const Array& hyps, const Array& x, const std::string& config) {
            const Tensor h = to_tensor(hyps);
            if (h.rank() != 3 || h.dim(2) != 3) throw ShapeError("hypotheses must be H x N x 3");
            HypothesisSet set;
            const std::size_t n = h.dim(1);
            for (std::size_t i = 0; i < h.dim(0); ++i) {
                Tensor p({n, 3});
                std::copy_n(h.data().begin() + static_cast<std::ptrdiff_t>(i * n * 3), n * 3, p.data().begin());
                set.hypotheses.emplace_back(std::move(p));
            }
            return to_array(aggregate(set, Pose2D(to_tensor(x)), camera_from(config_from(config))).joints());
        },
        py::arg("hypotheses"), py::arg("x"), py::arg("config") = "");
    m.def("project", [](const Array& pose, const std::string& config) {
        return to_array(project(Pose3D(to_tensor(pose)), camera_from(config_from(config))).joints());
    }, py::arg("pose"), py::arg("config") = "");

    // pipeline commands; each returns what it printed
    m.def("new_run_dir", [](const std::string& config) { return make_run_dir(config_from(config)).string(); });
    m.def("gen_data", [](const std::string& config, const std::string& run) {
        std::ostringstream log;
        cmd_gen_data(config_from(config), RunLayout{run}, log);
        return log.str();
    });
    m.def(
        "train",
        [](const std::string& config, const std::string& run, const std::string& stage, bool resume) {
            if (stage != "pretrain" && stage != "refine") throw UsageError("stage must be pretrain or refine");
            std::ostringstream log;
            py::gil_scoped_release release;
            cmd_train(config_from(config), RunLayout{run}, stage == "pretrain" ? Stage::Pretrain : Stage::Refine,
                      resume, log);
            return log.str();
        },
        py::arg("config"), py::arg("run"), py::arg("stage"), py::arg("resume") = false);
    m.def("infer", [](const std::string& config, const std::string& run) {
        std::ostringstream log;
        py::gil_scoped_release release;
        return cmd_infer(config_from(config), RunLayout{run}, std::nullopt, log).string();
    });
    m.def("eval", [](const std::string& config, const std::string& run, const std::vector<std::string>& predictions) {
        std::ostringstream log;
        std::vector<fs::path> files(predictions.begin(), predictions.end());
        cmd_eval(config_from(config), RunLayout{run}, files, std::nullopt, log);
        return log.str();
    });

    // trained model access
    py::class_<RefineModel>(m, "Model")
        .def_static("load", [](const std::string& path) {
            return model_from_checkpoint(load_checkpoint(path), make_skeleton());
        })
        .def("initial_predict", [](const RefineModel& model, const Array& x) {
            return to_array(model.initial_predict(Pose2D(to_tensor(x))).joints());
        })
        .def(
            "hypotheses",
            [](const RefineModel& model, const Array& x, std::size_t H, std::size_t K, std::uint64_t seed,
               const std::string& config) {
                RunConfig c = config_from(config);
                c.H = H;
                c.K = K;
                const Pose2D x2(to_tensor(x));
                const HypothesisSet set = generate_hypotheses(model.initial_predict(x2), x2, model, make_schedule(c),
                                                              infer_options(c).hyp, seed);
                return stack(set.hypotheses);
            },
            py::arg("x"), py::arg("H") = 1, py::arg("K") = 1, py::arg("seed") = 0, py::arg("config") = "")
        .def_property_readonly("parameter_count", [](const RefineModel& model) {
            std::size_t n = 0;
            for (const auto& [name, t] : model.params().tensors()) n += t.size();
            return n;
        });
}
