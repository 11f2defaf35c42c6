// Python bindings: numpy in, numpy out. Images are float32 (H, W) or
// (1, H, W); masks are uint8 (H, W); features are float32 (D, H, W).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mspa/config.hpp"
#include "mspa/eval.hpp"
#include "mspa/losses.hpp"
#include "mspa/proto.hpp"
#include "mspa/pseudo.hpp"
#include "mspa/report.hpp"
#include "mspa/train.hpp"

namespace py = pybind11;
using namespace mspa;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor::from(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

Tensor to_image(const FloatArray& a) {
    if (a.ndim() == 2) return Tensor::from({1, int(a.shape(0)), int(a.shape(1))}, std::vector<float>(a.data(), a.data() + a.size()));
    if (a.ndim() == 3 && a.shape(0) == 1) return to_tensor(a);
    throw std::invalid_argument("image must be (H, W) or (1, H, W)");
}

FloatArray to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    FloatArray out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

template <typename T>
py::array_t<T> grid_to_numpy(const Grid<T>& g) {
    py::array_t<T> out({g.height, g.width});
    std::copy(g.values.begin(), g.values.end(), out.mutable_data());
    return out;
}

BinaryMask to_mask(const MaskArray& a) {
    if (a.ndim() != 2) throw std::invalid_argument("mask must be (H, W)");
    BinaryMask m(int(a.shape(0)), int(a.shape(1)));
    for (py::ssize_t i = 0; i < a.size(); ++i) m.values[i] = a.data()[i] != 0;
    return m;
}

py::dict metrics_dict(const Metrics& m) {
    py::dict d;
    d["dsc"] = m.dsc;
    d["iou"] = m.iou;
    d["sen"] = m.sen;
    d["spe"] = m.spe;
    d["acc"] = m.acc;
    return d;
}

TrainConfig config_from(const py::dict& overrides) {
    const nlohmann::json doc = nlohmann::json::parse(py::str(py::module_::import("json").attr("dumps")(overrides)).cast<std::string>());
    return parse_config(doc).train;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

struct Model {
    SegNetParams params;
};

}  // namespace

PYBIND11_MODULE(_mspa, m) {
    m.doc() = "Mutual- and self-prototype alignment for semi-supervised binary segmentation";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_OSError);
    py::register_exception<NonFiniteLossError>(m, "NonFiniteLossError", PyExc_ArithmeticError);

    m.def(
        "generate_synthetic",
        [](int count, int size, std::uint64_t seed) {
            py::list out;
            for (const auto& s : generate_synthetic(count, size, seed)) {
                auto img = to_numpy(s.image).reshape({size, size});
                out.append(py::make_tuple(s.id, img, grid_to_numpy(*s.mask)));
            }
            return out;
        },
        py::arg("count"), py::arg("size") = 64, py::arg("seed") = 0, "List of (id, image, mask) triples.");

    // ---- metrics ------------------------------------------------------------
    m.def(
        "confusion",
        [](const MaskArray& pred, const MaskArray& truth) {
            const ConfusionCounts c = confusion(to_mask(pred), to_mask(truth));
            return py::make_tuple(c.tp, c.fp, c.fn, c.tn);
        },
        py::arg("pred"), py::arg("truth"), "(tp, fp, fn, tn) with foreground as positive.");
    m.def(
        "metrics", [](const MaskArray& pred, const MaskArray& truth) { return metrics_dict(metrics(confusion(to_mask(pred), to_mask(truth)))); },
        py::arg("pred"), py::arg("truth"));

    // ---- prototypes and votes ----------------------------------------------
    m.def(
        "extract_prototypes",
        [](const FloatArray& feature, const MaskArray& mask) {
            const PrototypePair p = extract_prototypes(to_tensor(feature), to_mask(mask));
            return py::make_tuple(p.valid[0] ? py::object(to_numpy(p.p[0])) : py::none(),
                                  p.valid[1] ? py::object(to_numpy(p.p[1])) : py::none());
        },
        py::arg("feature"), py::arg("mask"), "(background, foreground) masked means; None for an empty class.");
    m.def(
        "cosine_similarity_map",
        [](const FloatArray& feature, const FloatArray& prototype) {
            const Tensor g = cosine_similarity_map(to_tensor(feature), to_tensor(prototype));
            return to_numpy(g);
        },
        py::arg("feature"), py::arg("prototype"));
    m.def("majority_threshold", &majority_threshold, py::arg("n_valid"));
    m.def(
        "fuse_votes",
        [](const std::vector<MaskArray>& votes) {
            std::vector<BinaryMask> v;
            for (const auto& a : votes) v.push_back(to_mask(a));
            const VoteState s = fuse_votes(std::move(v));
            return py::make_tuple(grid_to_numpy(s.vote_sum), grid_to_numpy(s.pseudo_label), s.n_valid);
        },
        py::arg("votes"), "Prototype votes followed by the plain vote -> (vote_sum, pseudo_label, n_valid).");
    m.def(
        "ramp_weight", [](float w_max, long t_max, long t) { return ramp_weight(RampSchedule{w_max, t_max}, t); },
        py::arg("w_max"), py::arg("t_max"), py::arg("t"));

    // ---- model ---------------------------------------------------------------
    py::class_<Model>(m, "Model")
        .def_static(
            "init",
            [](std::uint64_t seed, std::vector<int> widths, int feature_dim) {
                NetDescriptor d;
                d.widths = std::move(widths);
                d.feature_dim = feature_dim;
                d.validate();
                return Model{init_params(d, seed)};
            },
            py::arg("seed") = 0, py::arg("widths") = std::vector<int>{16, 32, 64}, py::arg("feature_dim") = 32)
        .def_static(
            "load", [](const std::filesystem::path& p) { return Model{load_checkpoint(p).params}; }, py::arg("path"))
        .def_property_readonly("parameter_count", [](const Model& self) { return self.params.parameter_count(); })
        .def(
            "forward",
            [](const Model& self, const FloatArray& image) {
                autograd::NoGradGuard guard;
                const NetOutput out = forward(self.params, to_image(image));
                return py::make_tuple(to_numpy(out.probs), to_numpy(out.feature));
            },
            py::arg("image"), "(probs (2, H, W), feature (D, H, W))")
        .def(
            "predict", [](const Model& self, const FloatArray& image) { return grid_to_numpy(predict_mask(self.params, to_image(image))); },
            py::arg("image"));

    // ---- training ------------------------------------------------------------
    m.def(
        "default_config", [] { return json_to_py(to_json(TrainConfig{})); }, "Training configuration defaults as a dict.");
    m.def(
        "train",
        [](const std::filesystem::path& data, const std::filesystem::path& out, const py::dict& config) {
            const TrainConfig c = config_from(config);
            RunResult r;
            {
                py::gil_scoped_release release;
                r = run(c, data, out);
            }
            py::dict d;
            d["final_checkpoint"] = r.final_checkpoint.string();
            d["steps_run"] = r.steps_run;
            d["n_labeled"] = r.n_labeled;
            d["n_unlabeled"] = r.n_unlabeled;
            d["test"] = r.test_metrics ? py::object(metrics_dict(r.test_metrics->mean)) : py::none();
            return d;
        },
        py::arg("data"), py::arg("out"), py::arg("config") = py::dict(),
        "Train on data/train with config overrides; returns counts and test metrics.");
    m.def(
        "evaluate",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& split_dir) {
            const Checkpoint ck = load_checkpoint(checkpoint);
            return json_to_py(metrics_json(evaluate(ck.params, load_pair_dir(split_dir))));
        },
        py::arg("checkpoint"), py::arg("split_dir"), "Per-image and mean metrics over split_dir/{images,masks}.");
}
