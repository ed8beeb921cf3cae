// Python face of the library. Arrays cross the boundary as copies; nothing
// here keeps a view into numpy memory.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <sstream>
#include <stdexcept>

#include "mscnn/checkpoint.hpp"
#include "mscnn/experiment.hpp"

namespace py = pybind11;
using namespace mscnn;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DoubleArray& arr) {
    Shape shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i)
        shape.push_back(static_cast<int>(arr.shape(i)));
    Tensor t = Tensor::zeros(shape);
    std::memcpy(t.data(), arr.data(), static_cast<std::size_t>(arr.size()) * sizeof(double));
    return t;
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::memcpy(arr.mutable_data(), t.data(), t.values().size() * sizeof(double));
    return arr;
}

Sample sample_from(const DoubleArray& image, int label) {
    if (image.ndim() != 2) throw std::invalid_argument("image must be a 2-d array");
    Sample s;
    s.height = static_cast<int>(image.shape(0));
    s.width = static_cast<int>(image.shape(1));
    s.label = label;
    s.source = "array";
    s.pixels.assign(image.data(), image.data() + image.size());
    return s;
}

py::array_t<double> image_from(const Sample& s) {
    py::array_t<double> arr({static_cast<py::ssize_t>(s.height),
                             static_cast<py::ssize_t>(s.width)});
    std::memcpy(arr.mutable_data(), s.pixels.data(), s.pixels.size() * sizeof(double));
    return arr;
}

Dataset dataset_from(const DoubleArray& images, const std::vector<int>& labels) {
    if (images.ndim() != 4 || images.shape(1) != 1)
        throw std::invalid_argument("images must be (n, 1, e, e)");
    if (static_cast<std::size_t>(images.shape(0)) != labels.size())
        throw std::invalid_argument("one label per image required");
    Dataset set;
    set.images = tensor_from(images);
    set.labels = labels;
    return set;
}

Network net_from_text(const std::string& text, std::uint64_t seed) {
    return Network(parse_config_text(text), seed);
}

Network net_stock(const std::string& size, const std::string& variant, int classes,
                  std::uint64_t seed) {
    const Variant v = variant_from_name(variant);
    if (size == "small") return Network(small_config(v, classes), seed);
    if (size == "full") return Network(full_config(v, classes), seed);
    throw std::invalid_argument("network size must be small or full, got " + size);
}

py::dict train_py(Network& net, const DoubleArray& images, const std::vector<int>& labels,
                  py::object val_images, py::object val_labels, int max_epochs,
                  int batch_size, double initial_lr, double decay, double lr_floor,
                  double dropout, std::uint64_t seed, bool early_stop,
                  const std::string& metrics_csv, const std::string& checkpoint) {
    const Dataset train_set = dataset_from(images, labels);
    Dataset val_set;
    const bool with_val = !val_images.is_none();
    if (with_val != !val_labels.is_none())
        throw std::invalid_argument("val_images and val_labels go together");
    if (with_val)
        val_set = dataset_from(val_images.cast<DoubleArray>(),
                               val_labels.cast<std::vector<int>>());

    TrainConfig cfg;
    cfg.max_epochs = max_epochs;
    cfg.batch_size = batch_size;
    cfg.initial_lr = initial_lr;
    cfg.decay = decay;
    cfg.lr_floor = lr_floor;
    cfg.dropout = dropout;
    cfg.seed = seed;

    TrainOptions opts;
    if (with_val) opts.val = &val_set;
    opts.metrics_csv = metrics_csv;
    opts.checkpoint_path = checkpoint;
    opts.early_stop = early_stop;

    const TrainResult res = train(net, train_set, cfg, opts);
    py::list history;
    for (const EpochMetrics& m : res.history) {
        py::dict row;
        row["epoch"] = m.epoch;
        row["lr"] = m.lr;
        row["train_loss"] = m.train_loss;
        row["train_acc"] = m.train_acc;
        row["val_loss"] = m.val_loss;
        row["val_acc"] = m.val_acc;
        history.append(row);
    }
    py::dict out;
    out["epochs_run"] = res.epochs_run;
    out["best_epoch"] = res.best_epoch;
    out["best_val_acc"] = res.best_val_acc;
    out["early_stopped"] = res.early_stopped;
    out["history"] = history;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "multi-scale multi-column skip-connected CNN core";
    m.attr("__version__") = "1.0.0";

    py::register_exception<BlankImageError>(m, "BlankImageError", PyExc_ValueError);

    m.def(
        "preprocess",
        [](const DoubleArray& image, bool denoise, bool binarize) {
            PreprocessOptions opts;
            opts.denoise = denoise;
            opts.binarize = binarize;
            return image_from(preprocess(sample_from(image, 0), opts));
        },
        py::arg("image"), py::arg("denoise") = true, py::arg("binarize") = true,
        "Denoise, binarize, crop, square, resize to 32x32, scale to [-1, 1].");

    m.def(
        "augment",
        [](const DoubleArray& image, const std::string& kind, std::uint64_t seed,
           std::uint64_t index, std::uint64_t epoch) {
            std::mt19937_64 rng = sample_rng(seed, index, epoch);
            return image_from(augment(sample_from(image, 0), parse_augment(kind), rng));
        },
        py::arg("image"), py::arg("kind"), py::arg("seed") = 0, py::arg("index") = 0,
        py::arg("epoch") = 0,
        "Apply one augmentation with the per-sample stream for (seed, index, epoch).");

    py::class_<Network>(m, "Network")
        .def_static("stock", &net_stock, py::arg("size"), py::arg("variant") = "proposed",
                    py::arg("classes") = 10, py::arg("seed") = 1,
                    "Build a small or full network with deterministic init.")
        .def_static("from_text", &net_from_text, py::arg("config_text"), py::arg("seed") = 1)
        .def_property_readonly("config_text",
                               [](const Network& n) { return describe_config(n.config()); })
        .def_property_readonly("classes",
                               [](const Network& n) { return n.config().classes; })
        .def_property_readonly("descriptor_width",
                               [](const Network& n) { return n.config().final_fc; })
        .def_property_readonly(
            "parameter_count",
            [](const Network& n) { return parameter_count(n.config()); })
        .def(
            "forward",
            [](Network& n, const DoubleArray& images) {
                return array_from(n.forward(tensor_from(images), Mode::eval).logits);
            },
            py::arg("images"), "Eval-mode logits for an (n, 1, e, e) batch.")
        .def(
            "descriptors",
            [](Network& n, const DoubleArray& images) {
                return array_from(n.descriptors(tensor_from(images)));
            },
            py::arg("images"), "Eval-mode penultimate-layer descriptors.")
        .def(
            "save",
            [](Network& n, const std::string& path, int epoch) {
                save_checkpoint(path, n, epoch);
            },
            py::arg("path"), py::arg("epoch") = 0)
        .def_static(
            "load",
            [](const std::string& path) {
                LoadedNetwork loaded = load_checkpoint(path);
                return py::make_tuple(std::move(loaded.net), loaded.epoch);
            },
            py::arg("path"), "Returns (network, epoch).");

    m.def("train", &train_py, py::arg("net"), py::arg("images"), py::arg("labels"),
          py::arg("val_images") = py::none(), py::arg("val_labels") = py::none(),
          py::arg("max_epochs") = 10, py::arg("batch_size") = 500,
          py::arg("initial_lr") = TrainConfig{}.initial_lr,
          py::arg("decay") = TrainConfig{}.decay, py::arg("lr_floor") = TrainConfig{}.lr_floor,
          py::arg("dropout") = TrainConfig{}.dropout, py::arg("seed") = 1,
          py::arg("early_stop") = true, py::arg("metrics_csv") = std::string(),
          py::arg("checkpoint") = std::string(),
          "RMSProp training with the decayed-learning-rate schedule.");

    m.def(
        "evaluate",
        [](Network& net, const DoubleArray& images, const std::vector<int>& labels) {
            const EvalResult r = evaluate(net, dataset_from(images, labels));
            return py::make_tuple(r.loss, r.accuracy);
        },
        py::arg("net"), py::arg("images"), py::arg("labels"),
        "Eval-mode (loss, accuracy) over the whole set.");

    py::class_<SvmModel>(m, "SvmModel")
        .def_property_readonly("c", [](const SvmModel& s) { return s.c; })
        .def_property_readonly("gamma", [](const SvmModel& s) { return s.gamma; })
        .def_property_readonly("classes", [](const SvmModel& s) { return s.classes; })
        .def_property_readonly("support_vectors",
                               [](const SvmModel& s) { return s.support_count(); })
        .def(
            "predict",
            [](const SvmModel& s, const DoubleArray& desc) {
                return svm_predict(s, tensor_from(desc));
            },
            py::arg("descriptors"))
        .def(
            "decision",
            [](const SvmModel& s, const DoubleArray& row) {
                std::vector<double> x(row.data(), row.data() + row.size());
                return svm_decision(s, x);
            },
            py::arg("descriptor"), "Per-class decision values for one row.")
        .def("save", [](const SvmModel& s, const std::string& path) { save_svm(path, s); },
             py::arg("path"));

    m.def(
        "svm_fit",
        [](const DoubleArray& desc, const std::vector<int>& labels, double c, double gamma) {
            return svm_fit(tensor_from(desc), labels, c, gamma);
        },
        py::arg("descriptors"), py::arg("labels"), py::arg("c"), py::arg("gamma"),
        "One-vs-rest RBF SVM on standardized descriptors.");
    m.def("load_svm", &load_svm, py::arg("path"));
    m.def(
        "tune_svm",
        [](const DoubleArray& desc, const std::vector<int>& labels,
           const std::vector<double>& c_grid, const std::vector<double>& gamma_grid,
           int folds, std::uint64_t seed) {
            const SvmTuning t = tune(tensor_from(desc), labels,
                                     c_grid.empty() ? default_c_grid() : c_grid,
                                     gamma_grid.empty() ? default_gamma_grid() : gamma_grid,
                                     folds, seed);
            return py::make_tuple(t.c, t.gamma, t.accuracy);
        },
        py::arg("descriptors"), py::arg("labels"),
        py::arg("c_grid") = std::vector<double>(),
        py::arg("gamma_grid") = std::vector<double>(), py::arg("folds") = 5,
        py::arg("seed") = 0, "Grid search by k-fold CV; returns (c, gamma, cv_accuracy).");

    m.def(
        "write_descriptors",
        [](const std::string& path, const DoubleArray& desc, const std::vector<int>& labels) {
            write_descriptors(path, tensor_from(desc), labels);
        },
        py::arg("path"), py::arg("descriptors"), py::arg("labels"));
    m.def(
        "read_descriptors",
        [](const std::string& path) {
            auto [desc, labels] = read_descriptors(path);
            return py::make_tuple(array_from(desc), labels);
        },
        py::arg("path"), "Returns (descriptors, labels).");

    m.def(
        "run_experiment",
        [](const std::string& config_text) { return run(parse_experiment(config_text)).text; },
        py::arg("config_text"),
        "Run a full experiment from key=value text; returns the report text.");
}
