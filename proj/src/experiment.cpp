#include "mscnn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "kv.hpp"
#include "mscnn/checkpoint.hpp"

namespace fs = std::filesystem;

namespace mscnn {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
[[noreturn]] void io_fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string pct(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    fail("bad boolean for " + key + ": '" + value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    fail("bad number for " + key + ": '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    fail("bad integer for " + key + ": '" + value + "'");
}

std::vector<double> parse_grid(const std::string& key, const std::string& value) {
    std::vector<double> out;
    if (detail::trim(value).empty()) return out;
    for (const std::string& item : detail::split_list(value))
        out.push_back(parse_double(key, item));
    return out;
}

std::string grid_text(const std::vector<double>& grid) {
    std::string out;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (i) out += ",";
        out += num(grid[i]);
    }
    return out;
}

void require_exists(const std::string& what, const std::string& path) {
    if (path.empty()) fail(what + " is not set");
    if (!fs::exists(path)) fail(what + " does not exist: " + path);
}

NetworkConfig network_config_from(const ExperimentConfig& cfg, int classes) {
    NetworkConfig net;
    if (cfg.network == "small") {
        net = small_config(cfg.variant, classes);
    } else if (cfg.network == "full") {
        net = full_config(cfg.variant, classes);
    } else {
        std::ifstream in(cfg.network);
        if (!in) io_fail("cannot open network config: " + cfg.network);
        std::stringstream text;
        text << in.rdbuf();
        net = parse_config_text(text.str());
        // the experiment picks the wiring and the head width
        net.variant = cfg.variant;
        net.classes = classes;
    }
    return net;
}

struct LoadedSplit {
    Dataset data;
    int max_label = -1;
};

LoadedSplit load_split(const ExperimentConfig& cfg, const std::string& split) {
    std::vector<Sample> raw;
    if (cfg.data_kind == "idx") {
        raw = split == "train" ? load_idx(cfg.train_images, cfg.train_labels)
                               : load_idx(cfg.test_images, cfg.test_labels);
    } else {
        raw = load_image_dir(split == "train" ? cfg.train_root : cfg.test_root);
    }
    if (!cfg.manifest.empty()) check_manifest(load_manifest(cfg.manifest), split, raw);

    LoadedSplit out;
    std::vector<Sample> ready;
    ready.reserve(raw.size());
    for (const Sample& s : raw) {
        ready.push_back(preprocess(s));
        out.max_label = std::max(out.max_label, s.label);
    }
    out.data = pack(ready);
    return out;
}

bool has_test_split(const ExperimentConfig& cfg) {
    return cfg.data_kind == "idx" ? !cfg.test_images.empty() : !cfg.test_root.empty();
}

BatchHook make_augment_hook(Augment kind, std::uint64_t seed) {
    if (kind == Augment::none) return {};
    return [kind, seed](const Tensor& images, const std::vector<int>& rows, int epoch) {
        const Shape& s = images.shape();
        const int e = s[2];
        const std::size_t elems = static_cast<std::size_t>(e) * e;
        Tensor out = Tensor::zeros(s);
        Sample cell;
        cell.width = e;
        cell.height = e;
        cell.label = 0;
        cell.source = "batch";
        for (int i = 0; i < s[0]; ++i) {
            cell.pixels.assign(images.data() + static_cast<std::size_t>(i) * elems,
                               images.data() + static_cast<std::size_t>(i + 1) * elems);
            std::mt19937_64 rng = sample_rng(seed, rows[static_cast<std::size_t>(i)], epoch);
            const Sample aug = augment(cell, kind, rng);
            std::copy(aug.pixels.begin(), aug.pixels.end(),
                      out.data() + static_cast<std::size_t>(i) * elems);
        }
        return out;
    };
}

std::vector<int> predicted_labels(const Tensor& logits) {
    const int n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        out[static_cast<std::size_t>(i)] =
            static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

Confusion tally(const std::vector<int>& truth, const std::vector<int>& pred, int classes) {
    Confusion c(classes);
    for (std::size_t i = 0; i < truth.size(); ++i) ++c.at(truth[i], pred[i]);
    return c;
}

void add_counts(Confusion& into, const Confusion& from) {
    for (std::size_t i = 0; i < from.counts.size(); ++i) into.counts[i] += from.counts[i];
}

void reset_file(const std::string& path) {
    std::error_code ec;
    fs::remove(path, ec);
}

std::string confusion_text(const Confusion& c) {
    std::ostringstream os;
    for (int t = 0; t < c.classes; ++t) {
        for (int p = 0; p < c.classes; ++p) {
            if (p) os << ' ';
            os << c.at(t, p);
        }
        os << '\n';
    }
    return os.str();
}

struct Moments {
    double best = 0.0, mean = 0.0, stdev = 0.0;
    int best_at = 0;
};

Moments moments(const std::vector<double>& xs) {
    Moments m;
    m.best = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (xs[i] > m.best) {
            m.best = xs[i];
            m.best_at = static_cast<int>(i);
        }
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    for (double x : xs) m.stdev += (x - m.mean) * (x - m.mean);
    m.stdev = std::sqrt(m.stdev / static_cast<double>(xs.size()));
    return m;
}

}  // namespace

CvMode parse_cv(const std::string& name) {
    if (name == "random-val") return CvMode::random_val;
    if (name == "5-fold") return CvMode::kfold5;
    if (name == "10-fold") return CvMode::kfold10;
    fail("unknown cv mode '" + name + "' (expected random-val, 5-fold, 10-fold)");
}

std::string to_string(CvMode mode) {
    switch (mode) {
        case CvMode::random_val: return "random-val";
        case CvMode::kfold5: return "5-fold";
        case CvMode::kfold10: return "10-fold";
    }
    fail("unknown cv mode");
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "data.kind") {
        if (value != "idx" && value != "dir") fail("data.kind must be idx or dir, got " + value);
        cfg.data_kind = value;
    } else if (key == "data.images") {
        cfg.train_images = value;
    } else if (key == "data.labels") {
        cfg.train_labels = value;
    } else if (key == "data.root") {
        cfg.train_root = value;
    } else if (key == "data.test.images") {
        cfg.test_images = value;
    } else if (key == "data.test.labels") {
        cfg.test_labels = value;
    } else if (key == "data.test.root") {
        cfg.test_root = value;
    } else if (key == "data.manifest") {
        cfg.manifest = value;
    } else if (key == "classes") {
        cfg.classes = parse_int(key, value);
    } else if (key == "network") {
        cfg.network = value;
    } else if (key == "variant") {
        cfg.variant = variant_from_name(value);
    } else if (key == "train.initial_lr") {
        cfg.train.initial_lr = parse_double(key, value);
    } else if (key == "train.decay") {
        cfg.train.decay = parse_double(key, value);
    } else if (key == "train.lr_floor") {
        cfg.train.lr_floor = parse_double(key, value);
    } else if (key == "train.dropout") {
        cfg.train.dropout = parse_double(key, value);
    } else if (key == "train.batch_size") {
        cfg.train.batch_size = parse_int(key, value);
    } else if (key == "train.max_epochs") {
        cfg.train.max_epochs = parse_int(key, value);
    } else if (key == "train.beta") {
        cfg.train.beta = parse_double(key, value);
    } else if (key == "train.eps") {
        cfg.train.eps = parse_double(key, value);
    } else if (key == "seed") {
        cfg.train.seed = static_cast<std::uint64_t>(std::stoull(value));
    } else if (key == "augment") {
        cfg.augment = parse_augment(value);
    } else if (key == "cv") {
        cfg.cv = parse_cv(value);
    } else if (key == "val_fraction") {
        cfg.val_fraction = parse_double(key, value);
    } else if (key == "separate") {
        cfg.separate_columns = parse_bool(key, value);
    } else if (key == "svm.enable") {
        cfg.svm_enable = parse_bool(key, value);
    } else if (key == "svm.c_grid") {
        cfg.c_grid = parse_grid(key, value);
    } else if (key == "svm.gamma_grid") {
        cfg.gamma_grid = parse_grid(key, value);
    } else if (key == "svm.folds") {
        cfg.svm_folds = parse_int(key, value);
    } else if (key == "repeats") {
        cfg.repeats = parse_int(key, value);
    } else if (key == "out") {
        cfg.out_dir = value;
    } else {
        fail("unknown experiment key '" + key + "'");
    }
}

ExperimentConfig parse_experiment(const std::string& text) {
    ExperimentConfig cfg;
    for (const auto& [key, value] : detail::parse_kv(text)) apply_override(cfg, key, value);
    return cfg;
}

std::string describe_experiment(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "data.kind=" << cfg.data_kind << '\n';
    os << "data.images=" << cfg.train_images << '\n';
    os << "data.labels=" << cfg.train_labels << '\n';
    os << "data.root=" << cfg.train_root << '\n';
    os << "data.test.images=" << cfg.test_images << '\n';
    os << "data.test.labels=" << cfg.test_labels << '\n';
    os << "data.test.root=" << cfg.test_root << '\n';
    os << "data.manifest=" << cfg.manifest << '\n';
    os << "classes=" << cfg.classes << '\n';
    os << "network=" << cfg.network << '\n';
    os << "variant=" << variant_name(cfg.variant) << '\n';
    os << "train.initial_lr=" << num(cfg.train.initial_lr) << '\n';
    os << "train.decay=" << num(cfg.train.decay) << '\n';
    os << "train.lr_floor=" << num(cfg.train.lr_floor) << '\n';
    os << "train.dropout=" << num(cfg.train.dropout) << '\n';
    os << "train.batch_size=" << cfg.train.batch_size << '\n';
    os << "train.max_epochs=" << cfg.train.max_epochs << '\n';
    os << "train.beta=" << num(cfg.train.beta) << '\n';
    os << "train.eps=" << num(cfg.train.eps) << '\n';
    os << "seed=" << cfg.train.seed << '\n';
    os << "augment=" << to_string(cfg.augment) << '\n';
    os << "cv=" << to_string(cfg.cv) << '\n';
    os << "val_fraction=" << num(cfg.val_fraction) << '\n';
    os << "separate=" << (cfg.separate_columns ? "true" : "false") << '\n';
    os << "svm.enable=" << (cfg.svm_enable ? "true" : "false") << '\n';
    os << "svm.c_grid=" << grid_text(cfg.c_grid.empty() ? default_c_grid() : cfg.c_grid) << '\n';
    os << "svm.gamma_grid="
       << grid_text(cfg.gamma_grid.empty() ? default_gamma_grid() : cfg.gamma_grid) << '\n';
    os << "svm.folds=" << cfg.svm_folds << '\n';
    os << "repeats=" << cfg.repeats << '\n';
    os << "out=" << cfg.out_dir << '\n';
    return os.str();
}

void validate_experiment(const ExperimentConfig& cfg) {
    if (cfg.data_kind == "idx") {
        require_exists("data.images", cfg.train_images);
        require_exists("data.labels", cfg.train_labels);
        if (cfg.test_images.empty() != cfg.test_labels.empty())
            fail("test split needs both data.test.images and data.test.labels");
        if (!cfg.test_images.empty()) {
            require_exists("data.test.images", cfg.test_images);
            require_exists("data.test.labels", cfg.test_labels);
        }
    } else if (cfg.data_kind == "dir") {
        require_exists("data.root", cfg.train_root);
        if (!cfg.test_root.empty()) require_exists("data.test.root", cfg.test_root);
    } else {
        fail("data.kind must be idx or dir, got " + cfg.data_kind);
    }
    if (!cfg.manifest.empty()) require_exists("data.manifest", cfg.manifest);
    if (cfg.network != "small" && cfg.network != "full")
        require_exists("network", cfg.network);
    if (cfg.classes < 0) fail("classes must be non-negative");
    if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0))
        fail("val_fraction must be in [0, 1)");
    if (cfg.svm_folds < 2) fail("svm.folds must be at least 2");
    if (cfg.repeats < 1) fail("repeats must be at least 1");
    if (cfg.out_dir.empty()) fail("out directory is not set");
}

int Confusion::trace() const {
    int t = 0;
    for (int i = 0; i < classes; ++i) t += at(i, i);
    return t;
}

int Confusion::total() const {
    int t = 0;
    for (int c : counts) t += c;
    return t;
}

int Confusion::row_sum(int t) const {
    int s = 0;
    for (int p = 0; p < classes; ++p) s += at(t, p);
    return s;
}

EvalReport evaluate_confusion(Network& net, const Dataset& data, int batch_size) {
    const int n = data.size();
    if (n == 0) fail("evaluate: empty dataset");
    if (batch_size < 1) fail("evaluate: batch size must be positive");
    const int classes = net.config().classes;
    for (int l : data.labels)
        if (l < 0 || l >= classes)
            fail("evaluate: dataset label " + std::to_string(l) + " does not fit the network's " +
                 std::to_string(classes) + " classes");

    EvalReport out;
    out.confusion = Confusion(classes);
    for (int begin = 0; begin < n; begin += batch_size) {
        const int len = std::min(batch_size, n - begin);
        std::vector<int> rows(static_cast<std::size_t>(len));
        std::iota(rows.begin(), rows.end(), begin);
        const Dataset part = data.gather(rows);
        const Tensor logits = net.forward(part.images, Mode::eval).logits;
        const std::vector<int> pred = predicted_labels(logits);
        for (int i = 0; i < len; ++i)
            ++out.confusion.at(part.labels[static_cast<std::size_t>(i)],
                               pred[static_cast<std::size_t>(i)]);
    }
    out.accuracy = static_cast<double>(out.confusion.trace()) / n;
    return out;
}

EvalReport evaluate_checkpoint(const std::string& checkpoint_path, const Dataset& data) {
    LoadedNetwork loaded = load_checkpoint(checkpoint_path);
    return evaluate_confusion(loaded.net, data);
}

Tensor batch_descriptors(Network& net, const Dataset& data, int batch_size) {
    const int n = data.size();
    if (n == 0) fail("batch_descriptors: empty dataset");
    const int width = net.config().final_fc;
    Tensor out = Tensor::zeros({n, width});
    for (int begin = 0; begin < n; begin += batch_size) {
        const int len = std::min(batch_size, n - begin);
        std::vector<int> rows(static_cast<std::size_t>(len));
        std::iota(rows.begin(), rows.end(), begin);
        const Dataset part = data.gather(rows);
        const Tensor d = net.descriptors(part.images);
        std::memcpy(out.data() + static_cast<std::size_t>(begin) * width, d.data(),
                    static_cast<std::size_t>(len) * width * sizeof(double));
    }
    return out;
}

namespace {
constexpr char kDescMagic[4] = {'M', 'S', 'C', 'D'};
constexpr std::uint32_t kDescVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t take_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        io_fail("truncated descriptor file: " + path);
    return v;
}
}  // namespace

void write_descriptors(const std::string& path, const Tensor& descriptors,
                       const std::vector<int>& labels) {
    if (descriptors.ndim() != 2)
        fail("descriptors must be (n, width), got " + shape_str(descriptors.shape()));
    const int n = descriptors.dim(0), width = descriptors.dim(1);
    if (static_cast<int>(labels.size()) != n)
        fail("descriptor file needs one label per row: " + std::to_string(labels.size()) +
             " labels for " + std::to_string(n) + " rows");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) io_fail("cannot open descriptor file for writing: " + path);
    out.write(kDescMagic, sizeof kDescMagic);
    put_u32(out, kDescVersion);
    put_u32(out, static_cast<std::uint32_t>(n));
    put_u32(out, static_cast<std::uint32_t>(width));
    for (int l : labels) {
        const std::int32_t v = l;
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    out.write(reinterpret_cast<const char*>(descriptors.data()),
              static_cast<std::streamsize>(static_cast<std::size_t>(n) * width * sizeof(double)));
    out.flush();
    if (!out) io_fail("failed to write descriptor file: " + path);
}

std::pair<Tensor, std::vector<int>> read_descriptors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail("cannot open descriptor file: " + path);
    char magic[4] = {};
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kDescMagic, sizeof magic) != 0)
        io_fail("not a descriptor file: " + path);
    const std::uint32_t version = take_u32(in, path);
    if (version != kDescVersion)
        io_fail("unsupported descriptor file version " + std::to_string(version) + ": " + path);
    const std::uint32_t n = take_u32(in, path);
    const std::uint32_t width = take_u32(in, path);
    if (n == 0 || width == 0) io_fail("empty descriptor file: " + path);

    std::vector<int> labels(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::int32_t v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
            io_fail("truncated descriptor file: " + path);
        labels[i] = v;
    }
    Tensor data = Tensor::zeros({static_cast<int>(n), static_cast<int>(width)});
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(static_cast<std::size_t>(n) * width *
                                              sizeof(double))))
        io_fail("truncated descriptor file: " + path);
    return {std::move(data), std::move(labels)};
}

void extract_features(const std::string& checkpoint_path, const Dataset& data,
                      const std::string& out_path) {
    LoadedNetwork loaded = load_checkpoint(checkpoint_path);
    const Tensor desc = batch_descriptors(loaded.net, data);
    write_descriptors(out_path, desc, data.labels);
}

SvmReadout fit_svm_readout(const Tensor& descriptors, const std::vector<int>& labels,
                           const std::vector<double>& c_grid,
                           const std::vector<double>& gamma_grid, int folds,
                           std::uint64_t seed) {
    const std::vector<double> cs = c_grid.empty() ? default_c_grid() : c_grid;
    const std::vector<double> gs = gamma_grid.empty() ? default_gamma_grid() : gamma_grid;
    SvmReadout out;
    out.tuning = tune(descriptors, labels, cs, gs, folds, seed);
    out.model = svm_fit(descriptors, labels, out.tuning.c, out.tuning.gamma);
    return out;
}

namespace {

// Everything one repeat needs to run.
struct TrialSetup {
    const ExperimentConfig* cfg;
    NetworkConfig netcfg;
    const Dataset* train_full;
    const Dataset* test;  // null without a test split
    int classes;
    std::string out_dir;  // per-repeat directory
};

Network best_network_after(Network& trained, const std::string& checkpoint_path,
                           bool already_restored) {
    // trainers leave the net at its final epoch; the best epoch lives in the
    // checkpoint unless the trainer restored it in place
    if (already_restored || checkpoint_path.empty()) return std::move(trained);
    return load_checkpoint(checkpoint_path).net;
}

void svm_head(const TrialSetup& s, Network& net, const Dataset& fit_data,
              const Dataset& eval_data, std::uint64_t seed, TrialResult& t,
              const std::string& model_path) {
    const Tensor fit_desc = batch_descriptors(net, fit_data);
    const SvmReadout readout = fit_svm_readout(fit_desc, fit_data.labels, s.cfg->c_grid,
                                               s.cfg->gamma_grid, s.cfg->svm_folds, seed);
    t.svm_c = readout.tuning.c;
    t.svm_gamma = readout.tuning.gamma;
    t.svm_cv_accuracy = readout.tuning.accuracy;
    const Tensor eval_desc = batch_descriptors(net, eval_data);
    const std::vector<int> pred = svm_predict(readout.model, eval_desc);
    t.confusion_svm = tally(eval_data.labels, pred, s.classes);
    t.svm_accuracy = static_cast<double>(t.confusion_svm.trace()) / eval_data.size();
    if (!model_path.empty()) save_svm(model_path, readout.model);
}

TrainResult run_fit(const ExperimentConfig& cfg, Network& net, const Dataset& fit,
                    const TrainConfig& tcfg, const TrainOptions& opts) {
    return cfg.separate_columns ? train_columns_separately(net, fit, tcfg, opts)
                                : train(net, fit, tcfg, opts);
}

TrialResult run_random_val(const TrialSetup& s, std::uint64_t seed) {
    const ExperimentConfig& cfg = *s.cfg;
    TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;
    const int n = s.train_full->size();

    double frac = cfg.val_fraction;
    if (frac == 0.0)
        frac = s.test ? static_cast<double>(s.test->size()) / n : 0.2;

    TrainOptions opts;
    opts.metrics_csv = s.out_dir + "/metrics.csv";
    opts.checkpoint_path = s.out_dir + "/checkpoint.bin";
    opts.augment = make_augment_hook(cfg.augment, seed);
    reset_file(opts.metrics_csv);

    TrialResult t;
    t.seed = seed;

    if (s.test && !cfg.separate_columns) {
        // two-phase protocol: pick the epoch on a held-out split, retrain on
        // everything for exactly that many epochs, score on the test set
        ReplayResult replay = epoch_replay_fit(
            [&] { return build_network(s.netcfg, seed); }, *s.train_full, frac, tcfg, opts);
        t.best_epoch = replay.best_epoch;
        const EvalReport er = evaluate_confusion(replay.net, *s.test);
        t.softmax_accuracy = er.accuracy;
        t.confusion_softmax = er.confusion;
        if (cfg.svm_enable)
            svm_head(s, replay.net, *s.train_full, *s.test, seed, t, s.out_dir + "/svm.bin");
        return t;
    }

    // hold out a validation split; score on the test set when there is one,
    // otherwise on the held-out split itself
    const int val_n = static_cast<int>(std::lround(frac * n));
    if (val_n < 1 || val_n >= n)
        fail("val_fraction " + num(frac) + " gives an unusable split of " + std::to_string(n));
    std::mt19937_64 split_rng(seed);
    const std::vector<int> order = shuffle_indices(n, split_rng);
    const Dataset val =
        s.train_full->gather(std::vector<int>(order.begin(), order.begin() + val_n));
    const Dataset fit =
        s.train_full->gather(std::vector<int>(order.begin() + val_n, order.end()));

    TrainOptions fit_opts = opts;
    fit_opts.val = &val;
    Network net = build_network(s.netcfg, seed);
    const TrainResult res = run_fit(cfg, net, fit, tcfg, fit_opts);
    t.best_epoch = res.best_epoch;

    Network best = best_network_after(net, fit_opts.checkpoint_path, cfg.separate_columns);
    const Dataset& eval_set = s.test ? *s.test : val;
    const EvalReport er = evaluate_confusion(best, eval_set);
    t.softmax_accuracy = er.accuracy;
    t.confusion_softmax = er.confusion;
    if (cfg.svm_enable) svm_head(s, best, fit, eval_set, seed, t, s.out_dir + "/svm.bin");
    return t;
}

TrialResult run_kfold(const TrialSetup& s, std::uint64_t seed, int k) {
    const ExperimentConfig& cfg = *s.cfg;
    TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;

    const std::vector<Fold> folds = kfold_split(s.train_full->size(), k, seed);
    TrialResult t;
    t.seed = seed;
    t.confusion_softmax = Confusion(s.classes);
    t.confusion_svm = Confusion(s.classes);

    double best_fold_acc = -1.0;
    double svm_c = 0.0, svm_gamma = 0.0, svm_cv = 0.0;
    bool svm_tuned = false;

    for (std::size_t fi = 0; fi < folds.size(); ++fi) {
        const Dataset fit = s.train_full->gather(folds[fi].train);
        const Dataset val = s.train_full->gather(folds[fi].val);

        TrainOptions opts;
        opts.val = &val;
        opts.metrics_csv = s.out_dir + "/metrics_fold" + std::to_string(fi + 1) + ".csv";
        opts.checkpoint_path = s.out_dir + "/checkpoint_fold" + std::to_string(fi + 1) + ".bin";
        opts.augment = make_augment_hook(cfg.augment, seed);
        reset_file(opts.metrics_csv);

        Network net = build_network(s.netcfg, seed);
        const TrainResult res = run_fit(cfg, net, fit, tcfg, opts);
        Network best = best_network_after(net, opts.checkpoint_path, cfg.separate_columns);

        const EvalReport er = evaluate_confusion(best, val);
        t.fold_accuracies.push_back(er.accuracy);
        add_counts(t.confusion_softmax, er.confusion);
        if (er.accuracy > best_fold_acc) {
            best_fold_acc = er.accuracy;
            t.best_epoch = res.best_epoch;
        }

        if (cfg.svm_enable) {
            const Tensor fit_desc = batch_descriptors(best, fit);
            if (!svm_tuned) {
                // tuned once, on the first fold; later folds reuse (C, gamma)
                const SvmReadout readout =
                    fit_svm_readout(fit_desc, fit.labels, cfg.c_grid, cfg.gamma_grid,
                                    cfg.svm_folds, seed);
                svm_c = readout.tuning.c;
                svm_gamma = readout.tuning.gamma;
                svm_cv = readout.tuning.accuracy;
                svm_tuned = true;
            }
            const SvmModel model = svm_fit(fit_desc, fit.labels, svm_c, svm_gamma);
            const Tensor val_desc = batch_descriptors(best, val);
            const std::vector<int> pred = svm_predict(model, val_desc);
            add_counts(t.confusion_svm, tally(val.labels, pred, s.classes));
        }
    }

    t.softmax_accuracy =
        static_cast<double>(t.confusion_softmax.trace()) / s.train_full->size();
    if (cfg.svm_enable) {
        t.svm_accuracy = static_cast<double>(t.confusion_svm.trace()) / s.train_full->size();
        t.svm_c = svm_c;
        t.svm_gamma = svm_gamma;
        t.svm_cv_accuracy = svm_cv;
    }
    return t;
}

}  // namespace

ExperimentReport run(const ExperimentConfig& cfg) {
    validate_experiment(cfg);

    ExperimentReport report;
    report.config_echo = describe_experiment(cfg);

    const LoadedSplit train_split = load_split(cfg, "train");
    LoadedSplit test_split;
    const bool with_test = has_test_split(cfg);
    if (with_test) test_split = load_split(cfg, "test");

    int classes = std::max(train_split.max_label, test_split.max_label) + 1;
    if (cfg.classes > 0) {
        if (classes > cfg.classes)
            fail("dataset labels need " + std::to_string(classes) + " classes, config says " +
                 std::to_string(cfg.classes));
        classes = cfg.classes;
    }
    if (classes < 2) fail("dataset has fewer than two classes");

    report.classes = classes;
    report.train_samples = train_split.data.size();
    report.test_samples = with_test ? test_split.data.size() : 0;

    TrialSetup setup;
    setup.cfg = &cfg;
    setup.netcfg = network_config_from(cfg, classes);
    setup.train_full = &train_split.data;
    setup.test = with_test ? &test_split.data : nullptr;
    setup.classes = classes;

    for (int r = 0; r < cfg.repeats; ++r) {
        const std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(r);
        setup.out_dir = cfg.out_dir + "/repeat" + std::to_string(r + 1);
        fs::create_directories(setup.out_dir);
        switch (cfg.cv) {
            case CvMode::random_val:
                report.trials.push_back(run_random_val(setup, seed));
                break;
            case CvMode::kfold5:
                report.trials.push_back(run_kfold(setup, seed, 5));
                break;
            case CvMode::kfold10:
                report.trials.push_back(run_kfold(setup, seed, 10));
                break;
        }
    }

    std::vector<double> softmax_accs, svm_accs;
    for (const TrialResult& t : report.trials) {
        softmax_accs.push_back(t.softmax_accuracy);
        if (cfg.svm_enable) svm_accs.push_back(t.svm_accuracy);
    }
    const Moments sm = moments(softmax_accs);
    report.best_trial = sm.best_at;
    report.best_softmax = sm.best;
    report.mean_softmax = sm.mean;
    report.std_softmax = sm.stdev;
    if (cfg.svm_enable) {
        const Moments vm = moments(svm_accs);
        report.best_svm = vm.best;
        report.mean_svm = vm.mean;
        report.std_svm = vm.stdev;
    }

    std::ostringstream os;
    os << "experiment report\n";
    os << "=================\n\n";
    os << "[config]\n" << report.config_echo << '\n';
    os << "[data]\n";
    os << "classes=" << report.classes << '\n';
    os << "train_samples=" << report.train_samples << '\n';
    if (with_test) os << "test_samples=" << report.test_samples << '\n';
    os << "scored_on="
       << (cfg.cv != CvMode::random_val ? "cross-validation"
                                        : (with_test ? "test" : "validation"))
       << '\n';
    os << '\n';

    for (std::size_t i = 0; i < report.trials.size(); ++i) {
        const TrialResult& t = report.trials[i];
        os << "[repeat " << i + 1 << "]\n";
        os << "seed=" << t.seed << '\n';
        os << "best_epoch=" << t.best_epoch << '\n';
        if (!t.fold_accuracies.empty()) {
            os << "fold_accuracies=";
            for (std::size_t f = 0; f < t.fold_accuracies.size(); ++f) {
                if (f) os << ',';
                os << pct(t.fold_accuracies[f]);
            }
            os << '\n';
        }
        os << "softmax_accuracy=" << pct(t.softmax_accuracy) << '\n';
        if (cfg.svm_enable) {
            os << "svm_c=" << num(t.svm_c) << '\n';
            os << "svm_gamma=" << num(t.svm_gamma) << '\n';
            os << "svm_cv_accuracy=" << pct(t.svm_cv_accuracy) << '\n';
            os << "svm_accuracy=" << pct(t.svm_accuracy) << '\n';
        }
        os << '\n';
    }

    os << "[summary]\n";
    os << "repeats=" << report.trials.size() << '\n';
    os << "best_repeat=" << report.best_trial + 1 << '\n';
    os << "best_softmax_accuracy=" << pct(report.best_softmax) << '\n';
    os << "mean_softmax_accuracy=" << pct(report.mean_softmax) << '\n';
    os << "std_softmax_accuracy=" << pct(report.std_softmax) << '\n';
    if (cfg.svm_enable) {
        os << "best_svm_accuracy=" << pct(report.best_svm) << '\n';
        os << "mean_svm_accuracy=" << pct(report.mean_svm) << '\n';
        os << "std_svm_accuracy=" << pct(report.std_svm) << '\n';
    }
    os << '\n';

    const TrialResult& best = report.trials[static_cast<std::size_t>(report.best_trial)];
    os << "[confusion softmax, best repeat]\n" << confusion_text(best.confusion_softmax);
    if (cfg.svm_enable) os << "\n[confusion svm, best repeat]\n"
                           << confusion_text(best.confusion_svm);
    report.text = os.str();

    fs::create_directories(cfg.out_dir);
    std::ofstream out(cfg.out_dir + "/report.txt", std::ios::trunc);
    if (!out) io_fail("cannot write report: " + cfg.out_dir + "/report.txt");
    out << report.text;
    return report;
}

std::string ablate(const ExperimentConfig& base) {
    validate_experiment(base);
    const Variant variants[] = {Variant::proposed, Variant::local_only, Variant::baseline1,
                                Variant::baseline2, Variant::baseline3};
    std::ostringstream os;
    os << "variant      parameters  best_softmax  best_svm\n";
    for (Variant v : variants) {
        ExperimentConfig sub = base;
        sub.variant = v;
        sub.out_dir = base.out_dir + "/" + variant_name(v);
        const ExperimentReport rep = run(sub);
        ExperimentConfig probe = sub;
        char line[128];
        std::snprintf(line, sizeof line, "%-12s %10zu  %12s  %8s\n", variant_name(v),
                      parameter_count(network_config_from(probe, rep.classes)),
                      pct(rep.best_softmax).c_str(),
                      sub.svm_enable ? pct(rep.best_svm).c_str() : "-");
        os << line;
    }
    const std::string text = os.str();
    fs::create_directories(base.out_dir);
    std::ofstream out(base.out_dir + "/ablation.txt", std::ios::trunc);
    if (!out) io_fail("cannot write ablation table: " + base.out_dir + "/ablation.txt");
    out << text;
    return text;
}

}  // namespace mscnn
