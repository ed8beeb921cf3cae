// Command-line front end: train/evaluate/extract-features/svm-fit/ablate.
// Every subcommand is a thin shell over the library; all policy lives there.

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mscnn/experiment.hpp"

using namespace mscnn;

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string trimmed(const std::string& s) {
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

std::vector<double> parse_grid_arg(const std::string& name, const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            out.push_back(std::stod(trimmed(item)));
        } catch (const std::exception&) {
            throw std::invalid_argument(name + " needs comma-separated numbers, got '" + text +
                                        "'");
        }
    }
    return out;
}

// Config file first, then --set pairs, then the dedicated flags; later
// sources win.
struct ExpArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string seed, variant, cv, augment, repeats, out;
};

void add_exp_flags(CLI::App* cmd, ExpArgs& a) {
    cmd->add_option("--config", a.config, "experiment config file, key=value lines");
    cmd->add_option("--set", a.sets, "override one config key, key=value (repeatable)");
    cmd->add_option("--seed", a.seed, "base seed; repeat r adds r");
    cmd->add_option("--variant", a.variant,
                    "wiring: proposed|local_only|baseline1|baseline2|baseline3");
    cmd->add_option("--cv", a.cv, "protocol: random-val|5-fold|10-fold");
    cmd->add_option("--augment", a.augment,
                    "none|jitter|hflip|vflip|random_crop|rotation|affine");
    cmd->add_option("--repeats", a.repeats, "independent repeats");
    cmd->add_option("--out", a.out, "output directory");
}

ExperimentConfig resolve(const ExpArgs& a) {
    ExperimentConfig cfg;
    if (!a.config.empty()) cfg = parse_experiment(read_text(a.config));
    for (const std::string& s : a.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set needs key=value, got '" + s + "'");
        apply_override(cfg, trimmed(s.substr(0, eq)), trimmed(s.substr(eq + 1)));
    }
    if (!a.seed.empty()) apply_override(cfg, "seed", a.seed);
    if (!a.variant.empty()) apply_override(cfg, "variant", a.variant);
    if (!a.cv.empty()) apply_override(cfg, "cv", a.cv);
    if (!a.augment.empty()) apply_override(cfg, "augment", a.augment);
    if (!a.repeats.empty()) apply_override(cfg, "repeats", a.repeats);
    if (!a.out.empty()) apply_override(cfg, "out", a.out);
    return cfg;
}

struct DataArgs {
    std::string images, labels, root, manifest, split = "test";
};

void add_data_flags(CLI::App* cmd, DataArgs& d) {
    cmd->add_option("--images", d.images, "IDX image file");
    cmd->add_option("--labels", d.labels, "IDX label file");
    cmd->add_option("--root", d.root, "directory of class subdirectories (PNG/BMP/PGM)");
    cmd->add_option("--manifest", d.manifest, "manifest to check the data against");
    cmd->add_option("--split", d.split, "manifest split name (default test)");
}

Dataset load_packed(const DataArgs& d) {
    const bool idx = !d.images.empty() || !d.labels.empty();
    if (idx && (d.images.empty() || d.labels.empty()))
        throw std::invalid_argument("IDX input needs both --images and --labels");
    if (idx == !d.root.empty())
        throw std::invalid_argument("give either --images/--labels or --root");
    std::vector<Sample> raw = idx ? load_idx(d.images, d.labels) : load_image_dir(d.root);
    if (!d.manifest.empty()) check_manifest(load_manifest(d.manifest), d.split, raw);
    std::vector<Sample> ready;
    ready.reserve(raw.size());
    for (const Sample& s : raw) ready.push_back(preprocess(s));
    return pack(ready);
}

void print_confusion(const Confusion& c) {
    std::cout << "confusion (row = true class):\n";
    for (int t = 0; t < c.classes; ++t) {
        for (int p = 0; p < c.classes; ++p) {
            if (p) std::cout << ' ';
            std::cout << c.at(t, p);
        }
        std::cout << '\n';
    }
}

int cmd_train(const ExpArgs& args) {
    const ExperimentConfig cfg = resolve(args);
    const ExperimentReport rep = run(cfg);
    std::cout << rep.text;
    std::cout << "report written to " << cfg.out_dir << "/report.txt\n";
    return 0;
}

int cmd_ablate(const ExpArgs& args) {
    const ExperimentConfig cfg = resolve(args);
    std::cout << ablate(cfg);
    std::cout << "table written to " << cfg.out_dir << "/ablation.txt\n";
    return 0;
}

int cmd_evaluate(const std::string& checkpoint, const DataArgs& data, int batch) {
    const Dataset set = load_packed(data);
    const EvalReport rep = evaluate_checkpoint(checkpoint, set);
    std::cout << "samples=" << set.size() << '\n';
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.6f", rep.accuracy);
    std::cout << "accuracy=" << acc << '\n';
    print_confusion(rep.confusion);
    (void)batch;
    return 0;
}

int cmd_extract(const std::string& checkpoint, const DataArgs& data, const std::string& out) {
    const Dataset set = load_packed(data);
    extract_features(checkpoint, set, out);
    std::cout << "wrote " << set.size() << " descriptors to " << out << '\n';
    return 0;
}

int cmd_svm_fit(const std::string& features, const std::string& test_features,
                const std::string& c_arg, const std::string& gamma_arg, int folds,
                std::uint64_t seed, const std::string& out) {
    const auto [desc, labels] = read_descriptors(features);
    const std::vector<double> cs =
        c_arg.empty() ? std::vector<double>{} : parse_grid_arg("--c-grid", c_arg);
    const std::vector<double> gs =
        gamma_arg.empty() ? std::vector<double>{} : parse_grid_arg("--gamma-grid", gamma_arg);
    const SvmReadout readout = fit_svm_readout(desc, labels, cs, gs, folds, seed);
    save_svm(out, readout.model);

    char buf[96];
    std::snprintf(buf, sizeof buf, "c=%g\ngamma=%g\ncv_accuracy=%.6f\nsupport_vectors=%d\n",
                  readout.tuning.c, readout.tuning.gamma, readout.tuning.accuracy,
                  readout.model.support_count());
    std::cout << buf << "model written to " << out << '\n';

    if (!test_features.empty()) {
        const auto [test_desc, test_labels] = read_descriptors(test_features);
        const std::vector<int> pred = svm_predict(readout.model, test_desc);
        int correct = 0;
        for (std::size_t i = 0; i < test_labels.size(); ++i)
            correct += pred[i] == test_labels[i];
        std::snprintf(buf, sizeof buf, "test_accuracy=%.6f\n",
                      static_cast<double>(correct) / test_labels.size());
        std::cout << buf;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-column skip-connected CNN experiments"};
    app.require_subcommand(1);

    ExpArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "run the configured experiment");
    add_exp_flags(train_cmd, train_args);

    ExpArgs ablate_args;
    CLI::App* ablate_cmd =
        app.add_subcommand("ablate", "run every wiring variant on the same budget");
    add_exp_flags(ablate_cmd, ablate_args);

    std::string eval_checkpoint;
    DataArgs eval_data;
    int eval_batch = 500;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "trained checkpoint")->required();
    add_data_flags(eval_cmd, eval_data);
    eval_cmd->add_option("--batch", eval_batch, "evaluation batch size");

    std::string feat_checkpoint, feat_out;
    DataArgs feat_data;
    CLI::App* feat_cmd =
        app.add_subcommand("extract-features", "write penultimate-layer descriptors");
    feat_cmd->add_option("--checkpoint", feat_checkpoint, "trained checkpoint")->required();
    add_data_flags(feat_cmd, feat_data);
    feat_cmd->add_option("--out", feat_out, "descriptor file to write")->required();

    std::string svm_features, svm_test_features, svm_c, svm_gamma, svm_out;
    int svm_folds = 5;
    std::uint64_t svm_seed = 0;
    CLI::App* svm_cmd =
        app.add_subcommand("svm-fit", "tune and fit an RBF readout on descriptors");
    svm_cmd->add_option("--features", svm_features, "descriptor file to fit on")->required();
    svm_cmd->add_option("--test-features", svm_test_features,
                        "descriptor file to score after fitting");
    svm_cmd->add_option("--c-grid", svm_c, "comma-separated C values");
    svm_cmd->add_option("--gamma-grid", svm_gamma, "comma-separated gamma values");
    svm_cmd->add_option("--folds", svm_folds, "cross-validation folds for tuning");
    svm_cmd->add_option("--tune-seed", svm_seed, "fold-split seed for tuning");
    svm_cmd->add_option("--out", svm_out, "model file to write")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) return cmd_train(train_args);
        if (*ablate_cmd) return cmd_ablate(ablate_args);
        if (*eval_cmd) return cmd_evaluate(eval_checkpoint, eval_data, eval_batch);
        if (*feat_cmd) return cmd_extract(feat_checkpoint, feat_data, feat_out);
        if (*svm_cmd)
            return cmd_svm_fit(svm_features, svm_test_features, svm_c, svm_gamma, svm_folds,
                               svm_seed, svm_out);
    } catch (const std::exception& e) {
        std::cerr << "mscnn: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
