#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mscnn/data.hpp"
#include "mscnn/model.hpp"
#include "mscnn/svm.hpp"
#include "mscnn/train.hpp"

namespace mscnn {

// Validation protocols from the result tables: a random held-out set (with
// the epoch-replay refit when a test split exists), or plain k-fold CV.
enum class CvMode { random_val, kfold5, kfold10 };

CvMode parse_cv(const std::string& name);  // random-val | 5-fold | 10-fold
std::string to_string(CvMode mode);

// One experiment, fully described by flat key=value text. Unset paths stay
// empty; zeros mean "derive a sensible value at run time" where noted.
struct ExperimentConfig {
    // dataset
    std::string data_kind = "idx";  // idx | dir
    std::string train_images, train_labels;  // idx kind
    std::string train_root;                  // dir kind
    std::string test_images, test_labels, test_root;  // optional held-out split
    std::string manifest;  // optional; checked against splits "train"/"test"
    int classes = 0;       // 0: max label + 1 from the loaded data

    // model
    std::string network = "small";  // small | full | path to a network config
    Variant variant = Variant::proposed;

    // optimization
    TrainConfig train;
    Augment augment = Augment::none;
    bool separate_columns = false;  // column-wise pretraining mode

    // protocol
    CvMode cv = CvMode::random_val;
    double val_fraction = 0.0;  // 0: match the test-set size, else 0.2

    // svm readout
    bool svm_enable = true;
    std::vector<double> c_grid;      // empty: default_c_grid()
    std::vector<double> gamma_grid;  // empty: default_gamma_grid()
    int svm_folds = 5;

    // execution
    int repeats = 1;  // repeat r runs with seed cfg.train.seed + r
    std::string out_dir = "runs/exp";
};

// Parses key=value text ('#' comments); unknown keys are errors. The same
// keys work one at a time through apply_override, which is how CLI flags
// land on top of a config file.
ExperimentConfig parse_experiment(const std::string& text);
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Full echo with every default materialized; parse_experiment gives the
// identical config back.
std::string describe_experiment(const ExperimentConfig& cfg);

// Structural checks plus existence of every referenced path.
void validate_experiment(const ExperimentConfig& cfg);

// Square count matrix; row = true class, column = predicted class.
struct Confusion {
    int classes = 0;
    std::vector<int> counts;

    Confusion() = default;
    explicit Confusion(int k)
        : classes(k), counts(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0) {}
    int& at(int t, int p) { return counts[static_cast<std::size_t>(t) * classes + p]; }
    int at(int t, int p) const { return counts[static_cast<std::size_t>(t) * classes + p]; }
    int trace() const;
    int total() const;
    int row_sum(int t) const;
};

struct EvalReport {
    double accuracy = 0.0;
    Confusion confusion;
};

// Eval-mode accuracy and confusion over the whole set. Labels must fit the
// network's class count; an empty dataset is an error.
EvalReport evaluate_confusion(Network& net, const Dataset& data, int batch_size = 500);
EvalReport evaluate_checkpoint(const std::string& checkpoint_path, const Dataset& data);

// Eval-mode descriptors for every row, (n, descriptor_width).
Tensor batch_descriptors(Network& net, const Dataset& data, int batch_size = 500);

// Descriptor container, format "MSCD" version 1, little-endian:
//   char[4] magic, u32 version, u32 count, u32 width,
//   i32 labels[count], f64 row-major descriptors[count * width].
void write_descriptors(const std::string& path, const Tensor& descriptors,
                       const std::vector<int>& labels);
std::pair<Tensor, std::vector<int>> read_descriptors(const std::string& path);

// Checkpoint in, descriptor file out, one row per dataset row.
void extract_features(const std::string& checkpoint_path, const Dataset& data,
                      const std::string& out_path);

// Grid-tuned RBF readout over fixed descriptors.
struct SvmReadout {
    SvmTuning tuning;
    SvmModel model;
};
SvmReadout fit_svm_readout(const Tensor& descriptors, const std::vector<int>& labels,
                           const std::vector<double>& c_grid,
                           const std::vector<double>& gamma_grid, int folds,
                           std::uint64_t seed);

struct TrialResult {
    std::uint64_t seed = 0;
    int best_epoch = 0;
    double softmax_accuracy = 0.0;
    double svm_accuracy = std::numeric_limits<double>::quiet_NaN();
    double svm_c = std::numeric_limits<double>::quiet_NaN();
    double svm_gamma = std::numeric_limits<double>::quiet_NaN();
    double svm_cv_accuracy = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> fold_accuracies;  // k-fold modes only
    Confusion confusion_softmax;
    Confusion confusion_svm;
};

struct ExperimentReport {
    std::string config_echo;  // the resolved config the run actually used
    int classes = 0;
    int train_samples = 0;
    int test_samples = 0;  // 0 when no test split was given
    std::vector<TrialResult> trials;
    int best_trial = 0;  // index of the best softmax accuracy (first on ties)
    double best_softmax = 0.0, mean_softmax = 0.0, std_softmax = 0.0;
    double best_svm = std::numeric_limits<double>::quiet_NaN();
    double mean_svm = std::numeric_limits<double>::quiet_NaN();
    double std_svm = std::numeric_limits<double>::quiet_NaN();
    std::string text;  // rendered report, as written to <out>/report.txt
};

// Runs the configured protocol once per repeat and writes everything under
// cfg.out_dir: per-repeat metrics CSV and checkpoint (plus the SVM model
// when enabled) in repeat<k>/, and the report text at report.txt. The run
// is deterministic: identical config gives an identical report byte for
// byte. random-val with a test split uses the epoch-replay protocol and
// scores on the test set; without one it scores on the held-out validation
// split. k-fold modes score by pooled cross-validation on the training
// split alone. Separate-column mode trains against a held-out split in both
// random-val and k-fold protocols.
ExperimentReport run(const ExperimentConfig& cfg);

// Runs every wiring variant with the same budget and dataset, one subfolder
// each, and writes a comparison table to <out>/ablation.txt.
std::string ablate(const ExperimentConfig& base);

}  // namespace mscnn
