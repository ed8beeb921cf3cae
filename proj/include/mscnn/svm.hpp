#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mscnn/tensor.hpp"

namespace mscnn {

// exp(-gamma * ||x - y||^2); gamma must be positive.
double rbf_kernel(const std::vector<double>& x, const std::vector<double>& y, double gamma);

// One class-vs-rest machine in dual form. Its decision value is
// sum_m coef[m] * K(support[sv[m]], x) + bias, with coef = alpha * y so
// |coef| <= C by the box constraint.
struct BinarySvm {
    std::vector<int> sv;       // rows into SvmModel::support
    std::vector<double> coef;  // alpha_i * y_i
    double bias = 0.0;
};

// RBF one-vs-all classifier over standardized descriptors. The support
// matrix is shared: it holds every training row that supports any class.
struct SvmModel {
    int dim = 0;
    int classes = 0;
    double gamma = 0.0;
    double c = 0.0;
    std::vector<double> mean;     // per-dimension training mean
    std::vector<double> scale;    // 1/std; 1 where the training column was constant
    std::vector<double> support;  // (support_count, dim) standardized rows
    std::vector<BinarySvm> machines;

    bool fitted() const { return classes >= 2; }
    int support_count() const {
        return dim == 0 ? 0 : static_cast<int>(support.size()) / dim;
    }
};

struct SvmFitOptions {
    double tol = 1e-3;           // KKT tolerance the dual solver works to
    std::size_t cache_mb = 256;  // kernel row cache bound
    int max_sweeps = 1000;       // hard cap on solver passes, warned when hit
    std::ostream* log = nullptr;  // warnings; std::cerr when null
};

// Fits one max-margin machine per class (that class against the rest) with a
// sequential two-multiplier dual solver; all classes share one kernel row
// cache. Descriptors are standardized per dimension first and the statistics
// ride along in the model. Needs at least two classes with one sample each;
// a training set of all-identical descriptors is reported but still fitted.
SvmModel svm_fit(const Tensor& descriptors, const std::vector<int>& labels, double c,
                 double gamma, const SvmFitOptions& opts = {});

// Per-class decision values for one descriptor.
std::vector<double> svm_decision(const SvmModel& model, const std::vector<double>& descriptor);

// argmax of the decision values; ties pick the lowest class index.
int svm_predict(const SvmModel& model, const std::vector<double>& descriptor);
std::vector<int> svm_predict(const SvmModel& model, const Tensor& descriptors);

// Published defaults for the grid search.
std::vector<double> default_c_grid();      // {0.1, 1, 10, 100}
std::vector<double> default_gamma_grid();  // {1/2048, 0.001, 0.01, 0.1}

struct SvmTuning {
    double c = 0.0;
    double gamma = 0.0;
    double accuracy = 0.0;  // cross-validated accuracy of the winner
};

// Grid search by k-fold cross-validation. Accuracy ties pick the smallest C,
// then the smallest gamma. The fold split is seeded and deterministic.
SvmTuning tune(const Tensor& descriptors, const std::vector<int>& labels,
               const std::vector<double>& c_grid, const std::vector<double>& gamma_grid,
               int folds, std::uint64_t seed = 0, const SvmFitOptions& opts = {});

// Binary container, magic "MSCS", little-endian.
void save_svm(const std::string& path, const SvmModel& model);
SvmModel load_svm(const std::string& path);

}  // namespace mscnn
