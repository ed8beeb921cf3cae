#include "mscnn/svm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <list>
#include <stdexcept>
#include <unordered_map>

#include "blas.hpp"
#include "mscnn/train.hpp"

namespace mscnn {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
[[noreturn]] void io_fail(const std::string& msg) { throw std::runtime_error(msg); }

// Kernel rows against the whole training set, computed on demand and kept in
// an LRU cache bounded by the byte budget. Rows are shared by all class-vs-
// rest fits, which see the same data.
class RowCache {
public:
    RowCache(const double* x, int n, int dim, double gamma, std::size_t cache_mb)
        : x_(x), n_(n), dim_(dim), gamma_(gamma) {
        sq_.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const double* row = x_ + static_cast<std::size_t>(i) * dim_;
            double s = 0.0;
            for (int j = 0; j < dim_; ++j) s += row[j] * row[j];
            sq_[static_cast<std::size_t>(i)] = s;
        }
        const std::size_t row_bytes = sizeof(double) * static_cast<std::size_t>(n) + 64;
        cap_ = std::max<std::size_t>(2, cache_mb * 1024 * 1024 / row_bytes);
    }

    const std::vector<double>& row(int i) {
        auto it = index_.find(i);
        if (it != index_.end()) {
            order_.splice(order_.begin(), order_, it->second);
            return it->second->values;
        }
        if (order_.size() >= cap_) {
            index_.erase(order_.back().key);
            order_.pop_back();
        }
        order_.push_front({i, compute(i)});
        index_[i] = order_.begin();
        return order_.begin()->values;
    }

private:
    struct Entry {
        int key;
        std::vector<double> values;
    };

    std::vector<double> compute(int i) const {
        // ||xi - xj||^2 = |xi|^2 + |xj|^2 - 2 xi.xj, with the dot products
        // done as one matrix-vector product.
        std::vector<double> dots(static_cast<std::size_t>(n_));
        detail::gemm(false, false, n_, 1, dim_, 1.0, x_, dim_,
                     x_ + static_cast<std::size_t>(i) * dim_, 1, 0.0, dots.data(), 1);
        std::vector<double> out(static_cast<std::size_t>(n_));
        const double si = sq_[static_cast<std::size_t>(i)];
        for (int j = 0; j < n_; ++j) {
            const double d2 = std::max(0.0, si + sq_[static_cast<std::size_t>(j)] -
                                                2.0 * dots[static_cast<std::size_t>(j)]);
            out[static_cast<std::size_t>(j)] = std::exp(-gamma_ * d2);
        }
        out[static_cast<std::size_t>(i)] = 1.0;
        return out;
    }

    const double* x_;
    int n_, dim_;
    double gamma_;
    std::vector<double> sq_;
    std::size_t cap_;
    std::list<Entry> order_;
    std::unordered_map<int, std::list<Entry>::iterator> index_;
};

// Two-multiplier sequential dual solver for one class-vs-rest machine.
// Decision convention: f(x) = sum_j alpha_j y_j K(x_j, x) + b. Partner
// selection is deterministic (largest error gap, then index order), so a
// given dataset always produces the same machine.
struct BinaryFit {
    std::vector<double> alpha;
    double bias = 0.0;
};

BinaryFit smo_solve(RowCache& cache, const std::vector<int>& y, double c, double tol,
                    int max_sweeps, std::ostream& log) {
    const int n = static_cast<int>(y.size());
    BinaryFit fit;
    fit.alpha.assign(static_cast<std::size_t>(n), 0.0);
    std::vector<double>& alpha = fit.alpha;
    double& b = fit.bias;
    std::vector<double> err(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) err[static_cast<std::size_t>(i)] = -y[static_cast<std::size_t>(i)];

    auto non_bound = [&](int i) {
        const double a = alpha[static_cast<std::size_t>(i)];
        return a > 0.0 && a < c;
    };

    auto take_step = [&](int i1, int i2) -> bool {
        if (i1 == i2) return false;
        const double a1 = alpha[static_cast<std::size_t>(i1)];
        const double a2 = alpha[static_cast<std::size_t>(i2)];
        const int y1 = y[static_cast<std::size_t>(i1)], y2 = y[static_cast<std::size_t>(i2)];
        const double e1 = err[static_cast<std::size_t>(i1)], e2 = err[static_cast<std::size_t>(i2)];
        const double s = y1 * y2;
        double lo, hi;
        if (y1 != y2) {
            lo = std::max(0.0, a2 - a1);
            hi = std::min(c, c + a2 - a1);
        } else {
            lo = std::max(0.0, a1 + a2 - c);
            hi = std::min(c, a1 + a2);
        }
        if (lo >= hi) return false;

        const std::vector<double>& k1 = cache.row(i1);
        const double k11 = k1[static_cast<std::size_t>(i1)];
        const double k12 = k1[static_cast<std::size_t>(i2)];
        const std::vector<double>& k2 = cache.row(i2);
        const double k22 = k2[static_cast<std::size_t>(i2)];
        const double eta = k11 + k22 - 2.0 * k12;

        double a2n;
        if (eta > 1e-15) {
            a2n = std::clamp(a2 + y2 * (e1 - e2) / eta, lo, hi);
        } else {
            // Flat direction: the dual objective is linear along the pair
            // constraint, so the optimum sits at an end of the segment.
            const double f1 = e1 + y1, f2 = e2 + y2;
            const double v1 = f1 - b - y1 * a1 * k11 - y2 * a2 * k12;
            const double v2 = f2 - b - y1 * a1 * k12 - y2 * a2 * k22;
            const double span = a1 + s * a2;
            auto objective = [&](double t) {
                const double u = span - s * t;
                return u + t - 0.5 * k11 * u * u - 0.5 * k22 * t * t - s * k12 * u * t -
                       y1 * u * v1 - y2 * t * v2;
            };
            const double at_lo = objective(lo), at_hi = objective(hi);
            if (at_lo > at_hi + 1e-12)
                a2n = lo;
            else if (at_hi > at_lo + 1e-12)
                a2n = hi;
            else
                return false;
        }
        if (std::abs(a2n - a2) < 1e-12 * (a2n + a2 + 1e-12)) return false;
        double a1n = a1 + s * (a2 - a2n);
        if (a1n < 0.0) a1n = 0.0;
        if (a1n > c) a1n = c;

        const double d1 = y1 * (a1n - a1), d2 = y2 * (a2n - a2);
        const double b1 = b - e1 - d1 * k11 - d2 * k12;
        const double b2 = b - e2 - d1 * k12 - d2 * k22;
        double bn;
        if (a1n > 0.0 && a1n < c)
            bn = b1;
        else if (a2n > 0.0 && a2n < c)
            bn = b2;
        else
            bn = 0.5 * (b1 + b2);

        const double db = bn - b;
        for (int i = 0; i < n; ++i)
            err[static_cast<std::size_t>(i)] +=
                d1 * k1[static_cast<std::size_t>(i)] + d2 * k2[static_cast<std::size_t>(i)] + db;
        alpha[static_cast<std::size_t>(i1)] = a1n;
        alpha[static_cast<std::size_t>(i2)] = a2n;
        b = bn;
        return true;
    };

    auto examine = [&](int i2) -> bool {
        const int y2 = y[static_cast<std::size_t>(i2)];
        const double a2 = alpha[static_cast<std::size_t>(i2)];
        const double r2 = err[static_cast<std::size_t>(i2)] * y2;
        if (!((r2 < -tol && a2 < c) || (r2 > tol && a2 > 0.0))) return false;

        int best = -1;
        double gap = -1.0;
        for (int i = 0; i < n; ++i) {
            if (!non_bound(i)) continue;
            const double g = std::abs(err[static_cast<std::size_t>(i)] -
                                      err[static_cast<std::size_t>(i2)]);
            if (g > gap) {
                gap = g;
                best = i;
            }
        }
        if (best >= 0 && take_step(best, i2)) return true;
        for (int i = 0; i < n; ++i)
            if (non_bound(i) && take_step(i, i2)) return true;
        for (int i = 0; i < n; ++i)
            if (take_step(i, i2)) return true;
        return false;
    };

    bool examine_all = true;
    int changed = 1;
    int sweeps = 0;
    while (changed > 0 || examine_all) {
        if (++sweeps > max_sweeps) {
            log << "svm_fit: solver stopped at the sweep cap (" << max_sweeps << ")\n";
            break;
        }
        changed = 0;
        for (int i = 0; i < n; ++i) {
            if (!examine_all && !non_bound(i)) continue;
            changed += examine(i) ? 1 : 0;
        }
        if (examine_all)
            examine_all = false;
        else if (changed == 0)
            examine_all = true;
    }
    return fit;
}

double kernel_vs(const double* a, const double* b, int dim, double gamma) {
    double d2 = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = a[i] - b[i];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

std::vector<double> standardized(const SvmModel& model, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != model.dim)
        fail("svm descriptor has " + std::to_string(x.size()) + " dimensions, model expects " +
             std::to_string(model.dim));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - model.mean[i]) * model.scale[i];
    return out;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f64s(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) io_fail("truncated svm model: " + path);
    return v;
}

double read_f64(std::istream& in, const std::string& path) {
    double v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) io_fail("truncated svm model: " + path);
    return v;
}

std::vector<double> read_f64s(std::istream& in, std::size_t n, const std::string& path) {
    std::vector<double> v(n);
    if (!in.read(reinterpret_cast<char*>(v.data()),
                 static_cast<std::streamsize>(n * sizeof(double))))
        io_fail("truncated svm model: " + path);
    return v;
}

constexpr char kMagic[4] = {'M', 'S', 'C', 'S'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

double rbf_kernel(const std::vector<double>& x, const std::vector<double>& y, double gamma) {
    if (x.size() != y.size())
        fail("rbf_kernel length mismatch: " + std::to_string(x.size()) + " vs " +
             std::to_string(y.size()));
    if (!(gamma > 0.0)) fail("rbf_kernel gamma must be positive");
    return kernel_vs(x.data(), y.data(), static_cast<int>(x.size()), gamma);
}

SvmModel svm_fit(const Tensor& descriptors, const std::vector<int>& labels, double c,
                 double gamma, const SvmFitOptions& opts) {
    if (descriptors.ndim() != 2)
        fail("svm_fit descriptors must be (n, dim), got " + shape_str(descriptors.shape()));
    const int n = descriptors.dim(0), dim = descriptors.dim(1);
    if (static_cast<int>(labels.size()) != n)
        fail("svm_fit got " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
             " descriptors");
    if (n < 2) fail("svm_fit needs at least two samples");
    if (!(c > 0.0)) fail("svm_fit C must be positive");
    if (!(gamma > 0.0)) fail("svm_fit gamma must be positive");
    if (!(opts.tol > 0.0)) fail("svm_fit tolerance must be positive");
    std::ostream& log = opts.log ? *opts.log : std::cerr;

    int classes = 0;
    for (int l : labels) {
        if (l < 0) fail("svm_fit labels must be non-negative");
        classes = std::max(classes, l + 1);
    }
    if (classes < 2) fail("svm_fit needs at least two classes");
    std::vector<int> per_class(static_cast<std::size_t>(classes), 0);
    for (int l : labels) ++per_class[static_cast<std::size_t>(l)];
    for (int k = 0; k < classes; ++k)
        if (per_class[static_cast<std::size_t>(k)] == 0)
            fail("svm_fit class " + std::to_string(k) + " has no samples");

    SvmModel model;
    model.dim = dim;
    model.classes = classes;
    model.gamma = gamma;
    model.c = c;

    // Per-dimension standardization; constant columns pass through centered.
    const double* raw = descriptors.data();
    model.mean.assign(static_cast<std::size_t>(dim), 0.0);
    model.scale.assign(static_cast<std::size_t>(dim), 1.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j)
            model.mean[static_cast<std::size_t>(j)] += raw[static_cast<std::size_t>(i) * dim + j];
    for (double& m : model.mean) m /= n;
    std::vector<double> var(static_cast<std::size_t>(dim), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) {
            const double d =
                raw[static_cast<std::size_t>(i) * dim + j] - model.mean[static_cast<std::size_t>(j)];
            var[static_cast<std::size_t>(j)] += d * d;
        }
    for (int j = 0; j < dim; ++j) {
        const double sd = std::sqrt(var[static_cast<std::size_t>(j)] / n);
        if (sd > 1e-12) model.scale[static_cast<std::size_t>(j)] = 1.0 / sd;
    }

    std::vector<double> x(static_cast<std::size_t>(n) * dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j)
            x[static_cast<std::size_t>(i) * dim + j] =
                (raw[static_cast<std::size_t>(i) * dim + j] -
                 model.mean[static_cast<std::size_t>(j)]) *
                model.scale[static_cast<std::size_t>(j)];

    bool all_same = true;
    for (int i = 1; i < n && all_same; ++i)
        for (int j = 0; j < dim; ++j)
            if (x[static_cast<std::size_t>(i) * dim + j] != x[static_cast<std::size_t>(j)]) {
                all_same = false;
                break;
            }
    if (all_same) log << "svm_fit: all descriptors are identical; the fit is degenerate\n";

    RowCache cache(x.data(), n, dim, gamma, opts.cache_mb);

    // One machine per class; remember which rows support any of them.
    std::vector<std::vector<std::pair<int, double>>> raw_machines(
        static_cast<std::size_t>(classes));
    std::vector<double> biases(static_cast<std::size_t>(classes), 0.0);
    std::vector<char> is_support(static_cast<std::size_t>(n), 0);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int k = 0; k < classes; ++k) {
        for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = labels[i] == k ? 1 : -1;
        const BinaryFit fit = smo_solve(cache, y, c, opts.tol, opts.max_sweeps, log);
        biases[static_cast<std::size_t>(k)] = fit.bias;
        for (int i = 0; i < n; ++i) {
            const double a = fit.alpha[static_cast<std::size_t>(i)];
            if (a > 1e-12) {
                raw_machines[static_cast<std::size_t>(k)].push_back(
                    {i, a * y[static_cast<std::size_t>(i)]});
                is_support[static_cast<std::size_t>(i)] = 1;
            }
        }
    }

    std::vector<int> row_of(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        if (!is_support[static_cast<std::size_t>(i)]) continue;
        row_of[static_cast<std::size_t>(i)] = model.support_count();
        model.support.insert(model.support.end(), x.begin() + static_cast<std::size_t>(i) * dim,
                             x.begin() + static_cast<std::size_t>(i + 1) * dim);
    }
    model.machines.resize(static_cast<std::size_t>(classes));
    for (int k = 0; k < classes; ++k) {
        BinarySvm& m = model.machines[static_cast<std::size_t>(k)];
        m.bias = biases[static_cast<std::size_t>(k)];
        for (const auto& [i, coef] : raw_machines[static_cast<std::size_t>(k)]) {
            m.sv.push_back(row_of[static_cast<std::size_t>(i)]);
            m.coef.push_back(coef);
        }
    }
    return model;
}

std::vector<double> svm_decision(const SvmModel& model, const std::vector<double>& descriptor) {
    if (!model.fitted()) fail("svm model is not fitted");
    const std::vector<double> xs = standardized(model, descriptor);
    std::vector<double> out(static_cast<std::size_t>(model.classes));
    for (int k = 0; k < model.classes; ++k) {
        const BinarySvm& m = model.machines[static_cast<std::size_t>(k)];
        double dec = m.bias;
        for (std::size_t j = 0; j < m.sv.size(); ++j)
            dec += m.coef[j] *
                   kernel_vs(model.support.data() +
                                 static_cast<std::size_t>(m.sv[j]) * model.dim,
                             xs.data(), model.dim, model.gamma);
        out[static_cast<std::size_t>(k)] = dec;
    }
    return out;
}

int svm_predict(const SvmModel& model, const std::vector<double>& descriptor) {
    const std::vector<double> dec = svm_decision(model, descriptor);
    return static_cast<int>(std::max_element(dec.begin(), dec.end()) - dec.begin());
}

std::vector<int> svm_predict(const SvmModel& model, const Tensor& descriptors) {
    if (descriptors.ndim() != 2)
        fail("svm_predict descriptors must be (n, dim), got " + shape_str(descriptors.shape()));
    const int n = descriptors.dim(0), dim = descriptors.dim(1);
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<double> row(descriptors.data() + static_cast<std::size_t>(i) * dim,
                                descriptors.data() + static_cast<std::size_t>(i + 1) * dim);
        out.push_back(svm_predict(model, row));
    }
    return out;
}

std::vector<double> default_c_grid() { return {0.1, 1.0, 10.0, 100.0}; }
std::vector<double> default_gamma_grid() { return {1.0 / 2048, 0.001, 0.01, 0.1}; }

SvmTuning tune(const Tensor& descriptors, const std::vector<int>& labels,
               const std::vector<double>& c_grid, const std::vector<double>& gamma_grid,
               int folds, std::uint64_t seed, const SvmFitOptions& opts) {
    if (c_grid.empty() || gamma_grid.empty()) fail("tune: empty parameter grid");
    if (descriptors.ndim() != 2)
        fail("tune descriptors must be (n, dim), got " + shape_str(descriptors.shape()));
    const int n = descriptors.dim(0), dim = descriptors.dim(1);
    if (static_cast<int>(labels.size()) != n)
        fail("tune got " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
             " descriptors");

    const std::vector<Fold> split = kfold_split(n, folds, seed);
    auto rows_of = [&](const std::vector<int>& rows) {
        Tensor t = Tensor::zeros({static_cast<int>(rows.size()), dim});
        std::vector<int> l(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy(descriptors.data() + static_cast<std::size_t>(rows[i]) * dim,
                      descriptors.data() + static_cast<std::size_t>(rows[i] + 1) * dim,
                      t.data() + i * static_cast<std::size_t>(dim));
            l[i] = labels[static_cast<std::size_t>(rows[i])];
        }
        return std::pair(t, l);
    };

    SvmTuning best;
    int best_correct = -1;
    for (double c : c_grid)
        for (double gamma : gamma_grid) {
            int correct = 0;
            for (const Fold& fold : split) {
                auto [train_x, train_y] = rows_of(fold.train);
                auto [val_x, val_y] = rows_of(fold.val);
                const SvmModel model = svm_fit(train_x, train_y, c, gamma, opts);
                const std::vector<int> pred = svm_predict(model, val_x);
                for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == val_y[i];
            }
            const bool wins =
                correct > best_correct ||
                (correct == best_correct &&
                 (c < best.c || (c == best.c && gamma < best.gamma)));
            if (wins) {
                best_correct = correct;
                best = {c, gamma, static_cast<double>(correct) / n};
            }
        }
    return best;
}

void save_svm(const std::string& path, const SvmModel& model) {
    if (!model.fitted()) fail("svm model is not fitted");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) io_fail("cannot open svm model for writing: " + path);
    out.write(kMagic, sizeof kMagic);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(model.classes));
    write_u32(out, static_cast<std::uint32_t>(model.dim));
    write_f64(out, model.gamma);
    write_f64(out, model.c);
    write_f64s(out, model.mean);
    write_f64s(out, model.scale);
    write_u32(out, static_cast<std::uint32_t>(model.support_count()));
    write_f64s(out, model.support);
    for (const BinarySvm& m : model.machines) {
        write_u32(out, static_cast<std::uint32_t>(m.sv.size()));
        for (int idx : m.sv) write_u32(out, static_cast<std::uint32_t>(idx));
        write_f64s(out, m.coef);
        write_f64(out, m.bias);
    }
    out.flush();
    if (!out) io_fail("failed to write svm model: " + path);
}

SvmModel load_svm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail("cannot open svm model: " + path);
    char magic[4] = {};
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        io_fail("not an svm model file: " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != kVersion)
        io_fail("unsupported svm model version " + std::to_string(version) + ": " + path);

    SvmModel model;
    model.classes = static_cast<int>(read_u32(in, path));
    model.dim = static_cast<int>(read_u32(in, path));
    model.gamma = read_f64(in, path);
    model.c = read_f64(in, path);
    if (model.classes < 2 || model.dim < 1) io_fail("corrupt svm model header: " + path);
    model.mean = read_f64s(in, static_cast<std::size_t>(model.dim), path);
    model.scale = read_f64s(in, static_cast<std::size_t>(model.dim), path);
    const std::uint32_t count = read_u32(in, path);
    model.support =
        read_f64s(in, static_cast<std::size_t>(count) * static_cast<std::size_t>(model.dim), path);
    model.machines.resize(static_cast<std::size_t>(model.classes));
    for (BinarySvm& m : model.machines) {
        const std::uint32_t sv = read_u32(in, path);
        m.sv.resize(sv);
        for (std::uint32_t i = 0; i < sv; ++i) {
            m.sv[i] = static_cast<int>(read_u32(in, path));
            if (m.sv[i] >= static_cast<int>(count))
                io_fail("corrupt svm model support index: " + path);
        }
        m.coef = read_f64s(in, sv, path);
        m.bias = read_f64(in, path);
    }
    return model;
}

}  // namespace mscnn
