#include "mscnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "mscnn/checkpoint.hpp"

namespace mscnn {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

const std::vector<double>* out_grad(const std::shared_ptr<detail::TensorImpl>& out) {
    return out->grad.empty() ? nullptr : &out->grad;
}

void check_budget(const TrainConfig& cfg) {
    if (cfg.initial_lr <= 0.0 || cfg.lr_floor <= 0.0) fail("train config: learning rates must be positive");
    if (!(cfg.decay > 0.0 && cfg.decay < 1.0)) fail("train config: decay must be in (0,1)");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) fail("train config: dropout must be in [0,1)");
    if (cfg.batch_size < 1) fail("train config: batch size must be positive");
    if (cfg.max_epochs < 1) fail("train config: max_epochs must be positive");
    if (!(cfg.beta > 0.0 && cfg.beta < 1.0)) fail("train config: beta must be in (0,1)");
    if (cfg.eps <= 0.0) fail("train config: eps must be positive");
}

int count_correct(const Tensor& logits, const std::vector<int>& labels) {
    const int b = logits.dim(0), k = logits.dim(1);
    int correct = 0;
    for (int i = 0; i < b; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        correct += static_cast<int>(std::max_element(row, row + k) - row) == labels[i];
    }
    return correct;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// What one pass of the loop trains: a logits function plus the parameters the
// optimizer may move. eval_net enables validation metrics and checkpoints.
struct LoopTarget {
    std::function<Tensor(const Tensor& images, std::mt19937_64* rng)> forward;
    std::vector<Tensor> params;
    Network* eval_net = nullptr;
    std::function<void(const EpochMetrics&)> on_epoch;
};

TrainResult run_loop(LoopTarget& target, const Dataset& data, const TrainConfig& cfg,
                     const TrainOptions& opts) {
    check_budget(cfg);
    const int n = data.size();
    if (n == 0) fail("train: empty dataset");
    std::ostream& log = opts.log ? *opts.log : std::cerr;
    int batch = cfg.batch_size;
    if (batch > n) {
        log << "train: batch size " << batch << " clamped to dataset size " << n << "\n";
        batch = n;
    }

    std::mt19937_64 shuffle_rng(cfg.seed);
    // Separate stream so the epoch order does not depend on how many dropout
    // draws the forward pass consumes.
    std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    OptimState state;
    state.beta = cfg.beta;
    state.eps = cfg.eps;

    std::ofstream csv;
    if (!opts.metrics_csv.empty()) {
        csv.open(opts.metrics_csv, std::ios::app);
        if (!csv) fail("train: cannot open metrics file " + opts.metrics_csv);
        if (csv.tellp() == std::ofstream::pos_type(0))
            csv << "epoch,lr,train_loss,train_acc,val_acc\n";
    }

    TrainResult out;
    double prev_loss = std::numeric_limits<double>::infinity();
    int stall = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch - 1);
        const std::vector<int> order = shuffle_indices(n, shuffle_rng);
        double loss_sum = 0.0;
        int correct = 0;
        for (int begin = 0; begin < n; begin += batch) {
            const int len = std::min(batch, n - begin);
            const std::vector<int> rows(order.begin() + begin, order.begin() + begin + len);
            Dataset part = data.gather(rows);
            Tensor images = part.images;
            if (opts.augment) images = opts.augment(images, rows, epoch);

            Tape tape;
            Tensor logits = target.forward(images, &dropout_rng);
            Tensor loss = crossentropy(logits, part.labels);
            tape.backward(loss);
            rmsprop_step(target.params, state, lr, opts.log);
            for (Tensor p : target.params) p.drop_grad();

            loss_sum += loss.item() * len;
            correct += count_correct(logits, part.labels);
            ++out.steps;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.train_loss = loss_sum / n;
        m.train_acc = static_cast<double>(correct) / n;
        if (opts.val && target.eval_net) {
            const EvalResult ev = evaluate(*target.eval_net, *opts.val, batch);
            m.val_loss = ev.loss;
            m.val_acc = ev.accuracy;
            if (out.best_epoch == 0 || ev.accuracy > out.best_val_acc) {
                out.best_val_acc = ev.accuracy;
                out.best_epoch = epoch;
                if (!opts.checkpoint_path.empty())
                    save_checkpoint(opts.checkpoint_path, *target.eval_net, epoch);
            }
        }
        out.history.push_back(m);
        out.epochs_run = epoch;
        if (csv.is_open()) {
            csv << m.epoch << ',' << num(m.lr) << ',' << num(m.train_loss) << ','
                << num(m.train_acc) << ',';
            if (!std::isnan(m.val_acc)) csv << num(m.val_acc);
            csv << '\n' << std::flush;
        }
        if (target.on_epoch) target.on_epoch(m);

        if (opts.early_stop) {
            if (prev_loss - m.train_loss < 1e-5) {
                if (++stall >= 20) {
                    out.early_stopped = true;
                    break;
                }
            } else {
                stall = 0;
            }
            prev_loss = m.train_loss;
        }
    }
    return out;
}

}  // namespace

double lr_at(const TrainConfig& cfg, int epoch) {
    if (epoch < 0) fail("lr_at: epoch must be non-negative");
    return std::max(cfg.initial_lr * std::pow(cfg.decay, epoch), cfg.lr_floor);
}

Tensor crossentropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2)
        fail("crossentropy logits must be (batch, classes), got " + shape_str(logits.shape()));
    const int b = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != b)
        fail("crossentropy got " + std::to_string(labels.size()) + " labels for a batch of " +
             std::to_string(b));
    for (int i = 0; i < b; ++i)
        if (labels[i] < 0 || labels[i] >= k)
            throw std::out_of_range("crossentropy label " + std::to_string(labels[i]) +
                                    " outside 0.." + std::to_string(k - 1));

    Tensor out = Tensor::zeros({1});
    // Softmax rows are kept for the backward rule.
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * k);
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        double* p = probs->data() + static_cast<std::size_t>(i) * k;
        const double m = *std::max_element(row, row + k);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(row[j] - m);
        const double lse = m + std::log(z);
        total += lse - row[labels[i]];
        for (int j = 0; j < k; ++j) p[j] = std::exp(row[j] - lse);
    }
    out.data()[0] = total / b;
    detail::check_finite(out, "crossentropy");

    if (detail::should_track({&logits})) {
        detail::mark_tracked(out);
        auto ix = logits.impl(), io = out.impl();
        Tape::active()->record({"crossentropy",
                                {ix->id},
                                io->id,
                                [ix, io, probs, labels, b, k] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    const double scale = (*g)[0] / b;
                                    std::vector<double> dx(probs->size());
                                    for (int i = 0; i < b; ++i) {
                                        const std::size_t off = static_cast<std::size_t>(i) * k;
                                        for (int j = 0; j < k; ++j)
                                            dx[off + j] = scale * (*probs)[off + j];
                                        dx[off + labels[i]] -= scale;
                                    }
                                    detail::accumulate_grad(ix, dx.data(), dx.size());
                                }});
    }
    return out;
}

int rmsprop_step(const std::vector<Tensor>& params, OptimState& state, double lr,
                 std::ostream* log) {
    if (state.avg_sq.empty()) {
        state.avg_sq.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            state.avg_sq[i].assign(params[i].size(), 0.0);
    }
    if (state.avg_sq.size() != params.size())
        fail("rmsprop_step: state holds " + std::to_string(state.avg_sq.size()) +
             " buffers for " + std::to_string(params.size()) + " parameters");

    int skipped = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i];
        std::vector<double>& e2 = state.avg_sq[i];
        if (e2.size() != p.size())
            fail("rmsprop_step: parameter " + std::to_string(i) + " has " +
                 std::to_string(p.size()) + " elements, state buffer has " +
                 std::to_string(e2.size()));
        if (!p.has_grad()) {
            // Zero gradient: the average decays, the weights stay.
            for (double& v : e2) v *= state.beta;
            continue;
        }
        const std::vector<double>& g = p.grad();
        if (!std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); })) {
            (log ? *log : std::cerr)
                << "rmsprop_step: non-finite gradient for parameter " << i << ", update skipped\n";
            ++skipped;
            continue;
        }
        double* w = p.data();
        for (std::size_t j = 0; j < g.size(); ++j) {
            e2[j] = state.beta * e2[j] + (1.0 - state.beta) * g[j] * g[j];
            w[j] -= lr * g[j] / std::sqrt(e2[j] + state.eps);
        }
    }
    ++state.steps;
    return skipped;
}

std::vector<int> shuffle_indices(int n, std::mt19937_64& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

EvalResult evaluate(Network& net, const Dataset& data, int batch_size) {
    const int n = data.size();
    if (n == 0) fail("evaluate: empty dataset");
    if (batch_size < 1) fail("evaluate: batch size must be positive");
    double loss_sum = 0.0;
    int correct = 0;
    for (int begin = 0; begin < n; begin += batch_size) {
        const int len = std::min(batch_size, n - begin);
        std::vector<int> rows(static_cast<std::size_t>(len));
        std::iota(rows.begin(), rows.end(), begin);
        Dataset part = data.gather(rows);
        FeatureBundle fb = net.forward(part.images, Mode::eval);
        loss_sum += crossentropy(fb.logits, part.labels).item() * len;
        correct += count_correct(fb.logits, part.labels);
    }
    return {loss_sum / n, static_cast<double>(correct) / n};
}

TrainResult train(Network& net, const Dataset& train_set, const TrainConfig& cfg,
                  const TrainOptions& opts) {
    net.set_dropout(cfg.dropout);
    LoopTarget target;
    target.forward = [&net](const Tensor& images, std::mt19937_64* rng) {
        return net.forward(images, Mode::train, rng).logits;
    };
    target.params = net.parameters();
    target.eval_net = &net;
    return run_loop(target, train_set, cfg, opts);
}

ReplayResult epoch_replay_fit(const std::function<Network()>& net_factory,
                              const Dataset& full_train, double val_fraction,
                              const TrainConfig& cfg, const TrainOptions& opts) {
    if (opts.val) fail("epoch_replay_fit: the validation split is made internally; opts.val must be null");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        fail("epoch_replay_fit: val_fraction must be in (0,1)");
    const int n = full_train.size();
    if (n == 0) fail("epoch_replay_fit: empty dataset");
    const int val_n = static_cast<int>(std::lround(val_fraction * n));
    if (val_n == 0) fail("epoch_replay_fit: validation split is empty");
    if (val_n >= n) fail("epoch_replay_fit: validation split leaves no training data");

    std::mt19937_64 split_rng(cfg.seed);
    const std::vector<int> order = shuffle_indices(n, split_rng);
    const Dataset val =
        full_train.gather(std::vector<int>(order.begin(), order.begin() + val_n));
    const Dataset fit =
        full_train.gather(std::vector<int>(order.begin() + val_n, order.end()));

    Network probe = net_factory();
    TrainOptions probe_opts = opts;
    probe_opts.val = &val;
    probe_opts.checkpoint_path.clear();  // phase 1 only picks the epoch count
    TrainResult phase1 = train(probe, fit, cfg, probe_opts);
    const int best = phase1.best_epoch;

    Network final_net = net_factory();
    TrainConfig replay_cfg = cfg;
    replay_cfg.max_epochs = best;
    TrainOptions replay_opts = opts;
    replay_opts.early_stop = false;  // the epoch count is the whole point
    TrainResult phase2 = train(final_net, full_train, replay_cfg, replay_opts);
    if (!opts.checkpoint_path.empty()) save_checkpoint(opts.checkpoint_path, final_net, best);

    return {std::move(final_net), best,   fit.size(),        val.size(),
            std::move(phase1),    std::move(phase2)};
}

std::vector<Fold> kfold_split(int n, int k, std::uint64_t seed) {
    if (k < 2) fail("kfold_split: need at least 2 folds");
    if (k > n)
        fail("kfold_split: " + std::to_string(k) + " folds exceed " + std::to_string(n) +
             " samples");
    std::mt19937_64 rng(seed);
    const std::vector<int> order = shuffle_indices(n, rng);
    std::vector<Fold> folds(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const auto lo = static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(n) * i / k);
        const auto hi = static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(n) * (i + 1) / k);
        Fold& f = folds[static_cast<std::size_t>(i)];
        f.val.assign(order.begin() + lo, order.begin() + hi);
        f.train.reserve(order.size() - f.val.size());
        f.train.insert(f.train.end(), order.begin(), order.begin() + lo);
        f.train.insert(f.train.end(), order.begin() + hi, order.end());
    }
    return folds;
}

std::vector<Fold> kfold_split(const Dataset& data, int k, std::uint64_t seed) {
    return kfold_split(data.size(), k, seed);
}

TrainResult train_columns_separately(Network& net, const Dataset& train_set,
                                     const TrainConfig& cfg, const TrainOptions& opts) {
    if (net.config().variant != Variant::proposed)
        fail("train_columns_separately needs the proposed variant, got " +
             std::string(variant_name(net.config().variant)));
    net.set_dropout(cfg.dropout);

    // Stage 1: each column against its own temporary head. Levels 1 and 2
    // local FCs see no gradient here; they only feed the fused path.
    for (int column = 0; column < 3; ++column) {
        std::mt19937_64 head_rng(cfg.seed ^ (0x517cc1b727220a95ull + column));
        Linear head(net.config().columns[column].levels[2].local_fc, net.config().classes,
                    head_rng);
        head.weight.set_requires_grad(true);
        head.bias.set_requires_grad(true);

        LoopTarget target;
        target.forward = [&net, &head, column](const Tensor& images, std::mt19937_64* rng) {
            return head(net.forward_column_deep(column, images, Mode::train, rng));
        };
        const std::string prefix = "col" + std::to_string(column + 1) + ".";
        for (const NamedTensor& nt : net.named_parameters())
            if (nt.name.rfind(prefix, 0) == 0) target.params.push_back(nt.tensor);
        target.params.push_back(head.weight);
        target.params.push_back(head.bias);

        TrainOptions stage_opts = opts;
        stage_opts.val = nullptr;  // validation tracks the head that is kept
        stage_opts.metrics_csv.clear();
        stage_opts.checkpoint_path.clear();
        run_loop(target, train_set, cfg, stage_opts);
    }

    // Stage 2: conv path frozen, every FC trained against the final loss.
    net.freeze_convs(true);
    LoopTarget target;
    target.forward = [&net](const Tensor& images, std::mt19937_64* rng) {
        return net.forward(images, Mode::train, rng).logits;
    };
    for (const NamedTensor& nt : net.named_parameters())
        if (nt.tensor.requires_grad()) target.params.push_back(nt.tensor);
    target.eval_net = &net;

    // Keep the weights of the epoch with the lowest validation loss. The
    // frozen conv path cannot drift, so the FC state is the whole snapshot.
    std::vector<NamedTensor> fc_state;
    for (const NamedTensor& nt : net.named_state())
        if (nt.name.find(".conv.") == std::string::npos) fc_state.push_back(nt);
    std::vector<std::vector<double>> best_values;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int best_loss_epoch = 0;
    if (opts.val) {
        target.on_epoch = [&](const EpochMetrics& m) {
            if (m.val_loss < best_val_loss) {
                best_val_loss = m.val_loss;
                best_loss_epoch = m.epoch;
                best_values.clear();
                best_values.reserve(fc_state.size());
                for (const NamedTensor& nt : fc_state) best_values.push_back(nt.tensor.values());
            }
        };
    }

    TrainOptions stage_opts = opts;
    stage_opts.checkpoint_path.clear();  // written below from the restored weights
    TrainResult result = run_loop(target, train_set, cfg, stage_opts);

    if (!best_values.empty()) {
        for (std::size_t i = 0; i < fc_state.size(); ++i)
            fc_state[i].tensor.values() = best_values[i];
        result.best_epoch = best_loss_epoch;
    }
    net.freeze_convs(false);
    const int kept_epoch = best_values.empty() ? result.epochs_run : best_loss_epoch;
    if (!opts.checkpoint_path.empty()) save_checkpoint(opts.checkpoint_path, net, kept_epoch);
    return result;
}

}  // namespace mscnn
