#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mscnn/data.hpp"
#include "mscnn/model.hpp"
#include "mscnn/tensor.hpp"

namespace mscnn {

// Published training budget. The step size decays by a fixed factor per
// epoch down to a floor; weights update once per mini-batch.
struct TrainConfig {
    double initial_lr = 0.001;
    double decay = 0.993;  // per-epoch multiplier, in (0, 1)
    double lr_floor = 0.00003;
    double dropout = 0.5;  // applied to every FC block except the final one
    int batch_size = 500;
    int max_epochs = 500;
    double beta = 0.9;  // squared-gradient averaging factor
    double eps = 1e-8;
    std::uint64_t seed = 1;
};

// max(initial_lr * decay^epoch, lr_floor); epoch counts from 0.
double lr_at(const TrainConfig& cfg, int epoch);

// Mean over the batch of -ln softmax(logits)[label], computed via
// log-sum-exp so large logits cannot overflow. Differentiable.
Tensor crossentropy(const Tensor& logits, const std::vector<int>& labels);

// RMSProp accumulator: one moving average of squared gradients per
// parameter, allocated on the first step and shape-checked afterwards.
struct OptimState {
    double beta = 0.9;
    double eps = 1e-8;
    std::vector<std::vector<double>> avg_sq;
    std::int64_t steps = 0;
};

// One update over all parameters: E <- beta*E + (1-beta)*g^2, then
// w <- w - lr * g / sqrt(E + eps), g read from each parameter's grad buffer
// (a missing buffer is a zero gradient). A parameter with any non-finite
// gradient keeps its weights and average untouched and is reported on `log`
// (std::cerr when null); returns how many were skipped.
int rmsprop_step(const std::vector<Tensor>& params, OptimState& state, double lr,
                 std::ostream* log = nullptr);

// Seeded epoch order; one permutation drawn per call.
std::vector<int> shuffle_indices(int n, std::mt19937_64& rng);

struct EpochMetrics {
    int epoch = 0;  // 1-based; steps inside it use lr_at(epoch - 1)
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    // NaN when no validation set was given.
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double val_acc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    int epochs_run = 0;
    int steps = 0;  // optimizer updates, one per mini-batch
    bool early_stopped = false;
    int best_epoch = 0;  // earliest epoch of the best val accuracy; 0 without val
    double best_val_acc = 0.0;
};

// Applied to each training batch before the forward pass. `rows` holds the
// dataset indices in batch order so the hook can key its own RNG on
// (seed, row, epoch) and stay deterministic under any batch schedule.
using BatchHook =
    std::function<Tensor(const Tensor& images, const std::vector<int>& rows, int epoch)>;

// Harness knobs that are not part of the published budget.
struct TrainOptions {
    const Dataset* val = nullptr;  // evaluated once per epoch when set
    std::string metrics_csv;       // append one row per epoch when non-empty
    std::string checkpoint_path;   // rewritten whenever val accuracy improves
    BatchHook augment;             // train batches only; never applied to val
    // Stop once the train loss has improved by less than 1e-5 for 20
    // consecutive epochs.
    bool early_stop = true;
    std::ostream* log = nullptr;  // warnings; std::cerr when null
};

// Eval-mode loss and accuracy over the whole set. Never touches batchnorm
// running statistics and never applies dropout.
struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};
EvalResult evaluate(Network& net, const Dataset& data, int batch_size = 500);

// Shuffled mini-batch RMSProp against the cross-entropy at the head logits.
// The dataset is reshuffled every epoch from cfg.seed; the final short batch
// is processed, not dropped. cfg.dropout is installed into the network's own
// config before the first epoch. Runs until cfg.max_epochs or the early-stop
// rule fires. Errors on an empty dataset; a batch size larger than the
// dataset clamps with a warning.
TrainResult train(Network& net, const Dataset& train_set, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

struct ReplayResult {
    Network net;         // fresh net trained on the full set for best_epoch epochs
    int best_epoch = 0;  // earliest epoch of the best phase-1 val accuracy
    int fit_size = 0;    // phase-1 split sizes
    int val_size = 0;
    TrainResult phase1;
    TrainResult phase2;
};

// Two-phase protocol: hold out val_fraction of the rows to find the epoch
// with the best validation accuracy, then train a fresh net from the same
// factory on the full set for exactly that many epochs. opts.val must be
// null; the split is made internally from cfg.seed.
ReplayResult epoch_replay_fit(const std::function<Network()>& net_factory,
                              const Dataset& full_train, double val_fraction,
                              const TrainConfig& cfg, const TrainOptions& opts = {});

struct Fold {
    std::vector<int> train;  // dataset row indices
    std::vector<int> val;
};

// Seeded k-fold partition of n rows: the validation folds are disjoint,
// cover every row exactly once, and differ in size by at most one.
std::vector<Fold> kfold_split(int n, int k, std::uint64_t seed);
std::vector<Fold> kfold_split(const Dataset& data, int k, std::uint64_t seed);

// Two-stage alternative to training everything against one loss; proposed
// variant only. Stage 1 trains each column in isolation against a temporary
// softmax head on its deepest local FC. Stage 2 freezes the conv path and
// trains every FC block against the final-head loss. With opts.val set the
// weights of the epoch with the lowest validation loss are kept and the
// checkpoint (when requested) is written from them; the temporary heads
// never enter the network state. Returns the stage-2 metrics.
TrainResult train_columns_separately(Network& net, const Dataset& train_set,
                                     const TrainConfig& cfg, const TrainOptions& opts = {});

}  // namespace mscnn
