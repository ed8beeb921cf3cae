#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mscnn/layers.hpp"
#include "mscnn/tensor.hpp"

namespace mscnn {

// Wiring variants. `proposed` is the full three-column net with level fusion
// and the raw-image tap. `local_only` keeps just the deepest tap per column.
// `baseline1` concatenates all nine local-FC outputs straight into the final
// FC, `baseline2` fuses per column instead of per level, and `baseline3` is
// `proposed` plus a conv-level skip: level-3 convolves the channel-concat of
// the level-1 and level-2 feature maps.
enum class Variant { proposed, local_only, baseline1, baseline2, baseline3 };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// One conv level: conv (square kernel, given stride, same padding), optional
// 2x2/2 max pool, batchnorm, relu; plus the width of the local FC tapped off
// this level's output.
struct LevelSpec {
    int channels = 0;
    int stride = 1;
    bool pool = false;
    int kernel = 3;
    int local_fc = 0;
};

struct ColumnSpec {
    std::array<LevelSpec, 3> levels;
};

// Networks always take 1x32x32 inputs and have 3 columns of 3 levels; the
// config chooses the widths and the wiring variant.
struct NetworkConfig {
    Variant variant = Variant::proposed;
    std::array<ColumnSpec, 3> columns;
    std::array<int, 3> fusion_fc = {3584, 8192, 5120};  // level fusion FCs
    int raw_fc = 512;                                   // FC tapped off the raw image
    int final_fc = 2048;                                // descriptor width
    std::array<int, 3> column_fc = {2048, 5120, 8192};  // per-column fusion FCs
    int classes = 10;
    double dropout = 0.5;
};

// Full-width architecture with the published layer inventory. Kernel sizes
// form a Latin square so each column and each level mixes all three scales:
// column 1 uses (3,5,7) over its levels, column 2 (5,7,3), column 3 (7,3,5).
NetworkConfig full_config(Variant v = Variant::proposed, int classes = 10);

// Same wiring and kernel schedule at a fraction of the width; fits quick
// experiments and the test suite.
NetworkConfig small_config(Variant v = Variant::proposed, int classes = 10);

std::string describe_config(const NetworkConfig& cfg);  // flat key=value lines
NetworkConfig parse_config_text(const std::string& text);

// Closed-form widths implied by a config, computed without building the
// network. Indexing is [level][column] throughout.
struct WidthReport {
    std::array<std::array<int, 3>, 3> spatial;   // extent after each level block
    std::array<std::array<int, 3>, 3> channels;  // channels after each level block
    std::array<std::array<int, 3>, 3> x_flat;    // flattened conv-level outputs
    std::array<std::array<int, 3>, 3> y;         // local FC widths
    std::array<int, 3> w;                        // level concats across columns
    std::array<int, 3> column_concat;            // per-column concats down the levels
    int g = 0;                                   // input width of the final FC
    int descriptor = 0;
    std::array<int, 3> level3_in_channels;       // conv input channels at level 3
};
WidthReport infer_widths(const NetworkConfig& cfg);

// Trainable parameter count as a pure function of the config.
std::size_t parameter_count(const NetworkConfig& cfg);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Everything the forward pass produces. Variants leave the fields they do
// not compute default-constructed; baseline2 stores its column-fusion
// outputs in f1..f3 since they take the level-fusion slots of g.
struct FeatureBundle {
    std::array<std::array<Tensor, 3>, 3> x;  // [level][column] conv-level outputs
    std::array<std::array<Tensor, 3>, 3> y;  // [level][column] local FC outputs
    std::array<Tensor, 3> w;                 // per-level concats
    Tensor f0, f1, f2, f3;                   // raw tap and fusion outputs
    Tensor g;                                // final-FC input
    Tensor descriptor;                       // final FC output, pre-head
    Tensor logits;
};

// conv -> optional 2x2/2 max pool -> batchnorm -> relu
struct ConvBlock {
    Conv2d conv;
    BatchNorm bn;
    bool pool = false;
    Tensor forward(const Tensor& x, Mode mode);
};

// linear -> batchnorm -> relu -> optional inverted dropout (train mode only)
struct FcBlock {
    Linear fc;
    BatchNorm bn;
    bool dropped = true;  // the final FC block opts out
    Tensor forward(const Tensor& x, Mode mode, double rate, std::mt19937_64* rng);
};

class Network {
public:
    // Allocates and initializes every parameter the variant needs. The same
    // (config, seed) pair always yields bit-identical parameters.
    Network(NetworkConfig cfg, std::uint64_t seed);

    const NetworkConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    // The dropout rate is a training knob; the trainer installs its budget
    // here so checkpoints echo the rate that was actually applied.
    void set_dropout(double rate);

    // Runs the variant's wiring. `rng` drives dropout and is required in
    // train mode when the dropout rate is positive.
    FeatureBundle forward(const Tensor& batch, Mode mode, std::mt19937_64* rng = nullptr);

    // Variant-checked conveniences returning just the logits.
    Tensor forward_local_only(const Tensor& batch, Mode mode = Mode::eval,
                              std::mt19937_64* rng = nullptr);
    Tensor forward_baseline(const Tensor& batch, Variant variant, Mode mode = Mode::eval,
                            std::mt19937_64* rng = nullptr);

    // Deep path of one column (levels 1-3 plus the level-3 local FC); used
    // when columns are pretrained in isolation.
    Tensor forward_column_deep(int column, const Tensor& batch, Mode mode,
                               std::mt19937_64* rng = nullptr);

    // Eval-mode descriptor of a single image (any tensor of 1024 elements).
    std::vector<double> extract_descriptor(const Tensor& image);
    // Eval-mode descriptors for a whole batch, (b, final_fc).
    Tensor descriptors(const Tensor& batch);

    std::vector<NamedTensor> named_parameters();  // trainable tensors
    std::vector<NamedTensor> named_state();       // plus batchnorm running stats
    std::vector<Tensor> parameters();
    void zero_grad();
    void drop_grads();

    // Freezing the conv path flips its parameters to non-trainable and runs
    // its batchnorms in eval mode regardless of the forward mode.
    void freeze_convs(bool frozen);
    bool convs_frozen() const { return frozen_convs_; }

private:
    Tensor conv_cascade(int column, const Tensor& batch, Mode mode,
                        std::array<Tensor, 3>* taps);

    NetworkConfig cfg_;
    std::uint64_t seed_;
    bool frozen_convs_ = false;

    std::array<std::array<ConvBlock, 3>, 3> conv_;           // [column][level]
    std::array<std::array<std::optional<FcBlock>, 3>, 3> local_;  // [column][level]
    std::array<std::optional<FcBlock>, 3> fuse_;              // F1..F3
    std::optional<FcBlock> raw_;                              // F0
    std::array<std::optional<FcBlock>, 3> column_fuse_;       // baseline2
    FcBlock final_;
    Linear head_;
};

// Spec'd operation heads; thin wrappers that make call sites read like the
// experiment descriptions.
Network build_network(const NetworkConfig& cfg, std::uint64_t seed);
FeatureBundle forward(Network& net, const Tensor& batch, Mode mode,
                      std::mt19937_64* rng = nullptr);

}  // namespace mscnn
