#pragma once

#include <random>

#include "mscnn/tensor.hpp"

namespace mscnn {

enum class Mode { train, eval };

// --- neural net ops ---------------------------------------------------------
// All ops take image batches as (batch, channel, row, column) and flat
// batches as (batch, feature). Each records its backward rule on the active
// tape as one fused entry.

// Cross-correlation with square kernels, same padding of kernel/2 on every
// side. For odd kernels the output extent is ceil(input/stride).
// x (n,c,h,w) * weight (oc,c,k,k) + bias (oc) -> (n,oc,h',w')
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride);

// Max pooling. Windows start at multiples of the stride; positions past the
// input edge act as minus infinity, so the output extent is
// ceil(input/stride) and a trailing odd row or column still gets a window.
// Ties route the gradient to the first element in window scan order.
Tensor maxpool2d(const Tensor& x, int extent = 2, int stride = 2);

Tensor relu(const Tensor& x);

// x (n,in) * weight (out,in) transposed + bias (out) -> (n,out)
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Batch normalization over the batch axis (and both spatial axes for 4-d
// input), one statistic per feature or channel. Normalization uses the
// biased batch variance; the running variance absorbs the unbiased one:
//   running <- (1 - momentum) * running + momentum * batch
// Gradients flow through the batch statistics.
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       Tensor& running_mean, Tensor& running_var,
                       double momentum = 0.1, double eps = 1e-5);

// Normalizes with the stored running statistics as constants.
Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Tensor& running_mean, const Tensor& running_var,
                      double eps = 1e-5);

// Inverted dropout: zeroes each element with probability `rate` and scales
// survivors by 1/(1-rate), so the expected activation is unchanged and eval
// mode is the identity.
Tensor dropout(const Tensor& x, double rate, Mode mode, std::mt19937_64& rng);

// Rowwise stable softmax for (n,k) scores.
Tensor softmax(const Tensor& x);

// --- initialization ---------------------------------------------------------

// Zero-mean normal with stddev sqrt(2 / fan_in), where fan_in is the product
// of all extents past the first (input channels times kernel area for conv
// weights, input width for linear weights).
Tensor he_weight(Shape shape, std::mt19937_64& rng);

// --- parameter-owning layers -------------------------------------------------

struct Conv2d {
    Tensor weight, bias;
    int stride = 1;

    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride); }
};

struct Linear {
    Tensor weight, bias;

    Linear() = default;
    Linear(int in, int out, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
    int out_features() const { return weight.dim(0); }
};

struct BatchNorm {
    Tensor gamma, beta, running_mean, running_var;

    BatchNorm() = default;
    explicit BatchNorm(int features);
    Tensor operator()(const Tensor& x, Mode mode) {
        return mode == Mode::train
                   ? batchnorm_train(x, gamma, beta, running_mean, running_var)
                   : batchnorm_eval(x, gamma, beta, running_mean, running_var);
    }
};

}  // namespace mscnn
