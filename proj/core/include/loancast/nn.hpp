#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

#include "loancast/tensor.hpp"

namespace loancast {

// Convolution parameters. `kernel`, `padding` and `stride` have one entry
// per spatial axis: 2 for conv2d (h, w), 3 for conv3d (depth, h, w).
// weight shape is [out_channels, in_channels, kernel...].
template <typename T>
struct ConvParams {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  std::vector<int64_t> kernel;
  std::vector<int64_t> padding;
  std::vector<int64_t> stride;
  Tensor<T> weight;
  Tensor<T> bias;
};

// Fan-in-scaled uniform init: weight, bias ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <typename T>
ConvParams<T> make_conv(int64_t in_channels, int64_t out_channels, std::vector<int64_t> kernel,
                        std::vector<int64_t> padding, std::vector<int64_t> stride,
                        std::mt19937_64& rng);

template <typename T>
struct BatchNormState {
  int64_t channels = 0;
  bool affine = true;
  Tensor<T> gamma;  // undefined when !affine
  Tensor<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  Mode mode = Mode::kTrain;
  bool initialized = false;  // running stats seen at least one batch (or loaded)
};

template <typename T>
BatchNormState<T> make_batchnorm(int64_t channels, bool affine = true);

// x: [N,C,spatial...]; standard cross-correlation with bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p);
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvParams<T>& p);

// Max pooling; stride defaults to the window. Backward routes the gradient
// to the first (lowest-index) maximal element of each window.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::array<int64_t, 2> window,
                    std::array<int64_t, 2> stride);
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x, std::array<int64_t, 3> window,
                    std::array<int64_t, 3> stride);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// Row-wise softmax over the channel axis of [N,C].
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

// [N,K,spatial...] -> [N,K], mean over every non-batch, non-channel axis.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// Batch normalization over the channel axis (axis 1). Train mode uses batch
// statistics and updates the running ones; eval mode requires initialized
// running statistics.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state);
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state, Mode mode);

// Inverted dropout: train mode zeroes elements with probability p and scales
// survivors by 1/(1-p); eval mode is the identity (rng untouched).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, std::mt19937_64& rng);

// Mean binary cross entropy. `probs` is [N,2] (positive class = column 1),
// [N,1] or [N] of positive-class probabilities. Probabilities are clamped
// to [1e-7, 1-1e-7] before the logs.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& probs, std::span<const int> labels);

}  // namespace loancast
