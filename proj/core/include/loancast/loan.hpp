#pragma once

#include <optional>
#include <utility>

#include "loancast/nn.hpp"
#include "loancast/tensor.hpp"

namespace loancast {

enum class LoanVariant {
  kActivationConditioned,  // conditional map = static-branch activation
  kVariableConditioned     // conditional map = raw static variables
};

// Running statistics for the conditional-map normalization so that eval mode
// on small batches stays well defined. Normalization divides by (sigma + eps),
// with sigma the per-channel standard deviation over (batch, h, w).
template <typename T>
struct CondNormState {
  int64_t channels = 0;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  bool initialized = false;
};

template <typename T>
CondNormState<T> make_cond_norm(int64_t channels);

// Location-aware adaptive normalization. Produces per-sample, per-location,
// per-channel scale gamma_s and bias beta_s from a conditional map and
// applies them uniformly across the temporal axis of a dynamic activation.
//
// normalize_dynamic records whether the modulated activation has already
// been batch-normalized without affine terms (first-block placement); the
// normalization itself is owned by the model.
template <typename T>
struct LoanLayer {
  LoanVariant variant = LoanVariant::kActivationConditioned;
  int64_t dyn_channels = 0;  // K_i of the modulated activation
  bool normalize_dynamic = false;
  CondNormState<T> cond_norm;
  std::optional<ConvParams<T>> pre_conv;  // variable-conditioned: C -> 2C, 3x3
  ConvParams<T> gamma_conv;               // -> K_i, 3x3, same padding
  ConvParams<T> beta_conv;                // -> K_i, 3x3, same padding
};

// Projection convs start near the identity modulation: weights ~ U(-w0,+w0)
// with w0 = init_scale, gamma bias 1, beta bias 0.
template <typename T>
LoanLayer<T> make_loan_layer(LoanVariant variant, int64_t cond_channels, int64_t dyn_channels,
                             bool normalize_dynamic, std::mt19937_64& rng,
                             double init_scale = 1e-5);

// Channel-wise normalization of the conditional map: (z - mu_k) / (sigma_k + eps)
// with train-mode statistics over (batch, h, w) per channel.
template <typename T>
Tensor<T> normalize_conditional_map(const Tensor<T>& z_s, CondNormState<T>& state, Mode mode);

// Two parallel 3x3 convolutions over the normalized map -> (gamma_s, beta_s).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> generate_modulation(const Tensor<T>& z_hat,
                                                    const LoanLayer<T>& layer);

// out[n,k,t,h,w] = z_d[n,k,t,h,w] * gamma_s[n,k,h,w] + beta_s[n,k,h,w]; the
// same (gamma_s, beta_s) at every t.
template <typename T>
Tensor<T> modulate(const Tensor<T>& z_d, const Tensor<T>& gamma_s, const Tensor<T>& beta_s);

// Nearest-neighbor down-sampling with half-pixel centers:
// src index = floor((i + 0.5) * src_extent / dst_extent). Up-sampling is
// rejected.
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int64_t target_h, int64_t target_w);

// Variable-conditioned entry: resize raw static variables to the dynamic
// activation's spatial extents, then pre_conv doubles the channels.
template <typename T>
Tensor<T> prepare_conditional_map(const Tensor<T>& static_vars, const LoanLayer<T>& layer,
                                  int64_t target_h, int64_t target_w);

// Full layer: conditional map -> (gamma_s, beta_s) -> modulated activation.
template <typename T>
Tensor<T> loan_apply(LoanLayer<T>& layer, const Tensor<T>& z_d, const Tensor<T>& cond,
                     Mode mode);

}  // namespace loancast
