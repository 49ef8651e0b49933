#include "loancast/loan.hpp"

#include <cmath>

namespace loancast {

template <typename T>
CondNormState<T> make_cond_norm(int64_t channels) {
  CondNormState<T> s;
  s.channels = channels;
  s.running_mean.assign(static_cast<size_t>(channels), T(0));
  s.running_var.assign(static_cast<size_t>(channels), T(1));
  return s;
}

template <typename T>
LoanLayer<T> make_loan_layer(LoanVariant variant, int64_t cond_channels, int64_t dyn_channels,
                             bool normalize_dynamic, std::mt19937_64& rng, double init_scale) {
  LoanLayer<T> layer;
  layer.variant = variant;
  layer.dyn_channels = dyn_channels;
  layer.normalize_dynamic = normalize_dynamic;

  int64_t proj_in = cond_channels;
  if (variant == LoanVariant::kVariableConditioned) {
    layer.pre_conv = make_conv<T>(cond_channels, 2 * cond_channels, {3, 3}, {1, 1}, {1, 1}, rng);
    proj_in = 2 * cond_channels;
  }
  layer.cond_norm = make_cond_norm<T>(proj_in);

  auto near_identity_conv = [&](T bias_value) {
    ConvParams<T> c = make_conv<T>(proj_in, dyn_channels, {3, 3}, {1, 1}, {1, 1}, rng);
    std::uniform_real_distribution<double> dist(-init_scale, init_scale);
    for (T& w : c.weight.values_mut()) w = static_cast<T>(dist(rng));
    for (T& b : c.bias.values_mut()) b = bias_value;
    return c;
  };
  layer.gamma_conv = near_identity_conv(T(1));
  layer.beta_conv = near_identity_conv(T(0));
  return layer;
}

template <typename T>
Tensor<T> normalize_conditional_map(const Tensor<T>& z_s, CondNormState<T>& state, Mode mode) {
  LOANCAST_CHECK_DIM(z_s.rank() == 4, "normalize_conditional_map: want [N,K,H,W], got ",
                     shape_str(z_s.shape()));
  const int64_t batch = z_s.extent(0), channels = z_s.extent(1);
  const int64_t plane = z_s.extent(2) * z_s.extent(3);
  LOANCAST_CHECK_DIM(channels == state.channels, "normalize_conditional_map: channels ", channels,
                     " != state channels ", state.channels);
  const int64_t per_channel = batch * plane;

  std::vector<T> mean(static_cast<size_t>(channels)), sigma(static_cast<size_t>(channels));
  if (mode == Mode::kTrain) {
    LOANCAST_CHECK(batch >= 1, "normalize_conditional_map: empty batch in train mode");
    for (int64_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (int64_t n = 0; n < batch; ++n) {
        const T* block = z_s.data() + (n * channels + c) * plane;
        for (int64_t j = 0; j < plane; ++j) acc += static_cast<double>(block[j]);
      }
      const double mu = acc / static_cast<double>(per_channel);
      double var_acc = 0.0;
      for (int64_t n = 0; n < batch; ++n) {
        const T* block = z_s.data() + (n * channels + c) * plane;
        for (int64_t j = 0; j < plane; ++j) {
          const double d = static_cast<double>(block[j]) - mu;
          var_acc += d * d;
        }
      }
      const double var = var_acc / static_cast<double>(per_channel);
      mean[static_cast<size_t>(c)] = static_cast<T>(mu);
      sigma[static_cast<size_t>(c)] = static_cast<T>(std::sqrt(var));
      state.running_mean[static_cast<size_t>(c)] =
          static_cast<T>((1.0 - static_cast<double>(state.momentum)) *
                             state.running_mean[static_cast<size_t>(c)] +
                         static_cast<double>(state.momentum) * mu);
      state.running_var[static_cast<size_t>(c)] =
          static_cast<T>((1.0 - static_cast<double>(state.momentum)) *
                             state.running_var[static_cast<size_t>(c)] +
                         static_cast<double>(state.momentum) * var);
    }
    state.initialized = true;
  } else {
    LOANCAST_CHECK(state.initialized,
                   "normalize_conditional_map: eval mode before any statistic update");
    for (int64_t c = 0; c < channels; ++c) {
      mean[static_cast<size_t>(c)] = state.running_mean[static_cast<size_t>(c)];
      sigma[static_cast<size_t>(c)] =
          static_cast<T>(std::sqrt(static_cast<double>(state.running_var[static_cast<size_t>(c)])));
    }
  }

  Tensor<T> out = Tensor<T>::zeros(z_s.shape());
  const T* px = z_s.data();
  T* po = out.data();
  const double eps = static_cast<double>(state.eps);
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t c = 0; c < channels; ++c) {
      const double mu = static_cast<double>(mean[static_cast<size_t>(c)]);
      const double denom = static_cast<double>(sigma[static_cast<size_t>(c)]) + eps;
      const T* bin = px + (n * channels + c) * plane;
      T* bout = po + (n * channels + c) * plane;
      for (int64_t j = 0; j < plane; ++j)
        bout[j] = static_cast<T>((static_cast<double>(bin[j]) - mu) / denom);
    }

  if (grad_enabled<T>({&z_s})) {
    auto xn = z_s.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, on, mode, mean = std::move(mean), sigma = std::move(sigma),
                                eps, batch, channels, plane]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      const int64_t per_channel = batch * plane;
      const T* g = on->grad.data();
      const T* px = xn->data.data();
      T* gx = xn->grad.data();
      for (int64_t c = 0; c < channels; ++c) {
        const double mu = static_cast<double>(mean[static_cast<size_t>(c)]);
        const double sg = static_cast<double>(sigma[static_cast<size_t>(c)]);
        const double denom = sg + eps;
        if (mode == Mode::kEval) {
          for (int64_t n = 0; n < batch; ++n) {
            const int64_t base = (n * channels + c) * plane;
            for (int64_t j = 0; j < plane; ++j)
              gx[base + j] += static_cast<T>(static_cast<double>(g[base + j]) / denom);
          }
          continue;
        }
        double sum_g = 0.0, sum_gxc = 0.0;  // sum g, sum g*(x - mu)
        for (int64_t n = 0; n < batch; ++n) {
          const int64_t base = (n * channels + c) * plane;
          for (int64_t j = 0; j < plane; ++j) {
            const double gv = static_cast<double>(g[base + j]);
            sum_g += gv;
            sum_gxc += gv * (static_cast<double>(px[base + j]) - mu);
          }
        }
        const double mean_g = sum_g / static_cast<double>(per_channel);
        // d sigma / d x_i = (x_i - mu) / (M sigma); drop the term for a
        // constant channel where sigma vanishes.
        const double sigma_safe = std::max(sg, 1e-30);
        const double coeff =
            (sg > 0.0) ? sum_gxc / (static_cast<double>(per_channel) * sigma_safe * denom * denom)
                       : 0.0;
        for (int64_t n = 0; n < batch; ++n) {
          const int64_t base = (n * channels + c) * plane;
          for (int64_t j = 0; j < plane; ++j) {
            const double xc = static_cast<double>(px[base + j]) - mu;
            gx[base + j] += static_cast<T>((static_cast<double>(g[base + j]) - mean_g) / denom -
                                           coeff * xc);
          }
        }
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> generate_modulation(const Tensor<T>& z_hat,
                                                    const LoanLayer<T>& layer) {
  Tensor<T> gamma = conv2d(z_hat, layer.gamma_conv);
  Tensor<T> beta = conv2d(z_hat, layer.beta_conv);
  LOANCAST_CHECK_DIM(gamma.extent(1) == layer.dyn_channels,
                     "generate_modulation: projection produced ", gamma.extent(1),
                     " channels, dynamic block has ", layer.dyn_channels);
  return {std::move(gamma), std::move(beta)};
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& z_d, const Tensor<T>& gamma_s, const Tensor<T>& beta_s) {
  LOANCAST_CHECK_DIM(z_d.rank() == 5, "modulate: want z_d [N,K,D,H,W], got ",
                     shape_str(z_d.shape()));
  LOANCAST_CHECK_DIM(gamma_s.rank() == 4 && beta_s.rank() == 4 &&
                         gamma_s.shape() == beta_s.shape(),
                     "modulate: gamma/beta must both be [N,K,H,W]");
  const int64_t batch = z_d.extent(0), channels = z_d.extent(1), depth = z_d.extent(2);
  const int64_t h = z_d.extent(3), w = z_d.extent(4);
  LOANCAST_CHECK_DIM(gamma_s.extent(0) == batch && gamma_s.extent(1) == channels &&
                         gamma_s.extent(2) == h && gamma_s.extent(3) == w,
                     "modulate: spatial mismatch, z_d ", shape_str(z_d.shape()), " vs gamma ",
                     shape_str(gamma_s.shape()));

  Tensor<T> out = Tensor<T>::zeros(z_d.shape());
  const int64_t plane = h * w;
  const T* pz = z_d.data();
  const T* pg = gamma_s.data();
  const T* pb = beta_s.data();
  T* po = out.data();
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t c = 0; c < channels; ++c) {
      const T* gp = pg + (n * channels + c) * plane;
      const T* bp = pb + (n * channels + c) * plane;
      for (int64_t t = 0; t < depth; ++t) {
        const int64_t base = ((n * channels + c) * depth + t) * plane;
        for (int64_t j = 0; j < plane; ++j) po[base + j] = pz[base + j] * gp[j] + bp[j];
      }
    }

  if (grad_enabled<T>({&z_d, &gamma_s, &beta_s})) {
    auto zn = z_d.node();
    auto gn = gamma_s.node();
    auto bn = beta_s.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([zn, gn, bn, on, batch, channels, depth, plane]() {
      if (on->grad.empty()) return;
      const T* g = on->grad.data();
      const T* pz = zn->data.data();
      const T* pg = gn->data.data();
      if (zn->requires_grad && zn->grad.empty()) zn->grad.assign(zn->data.size(), T(0));
      if (gn->requires_grad && gn->grad.empty()) gn->grad.assign(gn->data.size(), T(0));
      if (bn->requires_grad && bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
      for (int64_t n = 0; n < batch; ++n)
        for (int64_t c = 0; c < channels; ++c) {
          const int64_t mod_base = (n * channels + c) * plane;
          for (int64_t t = 0; t < depth; ++t) {
            const int64_t base = ((n * channels + c) * depth + t) * plane;
            for (int64_t j = 0; j < plane; ++j) {
              const T gv = g[base + j];
              if (zn->requires_grad) zn->grad[base + j] += gv * pg[mod_base + j];
              if (gn->requires_grad) gn->grad[mod_base + j] += gv * pz[base + j];
              if (bn->requires_grad) bn->grad[mod_base + j] += gv;
            }
          }
        }
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int64_t target_h, int64_t target_w) {
  LOANCAST_CHECK_DIM(x.rank() == 4, "resize_nearest: want [N,C,H,W], got ", shape_str(x.shape()));
  const int64_t batch = x.extent(0), channels = x.extent(1);
  const int64_t src_h = x.extent(2), src_w = x.extent(3);
  LOANCAST_CHECK(src_h >= target_h && src_w >= target_w,
                 "resize_nearest: only down-sampling supported (", src_h, "x", src_w, " -> ",
                 target_h, "x", target_w, ")");
  if (src_h == target_h && src_w == target_w) {
    // Identity resize still yields fresh storage.
    Tensor<T> out = Tensor<T>::from_vector(x.shape(),
                                           std::vector<T>(x.data(), x.data() + x.numel()));
    if (grad_enabled<T>({&x})) {
      auto xn = x.node();
      auto on = out.node();
      Tape<T>* tape = Tape<T>::active();
      int64_t idx = tape->record([xn, on]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
        for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
      });
      tape->attach(out, idx);
    }
    return out;
  }

  std::vector<int64_t> map_h(static_cast<size_t>(target_h)), map_w(static_cast<size_t>(target_w));
  for (int64_t i = 0; i < target_h; ++i)
    map_h[static_cast<size_t>(i)] = static_cast<int64_t>(
        std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(src_h) /
                   static_cast<double>(target_h)));
  for (int64_t i = 0; i < target_w; ++i)
    map_w[static_cast<size_t>(i)] = static_cast<int64_t>(
        std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(src_w) /
                   static_cast<double>(target_w)));

  Tensor<T> out = Tensor<T>::zeros({batch, channels, target_h, target_w});
  const T* px = x.data();
  T* po = out.data();
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t c = 0; c < channels; ++c) {
      const T* src = px + (n * channels + c) * src_h * src_w;
      T* dst = po + (n * channels + c) * target_h * target_w;
      for (int64_t i = 0; i < target_h; ++i)
        for (int64_t j = 0; j < target_w; ++j)
          dst[i * target_w + j] =
              src[map_h[static_cast<size_t>(i)] * src_w + map_w[static_cast<size_t>(j)]];
    }

  if (grad_enabled<T>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, on, map_h = std::move(map_h), map_w = std::move(map_w), batch,
                                channels, src_h, src_w, target_h, target_w]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      const T* g = on->grad.data();
      T* gx = xn->grad.data();
      for (int64_t n = 0; n < batch; ++n)
        for (int64_t c = 0; c < channels; ++c) {
          const int64_t src_base = (n * channels + c) * src_h * src_w;
          const int64_t dst_base = (n * channels + c) * target_h * target_w;
          for (int64_t i = 0; i < target_h; ++i)
            for (int64_t j = 0; j < target_w; ++j)
              gx[src_base + map_h[static_cast<size_t>(i)] * src_w +
                 map_w[static_cast<size_t>(j)]] += g[dst_base + i * target_w + j];
        }
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> prepare_conditional_map(const Tensor<T>& static_vars, const LoanLayer<T>& layer,
                                  int64_t target_h, int64_t target_w) {
  LOANCAST_CHECK(layer.variant == LoanVariant::kVariableConditioned && layer.pre_conv.has_value(),
                 "prepare_conditional_map: layer is not variable-conditioned");
  Tensor<T> resized = resize_nearest(static_vars, target_h, target_w);
  return conv2d(resized, *layer.pre_conv);
}

template <typename T>
Tensor<T> loan_apply(LoanLayer<T>& layer, const Tensor<T>& z_d, const Tensor<T>& cond,
                     Mode mode) {
  Tensor<T> cond_map = cond;
  if (layer.variant == LoanVariant::kVariableConditioned)
    cond_map = prepare_conditional_map(cond, layer, z_d.extent(3), z_d.extent(4));
  Tensor<T> z_hat = normalize_conditional_map(cond_map, layer.cond_norm, mode);
  auto [gamma_s, beta_s] = generate_modulation(z_hat, layer);
  return modulate(z_d, gamma_s, beta_s);
}

#define LOANCAST_INSTANTIATE_LOAN(T)                                                          \
  template CondNormState<T> make_cond_norm<T>(int64_t);                                       \
  template LoanLayer<T> make_loan_layer<T>(LoanVariant, int64_t, int64_t, bool,               \
                                           std::mt19937_64&, double);                         \
  template Tensor<T> normalize_conditional_map<T>(const Tensor<T>&, CondNormState<T>&, Mode); \
  template std::pair<Tensor<T>, Tensor<T>> generate_modulation<T>(const Tensor<T>&,           \
                                                                  const LoanLayer<T>&);       \
  template Tensor<T> modulate<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> resize_nearest<T>(const Tensor<T>&, int64_t, int64_t);                   \
  template Tensor<T> prepare_conditional_map<T>(const Tensor<T>&, const LoanLayer<T>&,        \
                                                int64_t, int64_t);                            \
  template Tensor<T> loan_apply<T>(LoanLayer<T>&, const Tensor<T>&, const Tensor<T>&, Mode);

LOANCAST_INSTANTIATE_LOAN(float)
LOANCAST_INSTANTIATE_LOAN(double)

#undef LOANCAST_INSTANTIATE_LOAN

}  // namespace loancast
