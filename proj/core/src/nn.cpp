#include "loancast/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"

namespace loancast {

namespace {

// Shared 2d/3d convolution geometry; 2d runs with a unit depth axis.
struct ConvGeom {
  int64_t batch, cin, cout;
  std::array<int64_t, 3> in;      // (d, h, w)
  std::array<int64_t, 3> kernel;  // (kd, kh, kw)
  std::array<int64_t, 3> pad;
  std::array<int64_t, 3> stride;
  std::array<int64_t, 3> out;
  int64_t patch() const { return cin * kernel[0] * kernel[1] * kernel[2]; }
  int64_t cols() const { return out[0] * out[1] * out[2]; }
  int64_t in_sample() const { return cin * in[0] * in[1] * in[2]; }
  int64_t out_sample() const { return cout * cols(); }
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const ConvParams<T>& p, int spatial_rank) {
  LOANCAST_CHECK_DIM(x.rank() == 2 + spatial_rank, "conv: input rank ", x.rank(), " for ",
                     spatial_rank, "d convolution");
  LOANCAST_CHECK_DIM(static_cast<int>(p.kernel.size()) == spatial_rank &&
                         p.padding.size() == p.kernel.size() && p.stride.size() == p.kernel.size(),
                     "conv: kernel/padding/stride must have ", spatial_rank, " axes");
  LOANCAST_CHECK_DIM(x.extent(1) == p.in_channels, "conv: input channels ", x.extent(1),
                     " != configured ", p.in_channels);
  const int64_t expect_w = p.out_channels * p.in_channels * shape_numel(p.kernel);
  LOANCAST_CHECK_DIM(p.weight.defined() && p.weight.numel() == expect_w,
                     "conv: weight numel mismatch");
  LOANCAST_CHECK_DIM(p.bias.defined() && p.bias.numel() == p.out_channels,
                     "conv: bias numel mismatch");

  ConvGeom g;
  g.batch = x.extent(0);
  g.cin = p.in_channels;
  g.cout = p.out_channels;
  const int off = 3 - spatial_rank;  // leading depth axis is synthetic for 2d
  g.in = {1, 1, 1};
  g.kernel = {1, 1, 1};
  g.pad = {0, 0, 0};
  g.stride = {1, 1, 1};
  for (int a = 0; a < spatial_rank; ++a) {
    g.in[off + a] = x.extent(2 + a);
    g.kernel[off + a] = p.kernel[a];
    g.pad[off + a] = p.padding[a];
    g.stride[off + a] = p.stride[a];
    LOANCAST_CHECK_DIM(p.stride[a] > 0 && p.kernel[a] > 0 && p.padding[a] >= 0,
                       "conv: bad kernel/stride/padding on axis ", a);
  }
  for (int a = 0; a < 3; ++a) {
    g.out[a] = (g.in[a] + 2 * g.pad[a] - g.kernel[a]) / g.stride[a] + 1;
    LOANCAST_CHECK_DIM(g.in[a] + 2 * g.pad[a] >= g.kernel[a] && g.out[a] >= 1,
                       "conv: output extent underflow on axis ", a);
  }
  return g;
}

// cols[r, p] for r over (c, kd, kh, kw) and p over (od, oh, ow).
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int64_t P = g.cols();
  const auto [ID, IH, IW] = g.in;
  const auto [OD, OH, OW] = g.out;
  int64_t r = 0;
  for (int64_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * ID * IH * IW;
    for (int64_t kd = 0; kd < g.kernel[0]; ++kd)
      for (int64_t kh = 0; kh < g.kernel[1]; ++kh)
        for (int64_t kw = 0; kw < g.kernel[2]; ++kw, ++r) {
          T* row = cols + r * P;
          int64_t p = 0;
          for (int64_t od = 0; od < OD; ++od) {
            const int64_t id = od * g.stride[0] + kd - g.pad[0];
            for (int64_t oh = 0; oh < OH; ++oh) {
              const int64_t ih = oh * g.stride[1] + kh - g.pad[1];
              for (int64_t ow = 0; ow < OW; ++ow, ++p) {
                const int64_t iw = ow * g.stride[2] + kw - g.pad[2];
                const bool inside = id >= 0 && id < ID && ih >= 0 && ih < IH && iw >= 0 && iw < IW;
                row[p] = inside ? xc[(id * IH + ih) * IW + iw] : T(0);
              }
            }
          }
        }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const int64_t P = g.cols();
  const auto [ID, IH, IW] = g.in;
  const auto [OD, OH, OW] = g.out;
  int64_t r = 0;
  for (int64_t c = 0; c < g.cin; ++c) {
    T* xc = dx + c * ID * IH * IW;
    for (int64_t kd = 0; kd < g.kernel[0]; ++kd)
      for (int64_t kh = 0; kh < g.kernel[1]; ++kh)
        for (int64_t kw = 0; kw < g.kernel[2]; ++kw, ++r) {
          const T* row = cols + r * P;
          int64_t p = 0;
          for (int64_t od = 0; od < OD; ++od) {
            const int64_t id = od * g.stride[0] + kd - g.pad[0];
            for (int64_t oh = 0; oh < OH; ++oh) {
              const int64_t ih = oh * g.stride[1] + kh - g.pad[1];
              for (int64_t ow = 0; ow < OW; ++ow, ++p) {
                const int64_t iw = ow * g.stride[2] + kw - g.pad[2];
                if (id >= 0 && id < ID && ih >= 0 && ih < IH && iw >= 0 && iw < IW)
                  xc[(id * IH + ih) * IW + iw] += row[p];
              }
            }
          }
        }
  }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const ConvParams<T>& p, int spatial_rank) {
  const ConvGeom g = conv_geometry(x, p, spatial_rank);
  Shape out_shape{g.batch, g.cout};
  for (int a = 3 - spatial_rank; a < 3; ++a) out_shape.push_back(g.out[a]);
  Tensor<T> out = Tensor<T>::zeros(out_shape);

  const int64_t K = g.patch();
  const int64_t P = g.cols();
  std::vector<T> cols(static_cast<size_t>(K) * P);
  for (int64_t n = 0; n < g.batch; ++n) {
    im2col(x.data() + n * g.in_sample(), g, cols.data());
    T* on = out.data() + n * g.out_sample();
    detail::gemm_nn(g.cout, P, K, p.weight.data(), cols.data(), on);
    const T* bias = p.bias.data();
    for (int64_t k = 0; k < g.cout; ++k) {
      T* row = on + k * P;
      for (int64_t j = 0; j < P; ++j) row[j] += bias[k];
    }
  }

  if (grad_enabled<T>({&x, &p.weight, &p.bias})) {
    auto xn = x.node();
    auto wn = p.weight.node();
    auto bn = p.bias.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, wn, bn, on, g]() {
      if (on->grad.empty()) return;
      const int64_t K = g.patch();
      const int64_t P = g.cols();
      std::vector<T> cols(static_cast<size_t>(K) * P);
      std::vector<T> dcols;
      const bool need_dx = xn->requires_grad;
      const bool need_dw = wn->requires_grad;
      if (need_dx) {
        dcols.resize(static_cast<size_t>(K) * P);
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      }
      if (need_dw && wn->grad.empty()) wn->grad.assign(wn->data.size(), T(0));
      if (bn->requires_grad && bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
      for (int64_t n = 0; n < g.batch; ++n) {
        const T* gout = on->grad.data() + n * g.out_sample();
        if (need_dw || need_dx) im2col(xn->data.data() + n * g.in_sample(), g, cols.data());
        if (need_dw) detail::gemm_nt(g.cout, K, P, gout, cols.data(), wn->grad.data());
        if (need_dx) {
          std::fill(dcols.begin(), dcols.end(), T(0));
          detail::gemm_tn(K, P, g.cout, wn->data.data(), gout, dcols.data());
          col2im_add(dcols.data(), g, xn->grad.data() + n * g.in_sample());
        }
        if (bn->requires_grad) {
          T* gb = bn->grad.data();
          for (int64_t k = 0; k < g.cout; ++k) {
            double acc = 0.0;
            const T* row = gout + k * P;
            for (int64_t j = 0; j < P; ++j) acc += static_cast<double>(row[j]);
            gb[k] += static_cast<T>(acc);
          }
        }
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, std::array<int64_t, 3> window,
                          std::array<int64_t, 3> stride, int spatial_rank) {
  LOANCAST_CHECK_DIM(x.rank() == 2 + spatial_rank, "maxpool: input rank ", x.rank());
  const int64_t batch = x.extent(0), channels = x.extent(1);
  const int off = 3 - spatial_rank;
  std::array<int64_t, 3> in{1, 1, 1}, win{1, 1, 1}, str{1, 1, 1}, out{1, 1, 1};
  for (int a = 0; a < spatial_rank; ++a) {
    in[off + a] = x.extent(2 + a);
    win[off + a] = window[static_cast<size_t>(off + a)];
    str[off + a] = stride[static_cast<size_t>(off + a)];
  }
  for (int a = 0; a < 3; ++a) {
    LOANCAST_CHECK_DIM(win[a] >= 1 && str[a] >= 1 && win[a] <= in[a],
                       "maxpool: window does not fit input on axis ", a, " (window ", win[a],
                       ", extent ", in[a], ")");
    out[a] = (in[a] - win[a]) / str[a] + 1;
  }
  Shape out_shape{batch, channels};
  for (int a = off; a < 3; ++a) out_shape.push_back(out[a]);
  Tensor<T> result = Tensor<T>::zeros(out_shape);

  const int64_t in_plane = in[0] * in[1] * in[2];
  const int64_t out_plane = out[0] * out[1] * out[2];
  const bool recording = grad_enabled<T>({&x});
  std::vector<int64_t> argmax;
  if (recording) argmax.resize(static_cast<size_t>(batch * channels * out_plane));

  T* po = result.data();
  const T* px = x.data();
  int64_t o = 0;
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t c = 0; c < channels; ++c) {
      const T* plane = px + (n * channels + c) * in_plane;
      const int64_t base = (n * channels + c) * in_plane;
      for (int64_t od = 0; od < out[0]; ++od)
        for (int64_t oh = 0; oh < out[1]; ++oh)
          for (int64_t ow = 0; ow < out[2]; ++ow, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            int64_t best_idx = -1;
            for (int64_t kd = 0; kd < win[0]; ++kd)
              for (int64_t kh = 0; kh < win[1]; ++kh)
                for (int64_t kw = 0; kw < win[2]; ++kw) {
                  const int64_t id = od * str[0] + kd;
                  const int64_t ih = oh * str[1] + kh;
                  const int64_t iw = ow * str[2] + kw;
                  const int64_t flat = (id * in[1] + ih) * in[2] + iw;
                  const T v = plane[flat];
                  if (v > best) {  // strict: ties keep the first occurrence
                    best = v;
                    best_idx = flat;
                  }
                }
            po[o] = best;
            if (recording) argmax[static_cast<size_t>(o)] = base + best_idx;
          }
    }

  if (recording) {
    auto xn = x.node();
    auto on = result.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, on, argmax = std::move(argmax)]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      const T* g = on->grad.data();
      T* gx = xn->grad.data();
      for (size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
    });
    tape->attach(result, idx);
  }
  return result;
}

}  // namespace

template <typename T>
ConvParams<T> make_conv(int64_t in_channels, int64_t out_channels, std::vector<int64_t> kernel,
                        std::vector<int64_t> padding, std::vector<int64_t> stride,
                        std::mt19937_64& rng) {
  ConvParams<T> p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.kernel = std::move(kernel);
  p.padding = std::move(padding);
  p.stride = std::move(stride);
  const int64_t fan_in = in_channels * shape_numel(p.kernel);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Shape wshape{out_channels, in_channels};
  for (int64_t k : p.kernel) wshape.push_back(k);
  std::vector<T> w(static_cast<size_t>(shape_numel(wshape)));
  for (auto& v : w) v = static_cast<T>(dist(rng));
  std::vector<T> b(static_cast<size_t>(out_channels));
  for (auto& v : b) v = static_cast<T>(dist(rng));
  p.weight = Tensor<T>::from_vector(wshape, std::move(w), /*requires_grad=*/true);
  p.bias = Tensor<T>::from_vector({out_channels}, std::move(b), /*requires_grad=*/true);
  return p;
}

template <typename T>
BatchNormState<T> make_batchnorm(int64_t channels, bool affine) {
  BatchNormState<T> s;
  s.channels = channels;
  s.affine = affine;
  if (affine) {
    s.gamma = Tensor<T>::full({channels}, T(1), /*requires_grad=*/true);
    s.beta = Tensor<T>::zeros({channels}, /*requires_grad=*/true);
  }
  s.running_mean.assign(static_cast<size_t>(channels), T(0));
  s.running_var.assign(static_cast<size_t>(channels), T(1));
  return s;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  return conv_forward(x, p, 2);
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvParams<T>& p) {
  return conv_forward(x, p, 3);
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::array<int64_t, 2> window,
                    std::array<int64_t, 2> stride) {
  return maxpool_forward(x, {1, window[0], window[1]}, {1, stride[0], stride[1]}, 2);
}

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x, std::array<int64_t, 3> window,
                    std::array<int64_t, 3> stride) {
  return maxpool_forward(x, window, stride, 3);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  if (grad_enabled<T>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, on, n]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      const T* g = on->grad.data();
      const T* px = xn->data.data();
      T* gx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i)
        if (px[i] > T(0)) gx[i] += g[i];
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  LOANCAST_CHECK_DIM(x.rank() == 2, "softmax: want [N,C], got ", shape_str(x.shape()));
  const int64_t n = x.extent(0), c = x.extent(1);
  LOANCAST_CHECK_DIM(c >= 1, "softmax: empty channel axis");
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const T* row = px + i * c;
    T* orow = po + i * c;
    T mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - mx));
      orow[j] = static_cast<T>(e);
      denom += e;
    }
    for (int64_t j = 0; j < c; ++j) orow[j] = static_cast<T>(orow[j] / denom);
  }
  if (grad_enabled<T>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, on, n, c]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      const T* g = on->grad.data();
      const T* y = on->data.data();
      T* gx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(g[i * c + j]) * y[i * c + j];
        for (int64_t j = 0; j < c; ++j)
          gx[i * c + j] += static_cast<T>(y[i * c + j] * (static_cast<double>(g[i * c + j]) - dot));
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  LOANCAST_CHECK_DIM(x.rank() >= 3, "global_avg_pool: want [N,K,...], got ", shape_str(x.shape()));
  const int64_t n = x.extent(0), k = x.extent(1);
  int64_t m = 1;
  for (int64_t a = 2; a < x.rank(); ++a) m *= x.extent(a);
  LOANCAST_CHECK_DIM(m >= 1, "global_avg_pool: empty reduction");
  Tensor<T> out = Tensor<T>::zeros({n, k});
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < n * k; ++i) {
    double acc = 0.0;
    const T* block = px + i * m;
    for (int64_t j = 0; j < m; ++j) acc += static_cast<double>(block[j]);
    po[i] = static_cast<T>(acc / static_cast<double>(m));
  }
  if (grad_enabled<T>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, on, n, k, m]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      const T* g = on->grad.data();
      T* gx = xn->grad.data();
      for (int64_t i = 0; i < n * k; ++i) {
        const T gi = static_cast<T>(g[i] / static_cast<T>(m));
        T* block = gx + i * m;
        for (int64_t j = 0; j < m; ++j) block[j] += gi;
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state) {
  return batchnorm(x, state, state.mode);
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state, Mode mode) {
  LOANCAST_CHECK_DIM(x.rank() >= 2, "batchnorm: want [N,C,...]");
  const int64_t batch = x.extent(0), channels = x.extent(1);
  LOANCAST_CHECK_DIM(channels == state.channels, "batchnorm: channels ", channels,
                     " != state channels ", state.channels);
  int64_t plane = 1;
  for (int64_t a = 2; a < x.rank(); ++a) plane *= x.extent(a);
  const int64_t per_channel = batch * plane;

  std::vector<T> mean(static_cast<size_t>(channels)), inv_std(static_cast<size_t>(channels));
  if (mode == Mode::kTrain) {
    LOANCAST_CHECK(batch >= 1, "batchnorm: empty batch in train mode");
    for (int64_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (int64_t n = 0; n < batch; ++n) {
        const T* block = x.data() + (n * channels + c) * plane;
        for (int64_t j = 0; j < plane; ++j) acc += static_cast<double>(block[j]);
      }
      const double mu = acc / static_cast<double>(per_channel);
      double var_acc = 0.0;
      for (int64_t n = 0; n < batch; ++n) {
        const T* block = x.data() + (n * channels + c) * plane;
        for (int64_t j = 0; j < plane; ++j) {
          const double d = static_cast<double>(block[j]) - mu;
          var_acc += d * d;
        }
      }
      const double var = var_acc / static_cast<double>(per_channel);
      mean[static_cast<size_t>(c)] = static_cast<T>(mu);
      inv_std[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
      state.running_mean[static_cast<size_t>(c)] =
          static_cast<T>((1.0 - static_cast<double>(state.momentum)) * state.running_mean[static_cast<size_t>(c)] +
                         static_cast<double>(state.momentum) * mu);
      state.running_var[static_cast<size_t>(c)] =
          static_cast<T>((1.0 - static_cast<double>(state.momentum)) * state.running_var[static_cast<size_t>(c)] +
                         static_cast<double>(state.momentum) * var);
    }
    state.initialized = true;
  } else {
    LOANCAST_CHECK(state.initialized,
                   "batchnorm: eval mode before any running-statistic update");
    for (int64_t c = 0; c < channels; ++c) {
      mean[static_cast<size_t>(c)] = state.running_mean[static_cast<size_t>(c)];
      inv_std[static_cast<size_t>(c)] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(state.running_var[static_cast<size_t>(c)]) +
                          static_cast<double>(state.eps)));
    }
  }

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t c = 0; c < channels; ++c) {
      const T g = state.affine ? state.gamma.data()[c] : T(1);
      const T b = state.affine ? state.beta.data()[c] : T(0);
      const T mu = mean[static_cast<size_t>(c)];
      const T is = inv_std[static_cast<size_t>(c)];
      const T* bin = px + (n * channels + c) * plane;
      T* bout = po + (n * channels + c) * plane;
      for (int64_t j = 0; j < plane; ++j) bout[j] = (bin[j] - mu) * is * g + b;
    }

  const bool track = state.affine ? grad_enabled<T>({&x, &state.gamma, &state.beta})
                                  : grad_enabled<T>({&x});
  if (track) {
    auto xn = x.node();
    auto on = out.node();
    auto gn = state.affine ? state.gamma.node() : nullptr;
    auto bn = state.affine ? state.beta.node() : nullptr;
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, on, gn, bn, mode, mean = std::move(mean),
                                inv_std = std::move(inv_std), batch, channels, plane]() {
      if (on->grad.empty()) return;
      const int64_t per_channel = batch * plane;
      const T* g = on->grad.data();
      const T* px = xn->data.data();
      const bool need_dx = xn->requires_grad;
      if (need_dx && xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      if (gn && gn->requires_grad && gn->grad.empty()) gn->grad.assign(gn->data.size(), T(0));
      if (bn && bn->requires_grad && bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
      for (int64_t c = 0; c < channels; ++c) {
        const double mu = static_cast<double>(mean[static_cast<size_t>(c)]);
        const double is = static_cast<double>(inv_std[static_cast<size_t>(c)]);
        const double gamma = gn ? static_cast<double>(gn->data[static_cast<size_t>(c)]) : 1.0;
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t n = 0; n < batch; ++n) {
          const int64_t base = (n * channels + c) * plane;
          for (int64_t j = 0; j < plane; ++j) {
            const double gv = static_cast<double>(g[base + j]);
            sum_g += gv;
            sum_gx += gv * (static_cast<double>(px[base + j]) - mu) * is;
          }
        }
        if (gn && gn->requires_grad) gn->grad[static_cast<size_t>(c)] += static_cast<T>(sum_gx);
        if (bn && bn->requires_grad) bn->grad[static_cast<size_t>(c)] += static_cast<T>(sum_g);
        if (!need_dx) continue;
        T* gx = xn->grad.data();
        if (mode == Mode::kTrain) {
          const double mean_g = sum_g / static_cast<double>(per_channel);
          const double mean_gx = sum_gx / static_cast<double>(per_channel);
          for (int64_t n = 0; n < batch; ++n) {
            const int64_t base = (n * channels + c) * plane;
            for (int64_t j = 0; j < plane; ++j) {
              const double xhat = (static_cast<double>(px[base + j]) - mu) * is;
              gx[base + j] += static_cast<T>(gamma * is *
                                             (static_cast<double>(g[base + j]) - mean_g - xhat * mean_gx));
            }
          }
        } else {
          for (int64_t n = 0; n < batch; ++n) {
            const int64_t base = (n * channels + c) * plane;
            for (int64_t j = 0; j < plane; ++j)
              gx[base + j] += static_cast<T>(gamma * is * static_cast<double>(g[base + j]));
          }
        }
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, std::mt19937_64& rng) {
  LOANCAST_CHECK(p >= 0.0 && p < 1.0, "dropout: probability must be in [0,1), got ", p);
  const int64_t n = x.numel();
  if (mode == Mode::kEval || p == 0.0) {
    // Identity pass-through; fresh storage, plain gradient copy.
    Tensor<T> out = Tensor<T>::from_vector(x.shape(), std::vector<T>(x.data(), x.data() + n));
    if (grad_enabled<T>({&x})) {
      auto xn = x.node();
      auto on = out.node();
      Tape<T>* tape = Tape<T>::active();
      int64_t idx = tape->record([xn, on, n]() {
        if (on->grad.empty() || !xn->requires_grad) return;
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
        const T* g = on->grad.data();
        T* gx = xn->grad.data();
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
      });
      tape->attach(out, idx);
    }
    return out;
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<uint8_t> keep(static_cast<size_t>(n));
  for (auto& k : keep) k = unit(rng) >= p ? 1 : 0;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = keep[static_cast<size_t>(i)] ? px[i] * scale : T(0);
  if (grad_enabled<T>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, on, keep = std::move(keep), scale, n]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      const T* g = on->grad.data();
      T* gx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i)
        if (keep[static_cast<size_t>(i)]) gx[i] += g[i] * scale;
    });
    tape->attach(out, idx);
  }
  return out;
}

namespace {
constexpr double kBceEps = 1e-7;
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& probs, std::span<const int> labels) {
  const int64_t n = static_cast<int64_t>(labels.size());
  int64_t stride = 1, offset = 0;
  if (probs.rank() == 2 && probs.extent(1) == 2) {
    stride = 2;
    offset = 1;  // positive class is column 1
  } else if (probs.rank() == 2 && probs.extent(1) == 1) {
    stride = 1;
  } else {
    LOANCAST_CHECK_DIM(probs.rank() == 1, "bce_loss: want [N,2], [N,1] or [N], got ",
                       shape_str(probs.shape()));
  }
  LOANCAST_CHECK_DIM(probs.extent(0) == n, "bce_loss: ", probs.extent(0), " rows vs ", n,
                     " labels");
  for (int label : labels)
    LOANCAST_CHECK(label == 0 || label == 1, "bce_loss: labels must be 0 or 1, got ", label);

  const T* pp = probs.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double y = std::clamp(static_cast<double>(pp[i * stride + offset]), kBceEps, 1.0 - kBceEps);
    acc += labels[static_cast<size_t>(i)] ? std::log(y) : std::log(1.0 - y);
  }
  Tensor<T> out = Tensor<T>::full({1}, static_cast<T>(-acc / static_cast<double>(n)));

  if (grad_enabled<T>({&probs})) {
    auto pn = probs.node();
    auto on = out.node();
    std::vector<int> lab(labels.begin(), labels.end());
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([pn, on, lab = std::move(lab), n, stride, offset]() {
      if (on->grad.empty() || !pn->requires_grad) return;
      if (pn->grad.empty()) pn->grad.assign(pn->data.size(), T(0));
      const double g = static_cast<double>(on->grad[0]);
      T* gp = pn->grad.data();
      const T* pp = pn->data.data();
      for (int64_t i = 0; i < n; ++i) {
        const double raw = static_cast<double>(pp[i * stride + offset]);
        if (raw < kBceEps || raw > 1.0 - kBceEps) continue;  // clamped: flat
        const double d = lab[static_cast<size_t>(i)] ? -1.0 / raw : 1.0 / (1.0 - raw);
        gp[i * stride + offset] += static_cast<T>(g * d / static_cast<double>(n));
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

#define LOANCAST_INSTANTIATE_NN(T)                                                            \
  template ConvParams<T> make_conv<T>(int64_t, int64_t, std::vector<int64_t>,                 \
                                      std::vector<int64_t>, std::vector<int64_t>,             \
                                      std::mt19937_64&);                                      \
  template BatchNormState<T> make_batchnorm<T>(int64_t, bool);                                \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);                       \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const ConvParams<T>&);                       \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&, std::array<int64_t, 2>,                   \
                                  std::array<int64_t, 2>);                                    \
  template Tensor<T> maxpool3d<T>(const Tensor<T>&, std::array<int64_t, 3>,                   \
                                  std::array<int64_t, 3>);                                    \
  template Tensor<T> relu<T>(const Tensor<T>&);                                               \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                            \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                    \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, BatchNormState<T>&);                      \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, BatchNormState<T>&, Mode);                \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Mode, std::mt19937_64&);            \
  template Tensor<T> bce_loss<T>(const Tensor<T>&, std::span<const int>);

LOANCAST_INSTANTIATE_NN(float)
LOANCAST_INSTANTIATE_NN(double)

#undef LOANCAST_INSTANTIATE_NN

}  // namespace loancast
