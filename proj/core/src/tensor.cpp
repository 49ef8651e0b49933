#include "loancast/tensor.hpp"

#include <algorithm>

#include "gemm.hpp"

namespace loancast {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  for (int64_t e : shape) LOANCAST_CHECK_DIM(e > 0, "tensor extent must be positive, got ", shape_str(shape));
  auto node = std::make_shared<detail::TensorNode<T>>();
  node->data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_vector(Shape shape, std::vector<T> values, bool requires_grad) {
  LOANCAST_CHECK_DIM(shape_numel(shape) == static_cast<int64_t>(values.size()),
                     "from_vector: ", values.size(), " values do not fill ", shape_str(shape));
  for (int64_t e : shape) LOANCAST_CHECK_DIM(e > 0, "tensor extent must be positive, got ", shape_str(shape));
  auto node = std::make_shared<detail::TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  LOANCAST_CHECK(numel() == 1, "item(): tensor has ", numel(), " elements");
  return node_->data[0];
}

template <typename T>
std::vector<T>& Tensor<T>::ensure_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto node = std::make_shared<detail::TensorNode<T>>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  LOANCAST_CHECK(loss.defined() && loss.numel() == 1,
                 "backward: loss must be scalar");
  LOANCAST_CHECK(loss.tape_node() >= 0 &&
                     loss.tape_node() < static_cast<int64_t>(ops_.size()),
                 "backward: loss is not on this tape");
  for (Op& op : ops_)
    if (op.output && !op.output->grad.empty())
      std::fill(op.output->grad.begin(), op.output->grad.end(), T(0));
  loss.node()->grad.assign(1, T(1));
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
}

namespace {

// Broadcast classification for elementwise(a, b).
enum class Bcast { kSame, kScalar, kSuffix };

template <typename T>
Bcast classify(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.numel() == 1) return Bcast::kScalar;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() <= sa.size() &&
      std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
    return Bcast::kSuffix;
  throw DimensionError("elementwise: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                       " neither match nor suffix-broadcast");
}

template <typename T>
T apply_op(EwOp op, T x, T y) {
  switch (op) {
    case EwOp::kAdd: return x + y;
    case EwOp::kSub: return x - y;
    case EwOp::kMul: return x * y;
    case EwOp::kDiv: return x / y;
  }
  return T(0);
}

}  // namespace

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const Bcast mode = classify(a, b);
  const int64_t n = a.numel();
  const int64_t nb = b.numel();
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  switch (mode) {
    case Bcast::kSame:
      for (int64_t i = 0; i < n; ++i) po[i] = apply_op(op, pa[i], pb[i]);
      break;
    case Bcast::kScalar:
      for (int64_t i = 0; i < n; ++i) po[i] = apply_op(op, pa[i], pb[0]);
      break;
    case Bcast::kSuffix:
      for (int64_t i = 0; i < n; ++i) po[i] = apply_op(op, pa[i], pb[i % nb]);
      break;
  }

  if (grad_enabled<T>({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([op, mode, an, bn, on, n, nb]() {
      if (on->grad.empty()) return;
      const T* g = on->grad.data();
      const T* pa = an->data.data();
      const T* pb = bn->data.data();
      if (an->requires_grad) {
        if (an->grad.empty()) an->grad.assign(an->data.size(), T(0));
        T* ga = an->grad.data();
        switch (op) {
          case EwOp::kAdd:
          case EwOp::kSub:
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            break;
          case EwOp::kMul:
            if (mode == Bcast::kSame)
              for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
            else if (mode == Bcast::kScalar)
              for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[0];
            else
              for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i % nb];
            break;
          case EwOp::kDiv:
            if (mode == Bcast::kSame)
              for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / pb[i];
            else if (mode == Bcast::kScalar)
              for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / pb[0];
            else
              for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / pb[i % nb];
            break;
        }
      }
      if (bn->requires_grad) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
        T* gb = bn->grad.data();
        for (int64_t i = 0; i < n; ++i) {
          const int64_t j = (mode == Bcast::kSame) ? i : (mode == Bcast::kScalar ? 0 : i % nb);
          switch (op) {
            case EwOp::kAdd: gb[j] += g[i]; break;
            case EwOp::kSub: gb[j] -= g[i]; break;
            case EwOp::kMul: gb[j] += g[i] * pa[i]; break;
            case EwOp::kDiv: gb[j] -= g[i] * pa[i] / (pb[j] * pb[j]); break;
          }
        }
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, T b) {
  Tensor<T> bt = Tensor<T>::full({1}, b);
  return elementwise(op, a, bt);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0.0;
  const T* pa = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(pa[i]);
  Tensor<T> out = Tensor<T>::full({1}, static_cast<T>(acc));
  if (grad_enabled<T>({&a})) {
    auto an = a.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([an, on, n]() {
      if (on->grad.empty() || !an->requires_grad) return;
      if (an->grad.empty()) an->grad.assign(an->data.size(), T(0));
      const T g = on->grad[0];
      T* ga = an->grad.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> matmul_1x1conv(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  LOANCAST_CHECK_DIM(x.rank() == 2 && weight.rank() == 2 && bias.rank() == 1,
                     "matmul_1x1conv: want x[N,Cin], weight[Cout,Cin], bias[Cout]");
  const int64_t n = x.extent(0), cin = x.extent(1);
  const int64_t cout = weight.extent(0);
  LOANCAST_CHECK_DIM(weight.extent(1) == cin, "matmul_1x1conv: inner dims disagree: x ",
                     shape_str(x.shape()), " vs weight ", shape_str(weight.shape()));
  LOANCAST_CHECK_DIM(bias.extent(0) == cout, "matmul_1x1conv: bias length ", bias.extent(0),
                     " != out channels ", cout);

  Tensor<T> out = Tensor<T>::zeros({n, cout});
  // y = x * W^T, then + bias
  detail::gemm_nt(n, cout, cin, x.data(), weight.data(), out.data());
  T* po = out.data();
  const T* pb = bias.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < cout; ++k) po[i * cout + k] += pb[k];

  if (grad_enabled<T>({&x, &weight, &bias})) {
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, wn, bn, on, n, cin, cout]() {
      if (on->grad.empty()) return;
      const T* g = on->grad.data();
      if (xn->requires_grad) {
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
        detail::gemm_nn(n, cin, cout, g, wn->data.data(), xn->grad.data());
      }
      if (wn->requires_grad) {
        if (wn->grad.empty()) wn->grad.assign(wn->data.size(), T(0));
        detail::gemm_tn(cout, cin, n, g, xn->data.data(), wn->grad.data());
      }
      if (bn->requires_grad) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
        T* gb = bn->grad.data();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t k = 0; k < cout; ++k) gb[k] += g[i * cout + k];
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  LOANCAST_CHECK_DIM(a.rank() == 2 && b.rank() == 2 && a.extent(0) == b.extent(0),
                     "concat_cols: want [N,A] and [N,B], got ", shape_str(a.shape()), " and ",
                     shape_str(b.shape()));
  const int64_t n = a.extent(0), ca = a.extent(1), cb = b.extent(1);
  Tensor<T> out = Tensor<T>::zeros({n, ca + cb});
  T* po = out.data();
  const T* pa = a.data();
  const T* pb = b.data();
  for (int64_t i = 0; i < n; ++i) {
    std::copy(pa + i * ca, pa + (i + 1) * ca, po + i * (ca + cb));
    std::copy(pb + i * cb, pb + (i + 1) * cb, po + i * (ca + cb) + ca);
  }
  if (grad_enabled<T>({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([an, bn, on, n, ca, cb]() {
      if (on->grad.empty()) return;
      const T* g = on->grad.data();
      if (an->requires_grad) {
        if (an->grad.empty()) an->grad.assign(an->data.size(), T(0));
        T* ga = an->grad.data();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
      }
      if (bn->requires_grad) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
        T* gb = bn->grad.data();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

#define LOANCAST_INSTANTIATE_TENSOR(T)                                              \
  template class Tensor<T>;                                                         \
  template void Tape<T>::backward(const Tensor<T>&);                                \
  template Tensor<T> elementwise<T>(EwOp, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> elementwise<T>(EwOp, const Tensor<T>&, T);                     \
  template Tensor<T> sum<T>(const Tensor<T>&);                                      \
  template Tensor<T> matmul_1x1conv<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> concat_cols<T>(const Tensor<T>&, const Tensor<T>&);

LOANCAST_INSTANTIATE_TENSOR(float)
LOANCAST_INSTANTIATE_TENSOR(double)

#undef LOANCAST_INSTANTIATE_TENSOR

}  // namespace loancast
