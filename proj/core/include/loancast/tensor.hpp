#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "loancast/common.hpp"

namespace loancast {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first touched by backward()
  bool requires_grad = false;
  int64_t tape_node = -1;  // index of the producing op on the recording tape
};

}  // namespace detail

// Dense n-dimensional tensor. Copies share storage (handle semantics);
// use clone() for a deep, detached copy. Gradients accumulate across
// backward() calls and are cleared only by an explicit zero_grad().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t extent(int64_t axis) const { return node_->shape[static_cast<size_t>(axis)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  T* data() { return node_->data.data(); }
  const T* data() const { return node_->data.data(); }
  std::span<const T> values() const { return node_->data; }
  std::span<T> values_mut() { return node_->data; }

  // Value of a rank-0/one-element tensor.
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }
  // Zero-filled allocation on first use.
  std::vector<T>& ensure_grad();
  void zero_grad();

  int64_t tape_node() const { return node_->tape_node; }

  Tensor clone() const;

  // Identity of the underlying storage; used by tests for alias checks.
  const void* storage_id() const { return node_.get(); }

  std::shared_ptr<detail::TensorNode<T>> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode<T>> node_;

  template <typename U>
  friend class Tape;
};

// Ordered recording of differentiable operations for one execution stream.
// Ops are appended in execution order, so replaying the backward rules in
// reverse yields exact reverse-mode gradients of a scalar loss. A tape is
// bound to the current thread with Tape::Scope; operations record onto the
// active tape only when some input requires a gradient. Not thread-shared.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(active_) { active_ = &tape; }
    ~Scope() { active_ = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() { return active_; }

  // Appends a backward rule; returns its node index. The producing op's
  // output is bound by attach().
  int64_t record(std::function<void()> backward_rule) {
    ops_.push_back({std::move(backward_rule), nullptr});
    return static_cast<int64_t>(ops_.size()) - 1;
  }

  // Marks `out` as produced by the op at `index` and flags it differentiable.
  void attach(Tensor<T>& out, int64_t index) {
    ops_[static_cast<size_t>(index)].output = out.node_;
    out.node_->tape_node = index;
    out.node_->requires_grad = true;
  }

  // Reverse-mode sweep from a scalar loss recorded on this tape. Intermediate
  // (op-output) gradients are transient per sweep; leaf gradients accumulate
  // across repeated calls until explicitly zeroed.
  void backward(const Tensor<T>& loss);

  void clear() { ops_.clear(); }
  std::size_t size() const { return ops_.size(); }

 private:
  struct Op {
    std::function<void()> backward;
    std::shared_ptr<detail::TensorNode<T>> output;
  };
  std::vector<Op> ops_;
  static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

// Free-function form: uses the thread's active tape.
template <typename T>
void backward(const Tensor<T>& loss) {
  LOANCAST_CHECK(Tape<T>::active() != nullptr, "backward: no active tape");
  Tape<T>::active()->backward(loss);
}

// True when an op over these inputs should record onto the active tape.
template <typename T>
bool grad_enabled(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

enum class EwOp { kAdd, kSub, kMul, kDiv };

// Elementwise binary op. Shapes must match exactly, or `b` must be a
// one-element tensor, or b's shape must be a suffix of a's shape (b is then
// repeated over the leading axes). Hadamard product == kMul.
template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, T b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::kAdd, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::kSub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::kMul, a, b); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::kDiv, a, b); }
template <typename T>
Tensor<T> add(const Tensor<T>& a, T b) { return elementwise(EwOp::kAdd, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, T b) { return elementwise(EwOp::kSub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, T b) { return elementwise(EwOp::kMul, a, b); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, T b) { return elementwise(EwOp::kDiv, a, b); }

// Sum of all elements -> one-element tensor. Left-to-right accumulation
// in double precision.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

// y[n,k] = sum_c weight[k,c] * x[n,c] + bias[k]. The classifier's
// kernel-size-1 convolution over feature vectors.
template <typename T>
Tensor<T> matmul_1x1conv(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// x_a and x_b concatenated along axis 1 (rank-2 inputs).
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace loancast
