#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>

#include "loancast/metrics.hpp"
#include "loancast/model.hpp"

namespace loancast {

struct TrainConfig {
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.02;
  bool decoupled_decay = false;  // true: decay applied to the parameter directly
  int64_t batch_size = 256;
  int64_t epochs = 40;
  uint64_t seed = 42;
  double threshold = 0.5;
  // Desk-scale convenience: stop once the epoch's train accuracy reaches the
  // target (checked after min_epochs).
  std::optional<double> stop_at_train_accuracy;
  int64_t min_epochs = 1;
};

// Single Adam update on one parameter buffer. Coupled L2 decay adds
// decay * theta to the gradient before the moment updates; the decoupled
// variant shrinks theta directly instead.
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
               int64_t step, const TrainConfig& cfg);

// Per-parameter first/second moment buffers plus the shared step counter.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor<T>> params, const TrainConfig& cfg);
  void zero_grad();
  void step();
  int64_t step_count() const { return step_; }
  std::span<const T> moment1(size_t i) const { return m_[i]; }
  std::span<const T> moment2(size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  TrainConfig cfg_;
  int64_t step_ = 0;
};

struct StepRecord {
  int64_t epoch = 0;  // 1-based
  int64_t step = 0;   // global, 1-based
  double train_loss = 0.0;
};

struct EpochRecord {
  int64_t epoch = 0;
  double train_loss_mean = 0.0;
  double train_accuracy = 0.0;  // train-mode, over that epoch's batches
  double val_loss = 0.0;
  MetricReport val;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int64_t best_epoch = 0;
  // Undefined F1 scores count as -1, so the first epoch always seeds the
  // best checkpoint.
  double best_val_f1 = -std::numeric_limits<double>::infinity();
};

// Per-sample positive-class scores in archive order, eval mode.
template <typename T>
std::vector<double> predict_scores(Model<T>& model, const CubeArchive& archive,
                                   int64_t batch_size = 64);

// Full metric battery over an archive; mean BCE loss optionally returned.
template <typename T>
MetricReport evaluate(Model<T>& model, const CubeArchive& archive, double threshold = 0.5,
                      double* mean_loss = nullptr, int64_t batch_size = 64);

// Deterministic training loop: fits input normalization on the training
// archive, runs Adam over shuffled batches, evaluates per epoch and keeps
// best-by-validation-F1 (best.ckpt) and last (last.ckpt) checkpoints under
// out_dir when given. Log lines `epoch, step, train_loss, val_loss, val_f1,
// val_auroc` go to log_stream; validation fields only on epoch-final lines.
template <typename T>
TrainLog train(Model<T>& model, const CubeArchive& train_archive, const CubeArchive& val_archive,
               const TrainConfig& cfg, const std::filesystem::path* out_dir = nullptr,
               std::ostream* log_stream = nullptr);

}  // namespace loancast
