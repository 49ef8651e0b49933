#include "loancast/trainer.hpp"

#include <cmath>
#include <cstdio>

namespace loancast {

template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
               int64_t step, const TrainConfig& cfg) {
  LOANCAST_CHECK(param.size() == grad.size() && param.size() == m.size() &&
                     param.size() == v.size(),
                 "adam_step: buffer sizes disagree");
  LOANCAST_CHECK(step >= 1, "adam_step: step counter starts at 1");
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (size_t i = 0; i < param.size(); ++i) {
    double g = static_cast<double>(grad[i]);
    if (!cfg.decoupled_decay) g += cfg.weight_decay * static_cast<double>(param[i]);
    const double m_new = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
    const double v_new = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(m_new);
    v[i] = static_cast<T>(v_new);
    const double m_hat = m_new / bias1;
    const double v_hat = v_new / bias2;
    double theta = static_cast<double>(param[i]);
    if (cfg.decoupled_decay) theta -= cfg.learning_rate * cfg.weight_decay * theta;
    param[i] = static_cast<T>(theta - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps));
  }
}

template <typename T>
AdamOptimizer<T>::AdamOptimizer(std::vector<Tensor<T>> params, const TrainConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  LOANCAST_CHECK(cfg.learning_rate >= 0 && cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 &&
                     cfg.beta2 < 1 && cfg.weight_decay >= 0,
                 "adam: bad hyper-parameters");
  for (const Tensor<T>& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), T(0));
    v_.emplace_back(static_cast<size_t>(p.numel()), T(0));
  }
}

template <typename T>
void AdamOptimizer<T>::zero_grad() {
  for (Tensor<T>& p : params_) p.zero_grad();
}

template <typename T>
void AdamOptimizer<T>::step() {
  ++step_;
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i];
    if (!p.has_grad()) p.ensure_grad();  // unused parameter: zero gradient
    adam_step<T>(p.values_mut(), p.grad(), m_[i], v_[i], step_, cfg_);
  }
}

template <typename T>
std::vector<double> predict_scores(Model<T>& model, const CubeArchive& archive,
                                   int64_t batch_size) {
  std::vector<double> scores;
  scores.reserve(static_cast<size_t>(archive.sample_count()));
  BatchIter<T> iter(archive, model.input_norm, batch_size, /*shuffle_seed=*/0, /*shuffle=*/false);
  while (auto batch = iter.next()) {
    Tensor<T> probs = model.forward(*batch, Mode::kEval);
    const T* p = probs.data();
    for (int64_t i = 0; i < probs.extent(0); ++i)
      scores.push_back(static_cast<double>(p[i * 2 + 1]));
  }
  return scores;
}

template <typename T>
MetricReport evaluate(Model<T>& model, const CubeArchive& archive, double threshold,
                      double* mean_loss, int64_t batch_size) {
  LOANCAST_CHECK(archive.sample_count() > 0, "evaluate: empty archive");
  std::vector<double> scores;
  std::vector<int> labels;
  double loss_acc = 0.0;
  BatchIter<T> iter(archive, model.input_norm, batch_size, /*shuffle_seed=*/0, /*shuffle=*/false);
  while (auto batch = iter.next()) {
    Tensor<T> probs = model.forward(*batch, Mode::kEval);
    Tensor<T> loss = bce_loss(probs, batch->labels);
    loss_acc += static_cast<double>(loss.item()) * static_cast<double>(probs.extent(0));
    const T* p = probs.data();
    for (int64_t i = 0; i < probs.extent(0); ++i) {
      scores.push_back(static_cast<double>(p[i * 2 + 1]));
      labels.push_back(batch->labels[static_cast<size_t>(i)]);
    }
  }
  if (mean_loss) *mean_loss = loss_acc / static_cast<double>(archive.sample_count());
  return evaluate_scores(scores, labels, threshold);
}

namespace {

void log_line(std::ostream* os, int64_t epoch, int64_t step, double train_loss,
              const EpochRecord* epoch_end) {
  if (!os) return;
  char buf[160];
  if (epoch_end) {
    std::snprintf(buf, sizeof(buf), "%lld, %lld, %.9g, %.9g, %.4f, %.4f\n",
                  static_cast<long long>(epoch), static_cast<long long>(step), train_loss,
                  epoch_end->val_loss, epoch_end->val.prf.f1,
                  epoch_end->val.auroc ? 100.0 * *epoch_end->val.auroc : 0.0);
  } else {
    std::snprintf(buf, sizeof(buf), "%lld, %lld, %.9g, , , \n", static_cast<long long>(epoch),
                  static_cast<long long>(step), train_loss);
  }
  (*os) << buf;
}

}  // namespace

template <typename T>
TrainLog train(Model<T>& model, const CubeArchive& train_archive, const CubeArchive& val_archive,
               const TrainConfig& cfg, const std::filesystem::path* out_dir,
               std::ostream* log_stream) {
  LOANCAST_CHECK(train_archive.sample_count() > 0 && val_archive.sample_count() > 0,
                 "train: archives must be non-empty");
  LOANCAST_CHECK(cfg.epochs >= 1 && cfg.batch_size >= 1, "train: bad epochs/batch size");

  model.input_norm = fit_norm(train_archive);
  AdamOptimizer<T> opt(model.trainable_params(), cfg);
  if (log_stream) (*log_stream) << "epoch, step, train_loss, val_loss, val_f1, val_auroc\n";

  TrainLog log;
  const int64_t n = train_archive.sample_count();
  int64_t global_step = 0;
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<int64_t> order =
        epoch_permutation(n, cfg.seed + static_cast<uint64_t>(epoch) * 0x9E3779B97F4A7C15ull);
    double epoch_loss = 0.0;
    int64_t epoch_correct = 0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t end = std::min(n, start + cfg.batch_size);
      SampleBatch<T> batch = make_batch<T>(
          train_archive, model.input_norm,
          std::span<const int64_t>(order.data() + start, static_cast<size_t>(end - start)));

      Tape<T> tape;
      typename Tape<T>::Scope scope(tape);
      Tensor<T> probs = model.forward(batch, Mode::kTrain);
      Tensor<T> loss = bce_loss(probs, batch.labels);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();

      ++global_step;
      ++batches;
      const double loss_value = static_cast<double>(loss.item());
      epoch_loss += loss_value;
      const T* p = probs.data();
      for (int64_t i = 0; i < probs.extent(0); ++i) {
        const bool predicted = static_cast<double>(p[i * 2 + 1]) >= cfg.threshold;
        if (predicted == (batch.labels[static_cast<size_t>(i)] == 1)) ++epoch_correct;
      }
      log.steps.push_back({epoch, global_step, loss_value});
      const bool last_batch_of_epoch = end >= n;
      if (!last_batch_of_epoch) log_line(log_stream, epoch, global_step, loss_value, nullptr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss_mean = epoch_loss / static_cast<double>(batches);
    rec.train_accuracy = static_cast<double>(epoch_correct) / static_cast<double>(n);
    rec.val = evaluate(model, val_archive, cfg.threshold, &rec.val_loss);
    log.epochs.push_back(rec);
    log_line(log_stream, epoch, global_step, log.steps.back().train_loss, &rec);

    const double f1 = rec.val.prf.f1_defined ? rec.val.prf.f1 : -1.0;
    if (f1 > log.best_val_f1) {
      log.best_val_f1 = f1;
      log.best_epoch = epoch;
      if (out_dir) model.save_state(*out_dir / "best.ckpt");
    }
    if (out_dir) model.save_state(*out_dir / "last.ckpt");

    if (cfg.stop_at_train_accuracy && epoch >= cfg.min_epochs &&
        rec.train_accuracy >= *cfg.stop_at_train_accuracy)
      break;
  }
  return log;
}

#define LOANCAST_INSTANTIATE_TRAINER(T)                                                        \
  template void adam_step<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>,     \
                             int64_t, const TrainConfig&);                                     \
  template class AdamOptimizer<T>;                                                            \
  template std::vector<double> predict_scores<T>(Model<T>&, const CubeArchive&, int64_t);      \
  template MetricReport evaluate<T>(Model<T>&, const CubeArchive&, double, double*, int64_t);  \
  template TrainLog train<T>(Model<T>&, const CubeArchive&, const CubeArchive&,                \
                             const TrainConfig&, const std::filesystem::path*, std::ostream*);

LOANCAST_INSTANTIATE_TRAINER(float)
LOANCAST_INSTANTIATE_TRAINER(double)

#undef LOANCAST_INSTANTIATE_TRAINER

}  // namespace loancast
