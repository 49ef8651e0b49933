#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "loancast/datacube.hpp"
#include "loancast/loan.hpp"
#include "loancast/nn.hpp"
#include "loancast/temporal_encoding.hpp"

namespace loancast {

enum class Architecture { kTwoBranch, kOneBranch3d };

// Architecture hyper-parameters. Defaults give the full-size two-branch
// model; small test configs override widths, patch and pooling together.
struct ModelConfig {
  int64_t dynamic_vars = 10;
  int64_t static_vars = 15;
  int64_t timesteps = 10;
  int64_t patch = 25;  // H == W

  int64_t c1 = 16;  // block-1 channels, shared by both branches
  int64_t c2 = 32;  // block-2 channels, shared by both branches
  int64_t dynamic_features = 256;
  int64_t static_features = 128;
  int64_t conv_kernel_depth = 3;  // temporal extent of the 3d kernels: 1 or 3

  std::array<bool, 3> loan_blocks{true, true, false};
  LoanVariant loan_variant = LoanVariant::kActivationConditioned;
  double loan_init_scale = 1e-5;

  bool temporal_encoding = true;
  double te_base = 10.0;

  double dropout = 0.5;
  // Classifier widths including input and the final 2 logits; empty selects
  // {input, 256, 128, 32, 2} with input derived from the architecture.
  std::vector<int64_t> classifier_dims;

  Architecture architecture = Architecture::kTwoBranch;

  std::array<std::array<int64_t, 3>, 3> dynamic_pool{{{1, 2, 2}, {1, 2, 2}, {2, 2, 2}}};
  std::array<std::array<int64_t, 2>, 3> static_pool{{{2, 2}, {2, 2}, {2, 2}}};

  bool loan_enabled() const {
    return architecture == Architecture::kTwoBranch &&
           (loan_blocks[0] || loan_blocks[1] || loan_blocks[2]);
  }
  int64_t classifier_input() const {
    return architecture == Architecture::kTwoBranch ? dynamic_features + static_features
                                                    : dynamic_features;
  }
  std::vector<int64_t> effective_classifier_dims() const;
};

// Throws on inconsistent configs (kernel depth, classifier dims, LOAN
// channel matching).
void validate(const ModelConfig& cfg);

template <typename T>
struct ForwardResult {
  Tensor<T> probs;              // [N,2]
  Tensor<T> dynamic_features;   // [N,Fd], after temporal encoding
  Tensor<T> static_features;    // [N,Fs] (undefined for one-branch)
  Tensor<T> classifier_input;   // [N,Fd+Fs] (or [N,Fd])
};

// The two-branch 2d/3d CNN with LOAN and temporal encoding, plus the
// one-branch 3d baseline (static variables duplicated along time). Holds
// every parameter and running statistic, addressable by stable names.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // Inputs are channel-wise normalized to [0,1]. For the one-branch
  // architecture the static cube is duplicated along time internally and
  // tau is unused.
  ForwardResult<T> forward_full(const Tensor<T>& dynamic, const Tensor<T>& static_input,
                                std::span<const int> tau, Mode mode);
  Tensor<T> forward(const Tensor<T>& dynamic, const Tensor<T>& static_input,
                    std::span<const int> tau, Mode mode) {
    return forward_full(dynamic, static_input, tau, mode).probs;
  }
  Tensor<T> forward(const SampleBatch<T>& batch, Mode mode) {
    return forward_full(batch.dynamic, batch.static_, batch.tau, mode).probs;
  }

  // One-branch stack on a pre-assembled cube [N, Vd+Vs, T, H, W].
  Tensor<T> forward_one_branch(const Tensor<T>& cube, Mode mode);

  // Static channels repeated at every timestep: [N,Vd+Vs,T,H,W].
  static Tensor<T> assemble_one_branch_cube(const Tensor<T>& dynamic,
                                            const Tensor<T>& static_input);

  std::vector<Tensor<T>> trainable_params();
  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  void visit_stats(const std::function<void(const std::string&, std::vector<T>&)>& fn);
  int64_t param_count() const;

  // Per-parameter-group totals keyed by name prefix (dynamic, static, loan,
  // te, classifier).
  std::vector<std::pair<std::string, int64_t>> param_breakdown() const;

  void save_state(const std::filesystem::path& path) const;
  void load_state(const std::filesystem::path& path);

  // Input normalization fitted on the training split; carried inside
  // checkpoints so evaluation is self-contained.
  NormStats input_norm;

  std::mt19937_64& dropout_rng() { return dropout_rng_; }

  // Test access to layer internals.
  struct Block {
    ConvParams<T> conv;
    std::optional<BatchNormState<T>> bn;
    std::optional<LoanLayer<T>> loan;
  };
  std::vector<Block>& dynamic_blocks() { return dynamic_blocks_; }
  std::vector<Block>& static_blocks() { return static_blocks_; }
  std::vector<std::pair<Tensor<T>, Tensor<T>>>& classifier() { return classifier_; }
  std::optional<TemporalWeight<T>>& temporal_weight() { return te_weight_; }
  const std::optional<EncodingTable<T>>& encoding_table() const { return te_table_; }

 private:
  ModelConfig cfg_;
  std::vector<Block> dynamic_blocks_;
  std::vector<Block> static_blocks_;
  std::vector<std::pair<Tensor<T>, Tensor<T>>> classifier_;  // (weight, bias)
  std::optional<EncodingTable<T>> te_table_;
  std::optional<TemporalWeight<T>> te_weight_;
  std::mt19937_64 dropout_rng_;

  void visit_params_const(
      const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;
};

// Free-function forms over the model state.
template <typename T>
int64_t param_count(const Model<T>& model) {
  return model.param_count();
}
template <typename T>
void save_state(const Model<T>& model, const std::filesystem::path& path) {
  model.save_state(path);
}
template <typename T>
void load_state(Model<T>& model, const std::filesystem::path& path) {
  model.load_state(path);
}

}  // namespace loancast
