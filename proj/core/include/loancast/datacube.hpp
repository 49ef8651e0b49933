#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loancast/tensor.hpp"

namespace loancast {

// Sample geometry of a cube archive. Defaults follow the 25 km x 25 km x
// 10 day patches with 10 dynamic and 15 static variables.
struct CubeGeometry {
  int64_t n_dynamic = 10;
  int64_t n_static = 15;
  int64_t timesteps = 10;
  int64_t height = 25;
  int64_t width = 25;
  int64_t dynamic_size() const { return n_dynamic * timesteps * height * width; }
  int64_t static_size() const { return n_static * height * width; }
};

// In-memory cube archive: per-sample dynamic cube [Vd,T,H,W], static cube
// [Vs,H,W], day-of-year index and binary label. float32 payload.
struct CubeArchive {
  CubeGeometry geom;
  std::vector<std::string> variable_names;  // n_dynamic then n_static entries
  std::vector<float> dynamic_data;          // n * dynamic_size
  std::vector<float> static_data;           // n * static_size
  std::vector<int32_t> day_of_year;         // tau in [0,365]
  std::vector<uint8_t> labels;              // 0/1

  int64_t sample_count() const { return static_cast<int64_t>(labels.size()); }
  std::span<const float> dynamic_cube(int64_t i) const {
    return {dynamic_data.data() + i * geom.dynamic_size(), static_cast<size_t>(geom.dynamic_size())};
  }
  std::span<const float> static_cube(int64_t i) const {
    return {static_data.data() + i * geom.static_size(), static_cast<size_t>(geom.static_size())};
  }
};

// Labeling rule of the synthetic generator. A sample is positive iff
//   mean(dyn[dyn_var, T-trailing_days .. T-1, center]) +
//   static_weight * stat[stat_var, center] +
//   sin(2*pi*tau/366)                    > threshold
// with center = ((H-1)/2, (W-1)/2), evaluated on the stored float32 values
// in double arithmetic (time-ordered sum divided by trailing_days).
struct LabelRule {
  int dyn_var = 0;
  int stat_var = 0;
  int trailing_days = 3;
  double static_weight = 0.5;
  double threshold = 0.25;
};

// The rule's score for a stored sample; label == (score > rule.threshold).
double label_score(const CubeArchive& archive, int64_t sample, const LabelRule& rule = {});

// Seeded synthetic archive with n_pos positive and n_neg negative samples.
// Dynamic variables are low-frequency cosine mixtures drifting over time with
// a seasonal offset in tau; static variables are smooth spatial fields; both
// carry small uniform noise. Deterministic: same arguments, same bytes.
CubeArchive generate_synthetic(uint64_t seed, int64_t n_pos, int64_t n_neg,
                               const LabelRule& rule = {}, const CubeGeometry& geom = {});

// Per-variable min/max over a (training) archive; dynamic variables first.
struct NormStats {
  std::vector<float> min;
  std::vector<float> max;
  int64_t n_dynamic = 0;
  int64_t variable_count() const { return static_cast<int64_t>(min.size()); }
};

NormStats fit_norm(const CubeArchive& archive);

// x' = (x - min) / (max - min), clamped to [0,1]; constant variables map to 0.
float apply_norm_value(float x, float lo, float hi);
CubeArchive apply_norm(const CubeArchive& archive, const NormStats& stats);

// FCUB container, byte layout documented in docs/FORMATS.md.
void write_archive(const CubeArchive& archive, const std::filesystem::path& path);
CubeArchive read_archive(const std::filesystem::path& path);

template <typename T>
struct SampleBatch {
  Tensor<T> dynamic;   // [N,Vd,T,H,W], normalized
  Tensor<T> static_;   // [N,Vs,H,W], normalized
  std::vector<int> tau;
  std::vector<int> labels;
  std::vector<int64_t> indices;  // archive rows in batch order
};

// Normalized batch of the given archive rows.
template <typename T>
SampleBatch<T> make_batch(const CubeArchive& archive, const NormStats& stats,
                          std::span<const int64_t> rows);

// Deterministic permutation of [0,n) under the given seed.
std::vector<int64_t> epoch_permutation(int64_t n, uint64_t seed);

// Stream of batches over an archive: a seeded shuffle (or identity order),
// fixed batch size, final partial batch included.
template <typename T>
class BatchIter {
 public:
  BatchIter(const CubeArchive& archive, const NormStats& stats, int64_t batch_size,
            uint64_t shuffle_seed, bool shuffle = true);
  std::optional<SampleBatch<T>> next();
  void reset();

 private:
  const CubeArchive* archive_;
  const NormStats* stats_;
  int64_t batch_size_;
  std::vector<int64_t> order_;
  int64_t cursor_ = 0;
};

}  // namespace loancast
