#include "loancast/datacube.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace loancast {

static_assert(std::endian::native == std::endian::little,
              "cube archives are little-endian; big-endian hosts are unsupported");

namespace {

constexpr char kMagic[4] = {'F', 'C', 'U', 'B'};
constexpr uint16_t kVersion = 1;

const char* kDynamicNames[10] = {"lst_day",  "lst_night", "ndvi",    "soil_moisture", "t2m_max",
                                 "wind_max", "rh_min",    "precip",  "d2m_max",       "sp_max"};
const char* kStaticNames[5] = {"dem", "slope", "roads_distance", "waterway_distance",
                               "population"};

std::vector<std::string> default_names(const CubeGeometry& geom) {
  std::vector<std::string> names;
  for (int64_t v = 0; v < geom.n_dynamic; ++v)
    names.push_back(v < 10 ? kDynamicNames[v] : "dyn_" + std::to_string(v));
  for (int64_t v = 0; v < geom.n_static; ++v) {
    if (v < 5)
      names.push_back(kStaticNames[v]);
    else if (v < 15)
      names.push_back("clc_frac_" + std::to_string(v - 5));
    else
      names.push_back("stat_" + std::to_string(v));
  }
  return names;
}

struct Writer {
  std::ofstream out;
  uint64_t offset = 0;
  explicit Writer(const std::filesystem::path& path) : out(path, std::ios::binary) {
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
  }
  void bytes(const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    offset += n;
  }
  void u16(uint16_t v) { bytes(&v, 2); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void u8(uint8_t v) { bytes(&v, 1); }
  void f32s(const float* p, size_t n) { bytes(p, n * 4); }
};

struct Reader {
  std::vector<char> buf;
  size_t offset = 0;
  std::string path;
  explicit Reader(const std::filesystem::path& p) : path(p.string()) {
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path + " for reading");
    const std::streamsize size = in.tellg();
    in.seekg(0);
    buf.resize(static_cast<size_t>(size));
    if (size > 0) in.read(buf.data(), size);
    if (!in) throw IoError("read failure on " + path);
  }
  void need(size_t n) {
    if (offset + n > buf.size())
      throw IoError(path + ": truncated at offset " + std::to_string(offset) + " (need " +
                    std::to_string(n) + " bytes, have " + std::to_string(buf.size() - offset) + ")");
  }
  void bytes(void* p, size_t n) {
    need(n);
    std::memcpy(p, buf.data() + offset, n);
    offset += n;
  }
  uint16_t u16() { uint16_t v; bytes(&v, 2); return v; }
  uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
  uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
  uint8_t u8() { uint8_t v; bytes(&v, 1); return v; }
};

}  // namespace

double label_score(const CubeArchive& archive, int64_t sample, const LabelRule& rule) {
  const CubeGeometry& g = archive.geom;
  LOANCAST_CHECK(sample >= 0 && sample < archive.sample_count(), "label_score: bad sample index");
  LOANCAST_CHECK(rule.dyn_var >= 0 && rule.dyn_var < g.n_dynamic &&
                     rule.stat_var >= 0 && rule.stat_var < g.n_static &&
                     rule.trailing_days >= 1 && rule.trailing_days <= g.timesteps,
                 "label_score: rule does not fit archive geometry");
  const int64_t cy = (g.height - 1) / 2;
  const int64_t cx = (g.width - 1) / 2;
  std::span<const float> dyn = archive.dynamic_cube(sample);
  std::span<const float> sta = archive.static_cube(sample);
  double acc = 0.0;
  for (int64_t t = g.timesteps - rule.trailing_days; t < g.timesteps; ++t)
    acc += static_cast<double>(
        dyn[((rule.dyn_var * g.timesteps + t) * g.height + cy) * g.width + cx]);
  const double dyn_term = acc / static_cast<double>(rule.trailing_days);
  const double stat_term =
      static_cast<double>(sta[(rule.stat_var * g.height + cy) * g.width + cx]);
  const double season = std::sin(2.0 * std::numbers::pi *
                                 static_cast<double>(archive.day_of_year[static_cast<size_t>(sample)]) / 366.0);
  return dyn_term + rule.static_weight * stat_term + season;
}

CubeArchive generate_synthetic(uint64_t seed, int64_t n_pos, int64_t n_neg,
                               const LabelRule& rule, const CubeGeometry& geom) {
  LOANCAST_CHECK(n_pos >= 0 && n_neg >= 0, "generate_synthetic: negative sample counts");
  CubeArchive archive;
  archive.geom = geom;
  archive.variable_names = default_names(geom);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tau_dist(0, 365);
  std::uniform_real_distribution<double> amp(0.3, 1.0);
  std::uniform_real_distribution<double> freq(0.0, 2.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> drift(0.0, 0.8);
  std::uniform_real_distribution<double> season_off(0.0, 366.0);
  std::uniform_real_distribution<double> noise(-0.1, 0.1);

  constexpr int kComponents = 3;
  const double period = static_cast<double>(std::max(geom.height, geom.width));

  int64_t got_pos = 0, got_neg = 0;
  std::vector<float> dyn(static_cast<size_t>(geom.dynamic_size()));
  std::vector<float> sta(static_cast<size_t>(geom.static_size()));
  while (got_pos < n_pos || got_neg < n_neg) {
    const int tau = tau_dist(rng);

    for (int64_t v = 0; v < geom.n_dynamic; ++v) {
      const double season =
          0.4 * std::sin(2.0 * std::numbers::pi * (static_cast<double>(tau) + season_off(rng)) / 366.0);
      double a[kComponents], fy[kComponents], fx[kComponents], ph[kComponents], om[kComponents];
      for (int m = 0; m < kComponents; ++m) {
        a[m] = amp(rng);
        fy[m] = freq(rng);
        fx[m] = freq(rng);
        ph[m] = phase(rng);
        om[m] = drift(rng);
      }
      for (int64_t t = 0; t < geom.timesteps; ++t)
        for (int64_t y = 0; y < geom.height; ++y)
          for (int64_t x = 0; x < geom.width; ++x) {
            double val = season;
            for (int m = 0; m < kComponents; ++m)
              val += a[m] * std::cos(2.0 * std::numbers::pi *
                                         (fy[m] * static_cast<double>(y) +
                                          fx[m] * static_cast<double>(x)) /
                                         period +
                                     ph[m] + om[m] * static_cast<double>(t));
            val += noise(rng);
            dyn[static_cast<size_t>(((v * geom.timesteps + t) * geom.height + y) * geom.width + x)] =
                static_cast<float>(val);
          }
    }

    for (int64_t v = 0; v < geom.n_static; ++v) {
      double a[kComponents], fy[kComponents], fx[kComponents], ph[kComponents];
      for (int m = 0; m < kComponents; ++m) {
        a[m] = amp(rng);
        fy[m] = freq(rng);
        fx[m] = freq(rng);
        ph[m] = phase(rng);
      }
      for (int64_t y = 0; y < geom.height; ++y)
        for (int64_t x = 0; x < geom.width; ++x) {
          double val = 0.0;
          for (int m = 0; m < kComponents; ++m)
            val += a[m] * std::cos(2.0 * std::numbers::pi *
                                       (fy[m] * static_cast<double>(y) +
                                        fx[m] * static_cast<double>(x)) /
                                       period +
                                   ph[m]);
          val += noise(rng);
          sta[static_cast<size_t>((v * geom.height + y) * geom.width + x)] = static_cast<float>(val);
        }
    }

    // Label from the stored float32 values so a re-reader derives the same
    // score bit for bit.
    const int64_t cy = (geom.height - 1) / 2;
    const int64_t cx = (geom.width - 1) / 2;
    double acc = 0.0;
    for (int64_t t = geom.timesteps - rule.trailing_days; t < geom.timesteps; ++t)
      acc += static_cast<double>(
          dyn[static_cast<size_t>(((rule.dyn_var * geom.timesteps + t) * geom.height + cy) * geom.width + cx)]);
    const double score =
        acc / static_cast<double>(rule.trailing_days) +
        rule.static_weight *
            static_cast<double>(sta[static_cast<size_t>((rule.stat_var * geom.height + cy) * geom.width + cx)]) +
        std::sin(2.0 * std::numbers::pi * static_cast<double>(tau) / 366.0);
    const bool positive = score > rule.threshold;

    if (positive && got_pos >= n_pos) continue;
    if (!positive && got_neg >= n_neg) continue;
    (positive ? got_pos : got_neg) += 1;
    archive.dynamic_data.insert(archive.dynamic_data.end(), dyn.begin(), dyn.end());
    archive.static_data.insert(archive.static_data.end(), sta.begin(), sta.end());
    archive.day_of_year.push_back(tau);
    archive.labels.push_back(positive ? 1 : 0);
  }
  return archive;
}

NormStats fit_norm(const CubeArchive& archive) {
  const CubeGeometry& g = archive.geom;
  LOANCAST_CHECK(archive.sample_count() > 0, "fit_norm: empty archive");
  NormStats stats;
  stats.n_dynamic = g.n_dynamic;
  stats.min.assign(static_cast<size_t>(g.n_dynamic + g.n_static), std::numeric_limits<float>::max());
  stats.max.assign(static_cast<size_t>(g.n_dynamic + g.n_static), std::numeric_limits<float>::lowest());
  const int64_t dyn_plane = g.timesteps * g.height * g.width;
  const int64_t sta_plane = g.height * g.width;
  for (int64_t i = 0; i < archive.sample_count(); ++i) {
    std::span<const float> dyn = archive.dynamic_cube(i);
    for (int64_t v = 0; v < g.n_dynamic; ++v)
      for (int64_t j = 0; j < dyn_plane; ++j) {
        const float x = dyn[v * dyn_plane + j];
        stats.min[static_cast<size_t>(v)] = std::min(stats.min[static_cast<size_t>(v)], x);
        stats.max[static_cast<size_t>(v)] = std::max(stats.max[static_cast<size_t>(v)], x);
      }
    std::span<const float> sta = archive.static_cube(i);
    for (int64_t v = 0; v < g.n_static; ++v)
      for (int64_t j = 0; j < sta_plane; ++j) {
        const float x = sta[v * sta_plane + j];
        const size_t k = static_cast<size_t>(g.n_dynamic + v);
        stats.min[k] = std::min(stats.min[k], x);
        stats.max[k] = std::max(stats.max[k], x);
      }
  }
  return stats;
}

float apply_norm_value(float x, float lo, float hi) {
  if (hi <= lo) return 0.0f;  // constant variable
  const float v = (x - lo) / (hi - lo);
  return std::clamp(v, 0.0f, 1.0f);
}

CubeArchive apply_norm(const CubeArchive& archive, const NormStats& stats) {
  const CubeGeometry& g = archive.geom;
  LOANCAST_CHECK(stats.variable_count() == g.n_dynamic + g.n_static,
                 "apply_norm: stats cover ", stats.variable_count(), " variables, archive has ",
                 g.n_dynamic + g.n_static);
  CubeArchive out = archive;
  const int64_t dyn_plane = g.timesteps * g.height * g.width;
  const int64_t sta_plane = g.height * g.width;
  for (int64_t i = 0; i < archive.sample_count(); ++i) {
    float* dyn = out.dynamic_data.data() + i * g.dynamic_size();
    for (int64_t v = 0; v < g.n_dynamic; ++v)
      for (int64_t j = 0; j < dyn_plane; ++j)
        dyn[v * dyn_plane + j] = apply_norm_value(dyn[v * dyn_plane + j],
                                                  stats.min[static_cast<size_t>(v)],
                                                  stats.max[static_cast<size_t>(v)]);
    float* sta = out.static_data.data() + i * g.static_size();
    for (int64_t v = 0; v < g.n_static; ++v)
      for (int64_t j = 0; j < sta_plane; ++j)
        sta[v * sta_plane + j] = apply_norm_value(sta[v * sta_plane + j],
                                                  stats.min[static_cast<size_t>(g.n_dynamic + v)],
                                                  stats.max[static_cast<size_t>(g.n_dynamic + v)]);
  }
  return out;
}

void write_archive(const CubeArchive& archive, const std::filesystem::path& path) {
  const CubeGeometry& g = archive.geom;
  LOANCAST_CHECK(static_cast<int64_t>(archive.variable_names.size()) == g.n_dynamic + g.n_static,
                 "write_archive: need one name per variable");
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u32(static_cast<uint32_t>(g.n_dynamic));
  w.u32(static_cast<uint32_t>(g.n_static));
  w.u32(static_cast<uint32_t>(g.timesteps));
  w.u32(static_cast<uint32_t>(g.height));
  w.u32(static_cast<uint32_t>(g.width));
  w.u64(static_cast<uint64_t>(archive.sample_count()));
  for (const std::string& name : archive.variable_names) {
    w.u16(static_cast<uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
  }
  for (int64_t i = 0; i < archive.sample_count(); ++i) {
    w.f32s(archive.dynamic_data.data() + i * g.dynamic_size(), static_cast<size_t>(g.dynamic_size()));
    w.f32s(archive.static_data.data() + i * g.static_size(), static_cast<size_t>(g.static_size()));
    w.u16(static_cast<uint16_t>(archive.day_of_year[static_cast<size_t>(i)]));
    w.u8(archive.labels[static_cast<size_t>(i)]);
  }
  w.out.flush();
  if (!w.out) throw IoError("write failure on " + path.string());
}

CubeArchive read_archive(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(r.path + ": bad magic at offset 0, want \"FCUB\"");
  const uint16_t version = r.u16();
  if (version != kVersion)
    throw IoError(r.path + ": unsupported version " + std::to_string(version) + " at offset 4");

  CubeArchive archive;
  CubeGeometry& g = archive.geom;
  g.n_dynamic = r.u32();
  g.n_static = r.u32();
  g.timesteps = r.u32();
  g.height = r.u32();
  g.width = r.u32();
  const uint64_t n = r.u64();
  if (g.n_dynamic <= 0 || g.n_static <= 0 || g.timesteps <= 0 || g.height <= 0 || g.width <= 0)
    throw IoError(r.path + ": non-positive extent in header");
  for (int64_t v = 0; v < g.n_dynamic + g.n_static; ++v) {
    const uint16_t len = r.u16();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    archive.variable_names.push_back(std::move(name));
  }
  const uint64_t record_bytes = static_cast<uint64_t>(g.dynamic_size()) * 4 +
                                static_cast<uint64_t>(g.static_size()) * 4 + 3;
  if (n > (r.buf.size() - r.offset) / record_bytes)
    throw IoError(r.path + ": truncated at offset " + std::to_string(r.offset) + " (header claims " +
                  std::to_string(n) + " samples)");
  archive.dynamic_data.resize(static_cast<size_t>(n) * static_cast<size_t>(g.dynamic_size()));
  archive.static_data.resize(static_cast<size_t>(n) * static_cast<size_t>(g.static_size()));
  archive.day_of_year.reserve(n);
  archive.labels.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    r.bytes(archive.dynamic_data.data() + i * static_cast<uint64_t>(g.dynamic_size()),
            static_cast<size_t>(g.dynamic_size()) * 4);
    r.bytes(archive.static_data.data() + i * static_cast<uint64_t>(g.static_size()),
            static_cast<size_t>(g.static_size()) * 4);
    const uint16_t tau = r.u16();
    if (tau > 365) throw IoError(r.path + ": day-of-year " + std::to_string(tau) + " out of range");
    const uint8_t label = r.u8();
    if (label > 1) throw IoError(r.path + ": non-binary label " + std::to_string(label));
    archive.day_of_year.push_back(tau);
    archive.labels.push_back(label);
  }
  if (r.offset != r.buf.size())
    throw IoError(r.path + ": " + std::to_string(r.buf.size() - r.offset) +
                  " trailing bytes at offset " + std::to_string(r.offset));
  return archive;
}

template <typename T>
SampleBatch<T> make_batch(const CubeArchive& archive, const NormStats& stats,
                          std::span<const int64_t> rows) {
  const CubeGeometry& g = archive.geom;
  const int64_t n = static_cast<int64_t>(rows.size());
  LOANCAST_CHECK(n > 0, "make_batch: empty row set");
  SampleBatch<T> batch;
  batch.dynamic = Tensor<T>::zeros({n, g.n_dynamic, g.timesteps, g.height, g.width});
  batch.static_ = Tensor<T>::zeros({n, g.n_static, g.height, g.width});
  const int64_t dyn_plane = g.timesteps * g.height * g.width;
  const int64_t sta_plane = g.height * g.width;
  T* dyn_out = batch.dynamic.data();
  T* sta_out = batch.static_.data();
  for (int64_t b = 0; b < n; ++b) {
    const int64_t i = rows[static_cast<size_t>(b)];
    LOANCAST_CHECK(i >= 0 && i < archive.sample_count(), "make_batch: row ", i, " out of range");
    std::span<const float> dyn = archive.dynamic_cube(i);
    for (int64_t v = 0; v < g.n_dynamic; ++v) {
      const float lo = stats.min[static_cast<size_t>(v)];
      const float hi = stats.max[static_cast<size_t>(v)];
      for (int64_t j = 0; j < dyn_plane; ++j)
        dyn_out[(b * g.n_dynamic + v) * dyn_plane + j] =
            static_cast<T>(apply_norm_value(dyn[v * dyn_plane + j], lo, hi));
    }
    std::span<const float> sta = archive.static_cube(i);
    for (int64_t v = 0; v < g.n_static; ++v) {
      const float lo = stats.min[static_cast<size_t>(g.n_dynamic + v)];
      const float hi = stats.max[static_cast<size_t>(g.n_dynamic + v)];
      for (int64_t j = 0; j < sta_plane; ++j)
        sta_out[(b * g.n_static + v) * sta_plane + j] =
            static_cast<T>(apply_norm_value(sta[v * sta_plane + j], lo, hi));
    }
    batch.tau.push_back(archive.day_of_year[static_cast<size_t>(i)]);
    batch.labels.push_back(archive.labels[static_cast<size_t>(i)]);
    batch.indices.push_back(i);
  }
  return batch;
}

std::vector<int64_t> epoch_permutation(int64_t n, uint64_t seed) {
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

template <typename T>
BatchIter<T>::BatchIter(const CubeArchive& archive, const NormStats& stats, int64_t batch_size,
                        uint64_t shuffle_seed, bool shuffle)
    : archive_(&archive), stats_(&stats), batch_size_(batch_size) {
  LOANCAST_CHECK(batch_size >= 1, "batch_iter: batch size must be >= 1");
  if (shuffle) {
    order_ = epoch_permutation(archive.sample_count(), shuffle_seed);
  } else {
    order_.resize(static_cast<size_t>(archive.sample_count()));
    for (int64_t i = 0; i < archive.sample_count(); ++i) order_[static_cast<size_t>(i)] = i;
  }
}

template <typename T>
std::optional<SampleBatch<T>> BatchIter<T>::next() {
  if (cursor_ >= static_cast<int64_t>(order_.size())) return std::nullopt;
  const int64_t end = std::min<int64_t>(cursor_ + batch_size_, static_cast<int64_t>(order_.size()));
  std::span<const int64_t> rows(order_.data() + cursor_, static_cast<size_t>(end - cursor_));
  cursor_ = end;
  return make_batch<T>(*archive_, *stats_, rows);
}

template <typename T>
void BatchIter<T>::reset() {
  cursor_ = 0;
}

template SampleBatch<float> make_batch<float>(const CubeArchive&, const NormStats&,
                                              std::span<const int64_t>);
template SampleBatch<double> make_batch<double>(const CubeArchive&, const NormStats&,
                                                std::span<const int64_t>);
template class BatchIter<float>;
template class BatchIter<double>;

}  // namespace loancast
