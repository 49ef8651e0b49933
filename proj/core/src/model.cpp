#include "loancast/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace loancast {

static_assert(std::endian::native == std::endian::little,
              "checkpoints are little-endian; big-endian hosts are unsupported");

std::vector<int64_t> ModelConfig::effective_classifier_dims() const {
  if (!classifier_dims.empty()) return classifier_dims;
  return {classifier_input(), 256, 128, 32, 2};
}

void validate(const ModelConfig& cfg) {
  LOANCAST_CHECK(cfg.dynamic_vars > 0 && cfg.static_vars > 0 && cfg.timesteps > 0 && cfg.patch > 0,
                 "config: variable counts, timesteps and patch must be positive");
  LOANCAST_CHECK(cfg.c1 > 0 && cfg.c2 > 0 && cfg.dynamic_features > 0 && cfg.static_features > 0,
                 "config: channel widths must be positive");
  LOANCAST_CHECK(cfg.conv_kernel_depth == 1 || cfg.conv_kernel_depth == 3,
                 "config: conv_kernel_depth must be 1 or 3, got ", cfg.conv_kernel_depth);
  LOANCAST_CHECK(cfg.dropout >= 0.0 && cfg.dropout < 1.0, "config: dropout must be in [0,1)");
  LOANCAST_CHECK(cfg.dynamic_features % 2 == 0,
                 "config: dynamic_features must be even for the sinusoidal encoding");
  const auto dims = cfg.effective_classifier_dims();
  LOANCAST_CHECK(dims.size() >= 2 && dims.front() == cfg.classifier_input() && dims.back() == 2,
                 "config: classifier dims must run from ", cfg.classifier_input(), " to 2");
  for (int64_t d : dims) LOANCAST_CHECK(d > 0, "config: classifier dims must be positive");
}

namespace {

template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_dense(int64_t in, int64_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(static_cast<size_t>(out * in));
  for (auto& v : w) v = static_cast<T>(dist(rng));
  std::vector<T> b(static_cast<size_t>(out));
  for (auto& v : b) v = static_cast<T>(dist(rng));
  return {Tensor<T>::from_vector({out, in}, std::move(w), true),
          Tensor<T>::from_vector({out}, std::move(b), true)};
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg), dropout_rng_(seed ^ 0x9E3779B97F4A7C15ull) {
  validate(cfg);
  std::mt19937_64 rng(seed);

  const bool two_branch = cfg.architecture == Architecture::kTwoBranch;
  const int64_t kd = cfg.conv_kernel_depth;
  const std::vector<int64_t> kernel3{kd, 3, 3};
  const std::vector<int64_t> pad3{kd / 2, 1, 1};
  const std::vector<int64_t> stride3{1, 1, 1};

  const int64_t dyn_in = two_branch ? cfg.dynamic_vars : cfg.dynamic_vars + cfg.static_vars;
  const std::array<int64_t, 3> dyn_channels{cfg.c1, cfg.c2, cfg.dynamic_features};
  const std::array<int64_t, 3> sta_channels{cfg.c1, cfg.c2, cfg.static_features};

  int64_t in_c = dyn_in;
  for (int i = 0; i < 3; ++i) {
    Block b;
    b.conv = make_conv<T>(in_c, dyn_channels[static_cast<size_t>(i)], kernel3, pad3, stride3, rng);
    if (i == 0) {
      const bool loan_here = two_branch && cfg.loan_blocks[0];
      b.bn = make_batchnorm<T>(dyn_channels[0], /*affine=*/!loan_here);
    }
    dynamic_blocks_.push_back(std::move(b));
    in_c = dyn_channels[static_cast<size_t>(i)];
  }

  if (two_branch) {
    in_c = cfg.static_vars;
    for (int i = 0; i < 3; ++i) {
      Block b;
      b.conv = make_conv<T>(in_c, sta_channels[static_cast<size_t>(i)], {3, 3}, {1, 1}, {1, 1}, rng);
      if (i == 0) b.bn = make_batchnorm<T>(sta_channels[0], /*affine=*/true);
      static_blocks_.push_back(std::move(b));
      in_c = sta_channels[static_cast<size_t>(i)];
    }

    for (int i = 0; i < 3; ++i) {
      if (!cfg.loan_blocks[static_cast<size_t>(i)]) continue;
      const int64_t cond_channels = cfg.loan_variant == LoanVariant::kActivationConditioned
                                        ? sta_channels[static_cast<size_t>(i)]
                                        : cfg.static_vars;
      dynamic_blocks_[static_cast<size_t>(i)].loan =
          make_loan_layer<T>(cfg.loan_variant, cond_channels, dyn_channels[static_cast<size_t>(i)],
                             /*normalize_dynamic=*/i == 0, rng, cfg.loan_init_scale);
    }

    if (cfg.temporal_encoding) {
      te_table_ = build_encoding_table<T>(cfg.dynamic_features, cfg.te_base);
      te_weight_ = make_temporal_weight<T>(cfg.dynamic_features);
    }
  }

  const auto dims = cfg.effective_classifier_dims();
  for (size_t l = 0; l + 1 < dims.size(); ++l)
    classifier_.push_back(make_dense<T>(dims[l], dims[l + 1], rng));

  input_norm.n_dynamic = cfg.dynamic_vars;
  input_norm.min.assign(static_cast<size_t>(cfg.dynamic_vars + cfg.static_vars), 0.0f);
  input_norm.max.assign(static_cast<size_t>(cfg.dynamic_vars + cfg.static_vars), 1.0f);
}

template <typename T>
ForwardResult<T> Model<T>::forward_full(const Tensor<T>& dynamic, const Tensor<T>& static_input,
                                        std::span<const int> tau, Mode mode) {
  LOANCAST_CHECK_DIM(dynamic.rank() == 5 && dynamic.extent(1) == cfg_.dynamic_vars &&
                         dynamic.extent(2) == cfg_.timesteps && dynamic.extent(3) == cfg_.patch &&
                         dynamic.extent(4) == cfg_.patch,
                     "forward: dynamic cube ", shape_str(dynamic.shape()),
                     " does not match the config");
  LOANCAST_CHECK_DIM(static_input.rank() == 4 && static_input.extent(0) == dynamic.extent(0) &&
                         static_input.extent(1) == cfg_.static_vars &&
                         static_input.extent(2) == cfg_.patch && static_input.extent(3) == cfg_.patch,
                     "forward: static cube ", shape_str(static_input.shape()),
                     " does not match the config");

  if (cfg_.architecture == Architecture::kOneBranch3d) {
    ForwardResult<T> r;
    Tensor<T> cube = assemble_one_branch_cube(dynamic, static_input);
    r.probs = forward_one_branch(cube, mode);
    return r;
  }

  LOANCAST_CHECK(static_cast<int64_t>(tau.size()) == dynamic.extent(0),
                 "forward: need one day-of-year index per sample");

  // Static branch; block activations (post-norm, pre-ReLU) become LOAN
  // conditional maps.
  std::array<Tensor<T>, 3> cond_maps;
  Tensor<T> xs = static_input;
  for (int i = 0; i < 3; ++i) {
    Block& b = static_blocks_[static_cast<size_t>(i)];
    Tensor<T> z = conv2d(xs, b.conv);
    if (b.bn) z = batchnorm(z, *b.bn, mode);
    cond_maps[static_cast<size_t>(i)] = z;
    z = relu(z);
    const auto& pw = cfg_.static_pool[static_cast<size_t>(i)];
    xs = maxpool2d(z, {pw[0], pw[1]}, {pw[0], pw[1]});
  }
  Tensor<T> feat_s = global_avg_pool(xs);

  // Dynamic branch.
  Tensor<T> xd = dynamic;
  for (int i = 0; i < 3; ++i) {
    Block& b = dynamic_blocks_[static_cast<size_t>(i)];
    Tensor<T> z = conv3d(xd, b.conv);
    if (b.bn) z = batchnorm(z, *b.bn, mode);
    if (b.loan) {
      const Tensor<T>& cond = b.loan->variant == LoanVariant::kActivationConditioned
                                  ? cond_maps[static_cast<size_t>(i)]
                                  : static_input;
      z = loan_apply(*b.loan, z, cond, mode);
    }
    z = relu(z);
    const auto& pw = cfg_.dynamic_pool[static_cast<size_t>(i)];
    xd = maxpool3d(z, {pw[0], pw[1], pw[2]}, {pw[0], pw[1], pw[2]});
  }
  Tensor<T> feat_d = global_avg_pool(xd);

  if (te_weight_) feat_d = inject(feat_d, tau, *te_table_, *te_weight_);

  Tensor<T> y = concat_cols(feat_d, feat_s);
  ForwardResult<T> r;
  r.dynamic_features = feat_d;
  r.static_features = feat_s;
  r.classifier_input = y;
  const size_t layers = classifier_.size();
  for (size_t l = 0; l < layers; ++l) {
    y = matmul_1x1conv(y, classifier_[l].first, classifier_[l].second);
    if (l + 1 < layers) y = relu(y);
    if (l < 2 && cfg_.dropout > 0.0) y = dropout(y, cfg_.dropout, mode, dropout_rng_);
  }
  r.probs = softmax(y);
  return r;
}

template <typename T>
Tensor<T> Model<T>::forward_one_branch(const Tensor<T>& cube, Mode mode) {
  LOANCAST_CHECK(cfg_.architecture == Architecture::kOneBranch3d,
                 "forward_one_branch: model is configured two-branch");
  LOANCAST_CHECK_DIM(cube.rank() == 5 &&
                         cube.extent(1) == cfg_.dynamic_vars + cfg_.static_vars &&
                         cube.extent(2) == cfg_.timesteps && cube.extent(3) == cfg_.patch &&
                         cube.extent(4) == cfg_.patch,
                     "forward_one_branch: cube ", shape_str(cube.shape()),
                     " does not match the config");
  Tensor<T> x = cube;
  for (int i = 0; i < 3; ++i) {
    Block& b = dynamic_blocks_[static_cast<size_t>(i)];
    Tensor<T> z = conv3d(x, b.conv);
    if (b.bn) z = batchnorm(z, *b.bn, mode);
    z = relu(z);
    const auto& pw = cfg_.dynamic_pool[static_cast<size_t>(i)];
    x = maxpool3d(z, {pw[0], pw[1], pw[2]}, {pw[0], pw[1], pw[2]});
  }
  Tensor<T> y = global_avg_pool(x);
  const size_t layers = classifier_.size();
  for (size_t l = 0; l < layers; ++l) {
    y = matmul_1x1conv(y, classifier_[l].first, classifier_[l].second);
    if (l + 1 < layers) y = relu(y);
    if (l < 2 && cfg_.dropout > 0.0) y = dropout(y, cfg_.dropout, mode, dropout_rng_);
  }
  return softmax(y);
}

template <typename T>
Tensor<T> Model<T>::assemble_one_branch_cube(const Tensor<T>& dynamic,
                                             const Tensor<T>& static_input) {
  LOANCAST_CHECK(!dynamic.requires_grad() && !static_input.requires_grad(),
                 "assemble_one_branch_cube: expects plain input data");
  const int64_t n = dynamic.extent(0), vd = dynamic.extent(1), t = dynamic.extent(2);
  const int64_t h = dynamic.extent(3), w = dynamic.extent(4);
  const int64_t vs = static_input.extent(1);
  Tensor<T> cube = Tensor<T>::zeros({n, vd + vs, t, h, w});
  const int64_t plane = h * w;
  const T* pd = dynamic.data();
  const T* ps = static_input.data();
  T* pc = cube.data();
  for (int64_t i = 0; i < n; ++i) {
    std::memcpy(pc + i * (vd + vs) * t * plane, pd + i * vd * t * plane,
                static_cast<size_t>(vd * t * plane) * sizeof(T));
    for (int64_t v = 0; v < vs; ++v)
      for (int64_t tt = 0; tt < t; ++tt)
        std::memcpy(pc + ((i * (vd + vs) + vd + v) * t + tt) * plane,
                    ps + (i * vs + v) * plane, static_cast<size_t>(plane) * sizeof(T));
  }
  return cube;
}

template <typename T>
void Model<T>::visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  auto block_params = [&](const char* branch, std::vector<Block>& blocks) {
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string prefix = std::string(branch) + ".block" + std::to_string(i + 1);
      fn(prefix + ".conv.weight", blocks[i].conv.weight);
      fn(prefix + ".conv.bias", blocks[i].conv.bias);
      if (blocks[i].bn && blocks[i].bn->affine) {
        fn(prefix + ".bn.gamma", blocks[i].bn->gamma);
        fn(prefix + ".bn.beta", blocks[i].bn->beta);
      }
    }
  };
  block_params("dynamic", dynamic_blocks_);
  block_params("static", static_blocks_);
  for (size_t i = 0; i < dynamic_blocks_.size(); ++i) {
    if (!dynamic_blocks_[i].loan) continue;
    LoanLayer<T>& loan = *dynamic_blocks_[i].loan;
    const std::string prefix = "loan.block" + std::to_string(i + 1);
    if (loan.pre_conv) {
      fn(prefix + ".pre_conv.weight", loan.pre_conv->weight);
      fn(prefix + ".pre_conv.bias", loan.pre_conv->bias);
    }
    fn(prefix + ".gamma_conv.weight", loan.gamma_conv.weight);
    fn(prefix + ".gamma_conv.bias", loan.gamma_conv.bias);
    fn(prefix + ".beta_conv.weight", loan.beta_conv.weight);
    fn(prefix + ".beta_conv.bias", loan.beta_conv.bias);
  }
  if (te_weight_) fn("te.weight", te_weight_->weight);
  for (size_t l = 0; l < classifier_.size(); ++l) {
    const std::string prefix = "classifier.layer" + std::to_string(l + 1);
    fn(prefix + ".weight", classifier_[l].first);
    fn(prefix + ".bias", classifier_[l].second);
  }
}

template <typename T>
void Model<T>::visit_params_const(
    const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
  // const access via the mutable visitor on a shallow handle copy is unsafe;
  // re-walk instead.
  auto* self = const_cast<Model<T>*>(this);
  self->visit_params([&](const std::string& name, Tensor<T>& t) { fn(name, t); });
}

template <typename T>
void Model<T>::visit_stats(const std::function<void(const std::string&, std::vector<T>&)>& fn) {
  auto block_stats = [&](const char* branch, std::vector<Block>& blocks) {
    for (size_t i = 0; i < blocks.size(); ++i) {
      if (!blocks[i].bn) continue;
      const std::string prefix = std::string(branch) + ".block" + std::to_string(i + 1);
      fn(prefix + ".bn.running_mean", blocks[i].bn->running_mean);
      fn(prefix + ".bn.running_var", blocks[i].bn->running_var);
    }
  };
  block_stats("dynamic", dynamic_blocks_);
  block_stats("static", static_blocks_);
  for (size_t i = 0; i < dynamic_blocks_.size(); ++i) {
    if (!dynamic_blocks_[i].loan) continue;
    const std::string prefix = "loan.block" + std::to_string(i + 1);
    fn(prefix + ".cond_norm.running_mean", dynamic_blocks_[i].loan->cond_norm.running_mean);
    fn(prefix + ".cond_norm.running_var", dynamic_blocks_[i].loan->cond_norm.running_var);
  }
}

template <typename T>
std::vector<Tensor<T>> Model<T>::trainable_params() {
  std::vector<Tensor<T>> params;
  visit_params([&](const std::string&, Tensor<T>& t) { params.push_back(t); });
  return params;
}

template <typename T>
int64_t Model<T>::param_count() const {
  int64_t total = 0;
  visit_params_const([&](const std::string&, const Tensor<T>& t) { total += t.numel(); });
  return total;
}

template <typename T>
std::vector<std::pair<std::string, int64_t>> Model<T>::param_breakdown() const {
  std::vector<std::pair<std::string, int64_t>> groups;
  auto bump = [&](const std::string& key, int64_t n) {
    for (auto& g : groups)
      if (g.first == key) {
        g.second += n;
        return;
      }
    groups.emplace_back(key, n);
  };
  visit_params_const([&](const std::string& name, const Tensor<T>& t) {
    bump(name.substr(0, name.find('.')), t.numel());
  });
  return groups;
}

namespace {

constexpr char kCheckpointMagic[4] = {'L', 'O', 'A', 'N'};
constexpr uint16_t kCheckpointVersion = 1;

struct Record {
  std::vector<uint32_t> dims;
  std::vector<float> values;
};

void put_u16(std::string& out, uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }
void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

void put_record(std::string& out, const std::string& name, const std::vector<uint32_t>& dims,
                const std::vector<float>& values) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<uint32_t>(dims.size()));
  for (uint32_t d : dims) put_u32(out, d);
  out.append(reinterpret_cast<const char*>(values.data()), values.size() * 4);
}

struct CkptReader {
  const std::string path;
  std::vector<char> buf;
  size_t offset = 0;
  explicit CkptReader(const std::filesystem::path& p) : path(p.string()) {
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open checkpoint " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    buf.resize(static_cast<size_t>(size));
    if (size > 0) in.read(buf.data(), size);
    if (!in) throw IoError("read failure on checkpoint " + path);
  }
  void bytes(void* p, size_t n) {
    if (offset + n > buf.size())
      throw IoError(path + ": truncated checkpoint at offset " + std::to_string(offset));
    std::memcpy(p, buf.data() + offset, n);
    offset += n;
  }
  uint16_t u16() { uint16_t v; bytes(&v, 2); return v; }
  uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
  std::pair<std::string, Record> record() {
    const uint32_t name_len = u32();
    std::string name(name_len, '\0');
    bytes(name.data(), name_len);
    Record rec;
    const uint32_t rank = u32();
    uint64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      rec.dims.push_back(u32());
      numel *= rec.dims.back();
    }
    if (numel > (buf.size() - offset) / 4)
      throw IoError(path + ": truncated checkpoint at offset " + std::to_string(offset) +
                    " (record " + name + " claims " + std::to_string(numel) + " values)");
    rec.values.resize(numel);
    bytes(rec.values.data(), numel * 4);
    return {std::move(name), std::move(rec)};
  }
};

}  // namespace

template <typename T>
void Model<T>::save_state(const std::filesystem::path& path) const {
  std::string out;
  out.append(kCheckpointMagic, 4);
  put_u16(out, kCheckpointVersion);

  std::vector<std::pair<std::string, Record>> params;
  visit_params_const([&](const std::string& name, const Tensor<T>& t) {
    Record rec;
    for (int64_t e : t.shape()) rec.dims.push_back(static_cast<uint32_t>(e));
    rec.values.reserve(static_cast<size_t>(t.numel()));
    for (T v : t.values()) rec.values.push_back(static_cast<float>(v));
    params.emplace_back(name, std::move(rec));
  });
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, rec] : params) put_record(out, name, rec.dims, rec.values);

  std::vector<std::pair<std::string, Record>> stats;
  const_cast<Model<T>*>(this)->visit_stats([&](const std::string& name, std::vector<T>& v) {
    Record rec;
    rec.dims.push_back(static_cast<uint32_t>(v.size()));
    for (T x : v) rec.values.push_back(static_cast<float>(x));
    stats.emplace_back(name, std::move(rec));
  });
  {
    Record rec_min, rec_max;
    rec_min.dims.push_back(static_cast<uint32_t>(input_norm.min.size()));
    rec_min.values = input_norm.min;
    rec_max.dims.push_back(static_cast<uint32_t>(input_norm.max.size()));
    rec_max.values = input_norm.max;
    stats.emplace_back("input_norm.min", std::move(rec_min));
    stats.emplace_back("input_norm.max", std::move(rec_max));
  }
  put_u32(out, static_cast<uint32_t>(stats.size()));
  for (const auto& [name, rec] : stats) put_record(out, name, rec.dims, rec.values);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("write failure on " + path.string());
}

template <typename T>
void Model<T>::load_state(const std::filesystem::path& path) {
  CkptReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError(r.path + ": bad checkpoint magic at offset 0, want \"LOAN\"");
  const uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw IoError(r.path + ": unsupported checkpoint version " + std::to_string(version));

  // Stage everything first so a malformed file leaves the model untouched.
  std::map<std::string, Record> params, stats;
  const uint32_t n_params = r.u32();
  for (uint32_t i = 0; i < n_params; ++i) params.insert(r.record());
  const uint32_t n_stats = r.u32();
  for (uint32_t i = 0; i < n_stats; ++i) stats.insert(r.record());
  if (r.offset != r.buf.size())
    throw IoError(r.path + ": trailing bytes at offset " + std::to_string(r.offset));

  size_t expected_params = 0;
  visit_params([&](const std::string& name, Tensor<T>& t) {
    ++expected_params;
    auto it = params.find(name);
    if (it == params.end()) throw IoError(r.path + ": missing parameter record " + name);
    const Record& rec = it->second;
    if (static_cast<int64_t>(rec.values.size()) != t.numel())
      throw IoError(r.path + ": parameter " + name + " has " + std::to_string(rec.values.size()) +
                    " values, model expects " + std::to_string(t.numel()));
  });
  if (expected_params != params.size())
    throw IoError(r.path + ": checkpoint holds " + std::to_string(params.size()) +
                  " parameter records, model expects " + std::to_string(expected_params));

  visit_params([&](const std::string& name, Tensor<T>& t) {
    const Record& rec = params.at(name);
    T* dst = t.data();
    for (size_t i = 0; i < rec.values.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
  });
  visit_stats([&](const std::string& name, std::vector<T>& v) {
    auto it = stats.find(name);
    if (it == stats.end()) throw IoError(r.path + ": missing statistic record " + name);
    if (it->second.values.size() != v.size())
      throw IoError(r.path + ": statistic " + name + " size mismatch");
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(it->second.values[i]);
  });
  auto load_norm = [&](const char* name, std::vector<float>& dst) {
    auto it = stats.find(name);
    if (it == stats.end()) throw IoError(r.path + ": missing statistic record " + name);
    dst = it->second.values;
  };
  load_norm("input_norm.min", input_norm.min);
  load_norm("input_norm.max", input_norm.max);

  for (auto& b : dynamic_blocks_) {
    if (b.bn) b.bn->initialized = true;
    if (b.loan) b.loan->cond_norm.initialized = true;
  }
  for (auto& b : static_blocks_)
    if (b.bn) b.bn->initialized = true;
}

template class Model<float>;
template class Model<double>;

}  // namespace loancast
