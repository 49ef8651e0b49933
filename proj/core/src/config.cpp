#include "loancast/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace loancast {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

int64_t parse_int(const std::string& v, const std::string& key) {
  int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("key " + key + ": expected integer, got '" + v + "'");
  return out;
}

uint64_t parse_uint(const std::string& v, const std::string& key) {
  uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("key " + key + ": expected unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("key " + key + ": expected on/off, got '" + v + "'");
}

std::array<bool, 3> parse_blocks(const std::string& v, const std::string& key) {
  std::array<bool, 3> blocks{false, false, false};
  if (v == "none") return blocks;
  for (const std::string& part : split(v, ',')) {
    const int64_t b = parse_int(part, key);
    if (b < 1 || b > 3) throw ConfigError("key " + key + ": block index " + part + " not in 1..3");
    blocks[static_cast<size_t>(b - 1)] = true;
  }
  return blocks;
}

std::string blocks_str(const std::array<bool, 3>& blocks) {
  std::string s;
  for (int i = 0; i < 3; ++i)
    if (blocks[static_cast<size_t>(i)]) s += (s.empty() ? "" : ",") + std::to_string(i + 1);
  return s.empty() ? "none" : s;
}

template <size_t N>
std::array<int64_t, N> parse_window(const std::string& v, const std::string& key) {
  const auto parts = split(v, 'x');
  if (parts.size() != N)
    throw ConfigError("key " + key + ": expected " + std::to_string(N) + " extents, got '" + v + "'");
  std::array<int64_t, N> w{};
  for (size_t i = 0; i < N; ++i) w[i] = parse_int(parts[i], key);
  return w;
}

template <size_t N>
std::array<std::array<int64_t, N>, 3> parse_pools(const std::string& v, const std::string& key) {
  const auto parts = split(v, ',');
  if (parts.size() != 3) throw ConfigError("key " + key + ": expected 3 windows, got '" + v + "'");
  std::array<std::array<int64_t, N>, 3> pools{};
  for (size_t i = 0; i < 3; ++i) pools[i] = parse_window<N>(parts[i], key);
  return pools;
}

template <size_t N>
std::string pools_str(const std::array<std::array<int64_t, N>, 3>& pools) {
  std::string s;
  for (size_t i = 0; i < 3; ++i) {
    if (i) s += ",";
    for (size_t a = 0; a < N; ++a) {
      if (a) s += "x";
      s += std::to_string(pools[i][a]);
    }
  }
  return s;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  ModelConfig& m = cfg.model;
  TrainConfig& t = cfg.train;
  if (key == "model.dynamic_vars") m.dynamic_vars = parse_int(value, key);
  else if (key == "model.static_vars") m.static_vars = parse_int(value, key);
  else if (key == "model.timesteps") m.timesteps = parse_int(value, key);
  else if (key == "model.patch") m.patch = parse_int(value, key);
  else if (key == "model.c1") m.c1 = parse_int(value, key);
  else if (key == "model.c2") m.c2 = parse_int(value, key);
  else if (key == "model.dynamic_features") m.dynamic_features = parse_int(value, key);
  else if (key == "model.static_features") m.static_features = parse_int(value, key);
  else if (key == "model.conv_kernel_depth") m.conv_kernel_depth = parse_int(value, key);
  else if (key == "model.loan_blocks") m.loan_blocks = parse_blocks(value, key);
  else if (key == "model.loan_variant") {
    if (value == "activation") m.loan_variant = LoanVariant::kActivationConditioned;
    else if (value == "variables") m.loan_variant = LoanVariant::kVariableConditioned;
    else throw ConfigError("key " + key + ": expected activation|variables, got '" + value + "'");
  }
  else if (key == "model.loan_init_scale") m.loan_init_scale = parse_double(value, key);
  else if (key == "model.te") m.temporal_encoding = parse_bool(value, key);
  else if (key == "model.te_base") m.te_base = parse_double(value, key);
  else if (key == "model.dropout") m.dropout = parse_double(value, key);
  else if (key == "model.classifier_dims") {
    m.classifier_dims.clear();
    if (value != "default")
      for (const std::string& part : split(value, ','))
        m.classifier_dims.push_back(parse_int(part, key));
  }
  else if (key == "model.architecture") {
    if (value == "two-branch") m.architecture = Architecture::kTwoBranch;
    else if (value == "one-branch-3d") m.architecture = Architecture::kOneBranch3d;
    else throw ConfigError("key " + key + ": expected two-branch|one-branch-3d, got '" + value + "'");
  }
  else if (key == "model.dynamic_pool") m.dynamic_pool = parse_pools<3>(value, key);
  else if (key == "model.static_pool") m.static_pool = parse_pools<2>(value, key);
  else if (key == "train.learning_rate") t.learning_rate = parse_double(value, key);
  else if (key == "train.beta1") t.beta1 = parse_double(value, key);
  else if (key == "train.beta2") t.beta2 = parse_double(value, key);
  else if (key == "train.adam_eps") t.adam_eps = parse_double(value, key);
  else if (key == "train.weight_decay") t.weight_decay = parse_double(value, key);
  else if (key == "train.decoupled_decay") t.decoupled_decay = parse_bool(value, key);
  else if (key == "train.batch_size") t.batch_size = parse_int(value, key);
  else if (key == "train.epochs") t.epochs = parse_int(value, key);
  else if (key == "train.seed") t.seed = parse_uint(value, key);
  else if (key == "train.threshold") t.threshold = parse_double(value, key);
  else if (key == "train.stop_at_train_accuracy") {
    if (value == "none") t.stop_at_train_accuracy.reset();
    else t.stop_at_train_accuracy = parse_double(value, key);
  }
  else if (key == "train.min_epochs") t.min_epochs = parse_int(value, key);
  else if (key == "paths.train_cube") cfg.train_cube = value;
  else if (key == "paths.val_cube") cfg.val_cube = value;
  else if (key == "paths.out_dir") cfg.out_dir = value;
  else throw ConfigError("unknown key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header '" + line + "'", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "paths")
        throw ConfigError("unknown section [" + section + "]", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + line + "'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("key '" + key + "' before any [section]", line_no);
    try {
      set_config_key(cfg, section + "." + key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line_no);
    }
  }
  return cfg;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const TrainConfig& t = cfg.train;
  std::ostringstream os;
  os << "[model]\n";
  os << "dynamic_vars = " << m.dynamic_vars << "\n";
  os << "static_vars = " << m.static_vars << "\n";
  os << "timesteps = " << m.timesteps << "\n";
  os << "patch = " << m.patch << "\n";
  os << "c1 = " << m.c1 << "\n";
  os << "c2 = " << m.c2 << "\n";
  os << "dynamic_features = " << m.dynamic_features << "\n";
  os << "static_features = " << m.static_features << "\n";
  os << "conv_kernel_depth = " << m.conv_kernel_depth << "\n";
  os << "loan_blocks = " << blocks_str(m.loan_blocks) << "\n";
  os << "loan_variant = "
     << (m.loan_variant == LoanVariant::kActivationConditioned ? "activation" : "variables")
     << "\n";
  os << "loan_init_scale = " << fmt_double(m.loan_init_scale) << "\n";
  os << "te = " << (m.temporal_encoding ? "on" : "off") << "\n";
  os << "te_base = " << fmt_double(m.te_base) << "\n";
  os << "dropout = " << fmt_double(m.dropout) << "\n";
  if (m.classifier_dims.empty()) {
    os << "classifier_dims = default\n";
  } else {
    os << "classifier_dims = ";
    for (size_t i = 0; i < m.classifier_dims.size(); ++i)
      os << (i ? "," : "") << m.classifier_dims[i];
    os << "\n";
  }
  os << "architecture = "
     << (m.architecture == Architecture::kTwoBranch ? "two-branch" : "one-branch-3d") << "\n";
  os << "dynamic_pool = " << pools_str<3>(m.dynamic_pool) << "\n";
  os << "static_pool = " << pools_str<2>(m.static_pool) << "\n";
  os << "\n[train]\n";
  os << "learning_rate = " << fmt_double(t.learning_rate) << "\n";
  os << "beta1 = " << fmt_double(t.beta1) << "\n";
  os << "beta2 = " << fmt_double(t.beta2) << "\n";
  os << "adam_eps = " << fmt_double(t.adam_eps) << "\n";
  os << "weight_decay = " << fmt_double(t.weight_decay) << "\n";
  os << "decoupled_decay = " << (t.decoupled_decay ? "on" : "off") << "\n";
  os << "batch_size = " << t.batch_size << "\n";
  os << "epochs = " << t.epochs << "\n";
  os << "seed = " << t.seed << "\n";
  os << "threshold = " << fmt_double(t.threshold) << "\n";
  os << "stop_at_train_accuracy = "
     << (t.stop_at_train_accuracy ? fmt_double(*t.stop_at_train_accuracy) : "none") << "\n";
  os << "min_epochs = " << t.min_epochs << "\n";
  os << "\n[paths]\n";
  os << "train_cube = " << cfg.train_cube << "\n";
  os << "val_cube = " << cfg.val_cube << "\n";
  os << "out_dir = " << cfg.out_dir << "\n";
  return os.str();
}

}  // namespace loancast
