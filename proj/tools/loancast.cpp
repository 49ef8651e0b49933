// loancast command-line tool: synthetic cube generation, training,
// evaluation, prediction export, gradient checking and parameter reports.
//
// Exit codes: 0 success, 2 usage/config, 3 data/shape, 4 internal check
// failure.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "loancast/config.hpp"
#include "loancast/gradcheck.hpp"
#include "loancast/trainer.hpp"

namespace fs = std::filesystem;
using namespace loancast;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCheckFailed = 4;

uint64_t resolve_seed(const std::optional<uint64_t>& flag, uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("LOANCAST_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return v;
    throw ConfigError("LOANCAST_SEED is not an unsigned integer: '" + std::string(env) + "'");
  }
  return fallback;
}

// Shared model/run flags; applied on top of a config file in flag order.
struct Overrides {
  std::optional<uint64_t> seed;
  std::optional<int64_t> epochs;
  std::optional<int64_t> batch_size;
  std::optional<double> lr;
  std::optional<std::string> loan;        // on/off
  std::optional<std::string> loan_blocks; // e.g. 1,2
  std::optional<std::string> loan_variant;
  std::optional<std::string> te;          // on/off
  std::optional<std::string> arch;
  std::vector<std::string> sets;          // key=value
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Random seed (fallback: LOANCAST_SEED env)");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--batch-size", o.batch_size, "Batch size");
  cmd->add_option("--lr", o.lr, "Learning rate");
  cmd->add_option("--loan", o.loan, "LOAN layers: on|off")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--loan-blocks", o.loan_blocks, "LOAN placement, e.g. 1,2 or 1,2,3");
  cmd->add_option("--loan-variant", o.loan_variant, "Conditional map: activation|variables")
      ->check(CLI::IsMember({"activation", "variables"}));
  cmd->add_option("--te", o.te, "Temporal encoding: on|off")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--arch", o.arch, "Architecture: two-branch|one-branch-3d")
      ->check(CLI::IsMember({"two-branch", "one-branch-3d"}));
  cmd->add_option("--set", o.sets, "Override any config key, e.g. --set model.c1=8")
      ->take_all();
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  if (o.lr) cfg.train.learning_rate = *o.lr;
  if (o.loan) {
    if (*o.loan == "off")
      cfg.model.loan_blocks = {false, false, false};
    else if (!cfg.model.loan_enabled())
      cfg.model.loan_blocks = {true, true, false};
  }
  if (o.loan_blocks) set_config_key(cfg, "model.loan_blocks", *o.loan_blocks);
  if (o.loan_variant) set_config_key(cfg, "model.loan_variant", *o.loan_variant);
  if (o.te) cfg.model.temporal_encoding = *o.te == "on";
  if (o.arch) set_config_key(cfg, "model.architecture", *o.arch);
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

RunConfig load_config(const std::string& path, const Overrides& o) {
  RunConfig cfg;
  if (!path.empty()) {
    try {
      cfg = parse_config_file(path);
    } catch (const IoError& e) {
      throw ConfigError(e.what());  // bad --config argument
    }
  }
  apply_overrides(cfg, o);
  return cfg;
}

// Model-config inconsistencies are configuration mistakes, not data errors.
void validate_config(const ModelConfig& model) {
  try {
    validate(model);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

void check_archive_compatible(const ModelConfig& model, const CubeArchive& archive,
                              const std::string& what) {
  const CubeGeometry& g = archive.geom;
  if (g.n_dynamic != model.dynamic_vars || g.n_static != model.static_vars ||
      g.timesteps != model.timesteps || g.height != model.patch || g.width != model.patch)
    throw DimensionError(what + ": cube geometry " + std::to_string(g.n_dynamic) + "/" +
                         std::to_string(g.n_static) + " vars, T=" + std::to_string(g.timesteps) +
                         ", " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                         " does not match the model config");
}

int cmd_synth(uint64_t seed, int64_t pos, int64_t neg, const std::string& out) {
  CubeArchive archive = generate_synthetic(seed, pos, neg);
  try {
    write_archive(archive, out);
  } catch (const IoError& e) {
    // a bad --out argument is a usage problem, not a data problem
    throw ConfigError(e.what());
  }
  std::printf("wrote %s: %lld samples (%lld positive, %lld negative), %lldx%lld patch, T=%lld\n",
              out.c_str(), static_cast<long long>(archive.sample_count()),
              static_cast<long long>(pos), static_cast<long long>(neg),
              static_cast<long long>(archive.geom.height),
              static_cast<long long>(archive.geom.width),
              static_cast<long long>(archive.geom.timesteps));
  return kExitOk;
}

int cmd_train(RunConfig cfg, bool force) {
  if (cfg.train_cube.empty() || cfg.val_cube.empty() || cfg.out_dir.empty())
    throw ConfigError("train needs --train, --val and --out-dir (or [paths] in the config)");
  validate_config(cfg.model);

  const fs::path out_dir(cfg.out_dir);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw ConfigError("run directory " + cfg.out_dir +
                      " already holds results; pass --force to add another run");
  fs::create_directories(out_dir);

  CubeArchive train_archive = read_archive(cfg.train_cube);
  CubeArchive val_archive = read_archive(cfg.val_cube);
  check_archive_compatible(cfg.model, train_archive, cfg.train_cube);
  check_archive_compatible(cfg.model, val_archive, cfg.val_cube);

  {
    std::ofstream echo(out_dir / "config.cfg");
    echo << serialize_config(cfg);
  }

  Model<float> model(cfg.model, cfg.train.seed);
  std::ofstream log_file(out_dir / "train_log.csv");
  TrainLog log = train(model, train_archive, val_archive, cfg.train, &out_dir, &log_file);

  const EpochRecord& last = log.epochs.back();
  std::printf("trained %lld epoch(s), %zu step(s)\n",
              static_cast<long long>(log.epochs.size()), log.steps.size());
  char f1_text[32];
  if (last.val.prf.f1_defined)
    std::snprintf(f1_text, sizeof(f1_text), "%.2f", last.val.prf.f1);
  else
    std::snprintf(f1_text, sizeof(f1_text), "-");
  std::printf("final: train_loss %.6f, train_acc %.2f%%, val_loss %.6f, val_f1 %s\n",
              last.train_loss_mean, 100.0 * last.train_accuracy, last.val_loss, f1_text);
  if (log.best_val_f1 >= 0)
    std::printf("best epoch %lld (val F1 %.2f); checkpoints in %s\n",
                static_cast<long long>(log.best_epoch), log.best_val_f1, cfg.out_dir.c_str());
  else
    std::printf("best epoch %lld (val F1 undefined); checkpoints in %s\n",
                static_cast<long long>(log.best_epoch), cfg.out_dir.c_str());
  return kExitOk;
}

// The checkpoint's run directory carries the config echo; --config overrides.
RunConfig config_for_checkpoint(const std::string& checkpoint, const std::string& config_flag,
                                const Overrides& o) {
  if (!config_flag.empty()) return load_config(config_flag, o);
  const fs::path sibling = fs::path(checkpoint).parent_path() / "config.cfg";
  if (fs::exists(sibling)) return load_config(sibling.string(), o);
  return load_config("", o);
}

int cmd_eval(const std::string& checkpoint, const std::string& cube, double threshold,
             const std::string& config_flag, const std::string& out_prefix, const Overrides& o) {
  RunConfig cfg = config_for_checkpoint(checkpoint, config_flag, o);
  validate_config(cfg.model);
  Model<float> model(cfg.model, cfg.train.seed);
  model.load_state(checkpoint);
  CubeArchive archive = read_archive(cube);
  check_archive_compatible(cfg.model, archive, cube);

  auto scores = predict_scores(model, archive);
  std::vector<int> labels(archive.labels.begin(), archive.labels.end());
  MetricReport report = evaluate_scores(scores, labels, threshold);

  const std::string table = report_table(report);
  std::fputs(table.c_str(), stdout);
  std::ofstream(out_prefix + ".txt") << table;
  std::ofstream(out_prefix + ".kv") << report_keyvalue(report);
  std::printf("report written to %s.txt and %s.kv\n", out_prefix.c_str(), out_prefix.c_str());
  return kExitOk;
}

int cmd_predict(const std::string& checkpoint, const std::string& cube, const std::string& out,
                const std::string& config_flag, const Overrides& o) {
  RunConfig cfg = config_for_checkpoint(checkpoint, config_flag, o);
  validate_config(cfg.model);
  Model<float> model(cfg.model, cfg.train.seed);
  model.load_state(checkpoint);
  CubeArchive archive = read_archive(cube);
  check_archive_compatible(cfg.model, archive, cube);

  auto scores = predict_scores(model, archive);
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw IoError("cannot open " + out + " for writing");
    os = &file;
  }
  (*os) << "index,score,label\n";
  char line[64];
  for (size_t i = 0; i < scores.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.8f,%d\n", i, scores[i],
                  static_cast<int>(archive.labels[i]));
    (*os) << line;
  }
  return kExitOk;
}

int cmd_gradcheck(uint64_t seed, const std::string& corrupt) {
  const auto results = run_gradcheck_suite(seed, corrupt);
  std::printf("%-26s %-28s %-12s %s\n", "layer", "worst parameter", "max rel err", "status");
  for (const auto& r : results)
    std::printf("%-26s %-28s %-12.3e %s\n", r.layer.c_str(), r.worst_param.c_str(),
                r.max_rel_error, r.pass ? "PASS" : "FAIL");
  if (!gradcheck_all_pass(results)) {
    for (const auto& r : results)
      if (!r.pass)
        std::fprintf(stderr, "gradcheck failure: layer %s, parameter %s, max relative error %.3e\n",
                     r.layer.c_str(), r.worst_param.c_str(), r.max_rel_error);
    return kExitCheckFailed;
  }
  return kExitOk;
}

int cmd_params(const std::string& config_flag, const Overrides& o) {
  RunConfig cfg = load_config(config_flag, o);
  validate_config(cfg.model);
  Model<float> model(cfg.model, /*seed=*/0);
  std::printf("parameter breakdown:\n");
  for (const auto& [group, count] : model.param_breakdown())
    std::printf("  %-12s %10lld\n", group.c_str(), static_cast<long long>(count));
  const int64_t total = model.param_count();
  std::printf("total %lld\n", static_cast<long long>(total));

  const bool is_default_shape = cfg.model.architecture == Architecture::kTwoBranch &&
                                cfg.model.classifier_dims.empty();
  if (is_default_shape)
    std::printf("bracket [250000, 500000]: %s\n",
                total >= 250000 && total <= 500000 ? "PASS" : "FAIL");

  if (cfg.model.architecture == Architecture::kTwoBranch) {
    // deltas against TE-off / LOAN-off variants of the same config
    ModelConfig te_off = cfg.model;
    te_off.temporal_encoding = false;
    ModelConfig loan_off = cfg.model;
    loan_off.loan_blocks = {false, false, false};
    const int64_t te_delta =
        cfg.model.temporal_encoding ? total - Model<float>(te_off, 0).param_count() : 0;
    const int64_t loan_delta =
        cfg.model.loan_enabled() ? total - Model<float>(loan_off, 0).param_count() : 0;
    std::printf("te_delta %lld\n", static_cast<long long>(te_delta));
    std::printf("loan_delta %lld (projection convs minus the block-1 affine pair)\n",
                static_cast<long long>(loan_delta));

    ModelConfig one = cfg.model;
    one.architecture = Architecture::kOneBranch3d;
    one.temporal_encoding = false;
    one.classifier_dims.clear();
    Model<float> one_model(one, 0);
    auto conv_stack = [](Model<float>& m) {
      int64_t n = 0;
      m.visit_params([&](const std::string& name, Tensor<float>& t) {
        if (name.starts_with("dynamic.") && name.find(".conv.") != std::string::npos)
          n += t.numel();
      });
      return n;
    };
    std::printf("one_branch_total %lld (conv stack %lld vs two-branch dynamic stack %lld)\n",
                static_cast<long long>(one_model.param_count()),
                static_cast<long long>(conv_stack(one_model)),
                static_cast<long long>(conv_stack(model)));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"loancast: two-branch 2d/3d CNN wildfire-danger forecasting toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic cube archive");
  std::optional<uint64_t> synth_seed;
  int64_t synth_pos = 0, synth_neg = 0;
  std::string synth_out;
  synth->add_option("--seed", synth_seed, "Random seed (fallback: LOANCAST_SEED env)");
  synth->add_option("--pos", synth_pos, "Positive sample count")->required();
  synth->add_option("--neg", synth_neg, "Negative sample count")->required();
  synth->add_option("--out", synth_out, "Output .fcub path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model on cube archives");
  std::string train_config, train_train, train_val, train_out_dir;
  bool train_force = false;
  Overrides train_o;
  train_cmd->add_option("--config", train_config, "Config file");
  train_cmd->add_option("--train", train_train, "Training cube archive");
  train_cmd->add_option("--val", train_val, "Validation cube archive");
  train_cmd->add_option("--out-dir", train_out_dir, "Run directory for checkpoints and logs");
  train_cmd->add_flag("--force", train_force, "Write into a non-empty run directory");
  add_override_flags(train_cmd, train_o);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a cube archive");
  std::string eval_ckpt, eval_cube, eval_config, eval_out = "eval_report";
  double eval_threshold = 0.5;
  Overrides eval_o;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval_cmd->add_option("--cube", eval_cube, "Cube archive")->required();
  eval_cmd->add_option("--threshold", eval_threshold, "Positive-class decision threshold");
  eval_cmd->add_option("--config", eval_config, "Config file (default: config.cfg next to the checkpoint)");
  eval_cmd->add_option("--out", eval_out, "Report path prefix");
  add_override_flags(eval_cmd, eval_o);

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Write per-sample scores as index,score,label");
  std::string pred_ckpt, pred_cube, pred_out, pred_config;
  Overrides pred_o;
  predict_cmd->add_option("--checkpoint", pred_ckpt, "Model checkpoint")->required();
  predict_cmd->add_option("--cube", pred_cube, "Cube archive")->required();
  predict_cmd->add_option("--out", pred_out, "Output file (default: stdout)");
  predict_cmd->add_option("--config", pred_config, "Config file (default: config.cfg next to the checkpoint)");
  add_override_flags(predict_cmd, pred_o);

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Run the 64-bit finite-difference layer suite");
  std::optional<uint64_t> grad_seed;
  std::string grad_corrupt, grad_size = "tiny";
  grad_cmd->add_option("--seed", grad_seed, "Random seed (fallback: LOANCAST_SEED env)");
  grad_cmd->add_option("--size", grad_size, "Suite size (tiny)")->check(CLI::IsMember({"tiny"}));
  grad_cmd->add_option("--corrupt", grad_corrupt,
                       "Scale this layer's analytic gradient by 1.01 (harness self-test)");

  // params
  auto* params_cmd = app.add_subcommand("params", "Report trainable parameter counts");
  std::string params_config;
  Overrides params_o;
  params_cmd->add_option("--config", params_config, "Config file");
  add_override_flags(params_cmd, params_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(resolve_seed(synth_seed, 0), synth_pos, synth_neg, synth_out);
    if (*train_cmd) {
      RunConfig cfg = load_config(train_config, train_o);
      if (!train_train.empty()) cfg.train_cube = train_train;
      if (!train_val.empty()) cfg.val_cube = train_val;
      if (!train_out_dir.empty()) cfg.out_dir = train_out_dir;
      if (!train_o.seed) cfg.train.seed = resolve_seed(std::nullopt, cfg.train.seed);
      return cmd_train(std::move(cfg), train_force);
    }
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_cube, eval_threshold, eval_config, eval_out, eval_o);
    if (*predict_cmd) return cmd_predict(pred_ckpt, pred_cube, pred_out, pred_config, pred_o);
    if (*grad_cmd) return cmd_gradcheck(resolve_seed(grad_seed, 7), grad_corrupt);
    if (*params_cmd) return cmd_params(params_config, params_o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kExitData;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitData;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kExitCheckFailed;
  }
  return kExitConfig;
}
