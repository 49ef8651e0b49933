#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "loancast/gradcheck.hpp"
#include "loancast/model.hpp"

using namespace loancast;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig cfg = tiny_model_config();
  cfg.dropout = 0.25;
  return cfg;
}

template <typename T>
Tensor<T> rand01(Shape shape, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0, 1);
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from_vector(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("forward emits a probability row per sample") {
  Model<float> model(small_config(), 1);
  auto dyn = rand01<float>({2, 2, 3, 5, 5}, 10);
  auto stat = rand01<float>({2, 3, 5, 5}, 11);
  std::vector<int> tau{15, 200};
  auto probs = model.forward(dyn, stat, tau, Mode::kTrain);
  CHECK(probs.shape() == Shape{2, 2});
  for (int64_t i = 0; i < 2; ++i) {
    double row = 0;
    for (int64_t j = 0; j < 2; ++j) {
      const float p = probs.values()[i * 2 + j];
      CHECK(p >= 0.0f);
      CHECK(p <= 1.0f);
      row += p;
    }
    CHECK(std::abs(row - 1.0) < 1e-6);
  }

  auto bad = rand01<float>({2, 2, 3, 4, 4}, 12);
  CHECK_THROWS_AS((void)model.forward(bad, stat, tau, Mode::kTrain), DimensionError);
}

TEST_CASE("eval-mode forward is pure and duplicates agree") {
  Model<float> model(small_config(), 2);
  auto dyn = rand01<float>({4, 2, 3, 5, 5}, 20);
  auto stat = rand01<float>({4, 3, 5, 5}, 21);
  std::vector<int> tau{5, 5, 100, 100};
  (void)model.forward(dyn, stat, tau, Mode::kTrain);  // populate running stats

  // duplicate sample 0 into sample 1
  std::copy(dyn.data(), dyn.data() + 150, dyn.data() + 150);
  std::copy(stat.data(), stat.data() + 75, stat.data() + 75);
  auto p1 = model.forward(dyn, stat, tau, Mode::kEval);
  CHECK(p1.values()[0] == p1.values()[2]);
  CHECK(p1.values()[1] == p1.values()[3]);

  auto p2 = model.forward(dyn, stat, tau, Mode::kEval);
  CHECK(std::memcmp(p1.data(), p2.data(), sizeof(float) * 4) == 0);
}

TEST_CASE("temporal encoding with zero weight equals the TE-off model") {
  ModelConfig on = small_config();
  ModelConfig off = small_config();
  off.temporal_encoding = false;
  Model<float> m_on(on, 77);
  Model<float> m_off(off, 77);  // identical draw order: TE consumes no randomness
  for (auto& w : m_on.temporal_weight()->weight.values_mut()) w = 0.0f;

  auto dyn = rand01<float>({3, 2, 3, 5, 5}, 30);
  auto stat = rand01<float>({3, 3, 5, 5}, 31);
  std::vector<int> tau{0, 180, 365};
  auto p_on = m_on.forward(dyn, stat, tau, Mode::kTrain);
  auto p_off = m_off.forward(dyn, stat, tau, Mode::kTrain);
  for (int64_t i = 0; i < p_on.numel(); ++i)
    CHECK(std::abs(p_on.values()[i] - p_off.values()[i]) < 1e-7);
}

TEST_CASE("varying tau leaves the static feature dims untouched") {
  Model<float> model(small_config(), 3);
  auto dyn = rand01<float>({2, 2, 3, 5, 5}, 40);
  auto stat = rand01<float>({2, 3, 5, 5}, 41);
  auto r1 = model.forward_full(dyn, stat, std::vector<int>{10, 10}, Mode::kTrain);
  auto r2 = model.forward_full(dyn, stat, std::vector<int>{300, 123}, Mode::kTrain);
  const int64_t fd = small_config().dynamic_features;
  const int64_t width = fd + small_config().static_features;
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = fd; j < width; ++j)
      CHECK(r1.classifier_input.values()[i * width + j] ==
            r2.classifier_input.values()[i * width + j]);
  // and some dynamic dim moved
  bool moved = false;
  for (int64_t j = 0; j < fd && !moved; ++j)
    moved = r1.classifier_input.values()[width + j] != r2.classifier_input.values()[width + j];
  CHECK(moved);
}

TEST_CASE("near-identity LOAN start barely perturbs the LOAN-free model") {
  ModelConfig with = small_config();
  ModelConfig without = small_config();
  without.loan_blocks = {false, false, false};
  Model<float> m_with(with, 55);
  Model<float> m_without(without, 55);

  std::map<std::string, Tensor<float>> source;
  m_with.visit_params(
      [&](const std::string& name, Tensor<float>& t) { source.emplace(name, t); });
  m_without.visit_params([&](const std::string& name, Tensor<float>& t) {
    auto it = source.find(name);
    if (it == source.end() || it->second.numel() != t.numel()) return;
    std::copy(it->second.values().begin(), it->second.values().end(), t.data());
  });

  auto dyn = rand01<float>({4, 2, 3, 5, 5}, 50);
  auto stat = rand01<float>({4, 3, 5, 5}, 51);
  std::vector<int> tau{10, 20, 30, 40};
  auto pw = m_with.forward(dyn, stat, tau, Mode::kTrain);
  auto po = m_without.forward(dyn, stat, tau, Mode::kTrain);
  for (int64_t i = 0; i < pw.numel(); ++i)
    CHECK(std::abs(pw.values()[i] - po.values()[i]) < 1e-3);
}

TEST_CASE("one-branch baseline") {
  ModelConfig cfg = small_config();
  cfg.architecture = Architecture::kOneBranch3d;
  cfg.temporal_encoding = false;
  cfg.classifier_dims = {8, 8, 6, 4, 2};
  Model<float> model(cfg, 5);

  auto dyn = rand01<float>({2, 2, 3, 5, 5}, 60);
  auto stat = rand01<float>({2, 3, 5, 5}, 61);

  auto cube = Model<float>::assemble_one_branch_cube(dyn, stat);
  CHECK(cube.shape() == Shape{2, 5, 3, 5, 5});
  // dynamic channels copied, static channels repeated at every t
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t v = 0; v < 3; ++v)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t j = 0; j < 25; ++j)
          CHECK(cube.values()[(((n * 5) + 2 + v) * 3 + t) * 25 + j] ==
                stat.values()[(n * 3 + v) * 25 + j]);

  auto probs = model.forward(dyn, stat, std::vector<int>{}, Mode::kTrain);
  CHECK(probs.shape() == Shape{2, 2});
  for (int64_t i = 0; i < 2; ++i)
    CHECK(std::abs(probs.values()[i * 2] + probs.values()[i * 2 + 1] - 1.0f) < 1e-6);
}

TEST_CASE("parameter counts") {
  std::mt19937_64 rng(1);
  auto conv = make_conv<float>(10, 16, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
  CHECK(conv.weight.numel() + conv.bias.numel() == 4336);

  ModelConfig full;  // defaults: the full-size two-branch model
  Model<float> model(full, 9);
  const int64_t total = model.param_count();
  CHECK(total >= 250000);
  CHECK(total <= 500000);

  ModelConfig no_te = full;
  no_te.temporal_encoding = false;
  Model<float> m_no_te(no_te, 9);
  CHECK(total - m_no_te.param_count() == 256);

  ModelConfig no_loan = full;
  no_loan.loan_blocks = {false, false, false};
  Model<float> m_no_loan(no_loan, 9);
  // LOAN adds its projection convolutions and removes the block-1 affine pair
  int64_t loan_params = 0;
  Model<float> probe(full, 9);
  probe.visit_params([&](const std::string& name, Tensor<float>& t) {
    if (name.starts_with("loan.")) loan_params += t.numel();
  });
  CHECK(total - m_no_loan.param_count() == loan_params - 2 * full.c1);

  // one-branch conv stack outweighs the dynamic-branch stack (wider conv1)
  ModelConfig one = full;
  one.architecture = Architecture::kOneBranch3d;
  one.temporal_encoding = false;
  Model<float> m_one(one, 9);
  auto stack_params = [](Model<float>& m) {
    int64_t n = 0;
    m.visit_params([&](const std::string& name, Tensor<float>& t) {
      if (name.starts_with("dynamic.") && name.find(".conv.") != std::string::npos)
        n += t.numel();
    });
    return n;
  };
  CHECK(stack_params(m_one) > stack_params(model));
  CHECK(m_one.param_count() != model.param_count());
}

TEST_CASE("checkpoint round trip") {
  const fs::path path = fs::temp_directory_path() / "loancast_model.ckpt";
  const fs::path path2 = fs::temp_directory_path() / "loancast_model2.ckpt";
  ModelConfig cfg = small_config();
  Model<float> model(cfg, 13);
  auto dyn = rand01<float>({4, 2, 3, 5, 5}, 70);
  auto stat = rand01<float>({4, 3, 5, 5}, 71);
  std::vector<int> tau{1, 2, 3, 4};
  (void)model.forward(dyn, stat, tau, Mode::kTrain);  // advance running stats
  model.save_state(path);

  Model<float> twin(cfg, 999);  // different seed, all weights replaced by load
  twin.load_state(path);
  twin.save_state(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(!b1.empty());
  CHECK(b1 == b2);  // save -> load -> save is byte-identical

  auto before = model.forward(dyn, stat, tau, Mode::kEval);
  auto after = twin.forward(dyn, stat, tau, Mode::kEval);
  CHECK(std::memcmp(before.data(), after.data(),
                    sizeof(float) * static_cast<size_t>(before.numel())) == 0);

  // truncation leaves the target model untouched
  fs::resize_file(path, fs::file_size(path) / 2);
  Model<float> victim(cfg, 31);
  std::vector<float> weight_before(victim.trainable_params()[0].values().begin(),
                                   victim.trainable_params()[0].values().end());
  CHECK_THROWS_AS(victim.load_state(path), IoError);
  auto weight_after = victim.trainable_params()[0].values();
  CHECK(std::equal(weight_before.begin(), weight_before.end(), weight_after.begin()));

  // config mismatch is rejected
  ModelConfig other = cfg;
  other.c1 = cfg.c1 + 1;
  Model<float> wrong(other, 1);
  CHECK_THROWS_AS(wrong.load_state(path2), IoError);
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("config validation") {
  ModelConfig cfg = small_config();
  cfg.conv_kernel_depth = 2;
  CHECK_THROWS_AS((void)validate(cfg), ContractError);
  cfg = small_config();
  cfg.classifier_dims = {12, 8, 3};  // must end at 2
  CHECK_THROWS_AS((void)validate(cfg), ContractError);
  cfg = small_config();
  cfg.classifier_dims = {11, 8, 2};  // wrong input width
  CHECK_THROWS_AS((void)validate(cfg), ContractError);
  cfg = small_config();
  cfg.dynamic_features = 7;  // sinusoidal pairs need an even width
  CHECK_THROWS_AS((void)validate(cfg), ContractError);
}
