#include "loancast/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "loancast/loan.hpp"
#include "loancast/nn.hpp"
#include "loancast/temporal_encoding.hpp"

namespace loancast {

namespace {

using D = double;
constexpr double kStep = 1e-6;
// Central differences of a loss near 1 resolve gradients only down to about
// eps/h ~ 1e-10; differences below this floor are measurement noise, not
// backward-rule error.
constexpr double kAbsFloor = 1e-8;

Tensor<D> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<D> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor<D>::from_vector(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero so ReLU kinks stay clear of the probe step.
Tensor<D> random_nonzero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<D> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  return Tensor<D>::from_vector(std::move(shape), std::move(v), true);
}

// Max relative error between recorded gradients and central differences of
// the loss over every element of every wiggled tensor.
double fd_check(const std::function<Tensor<D>()>& forward_loss, std::vector<Tensor<D>> wiggle,
                double corrupt_factor, size_t* worst_index) {
  std::vector<std::vector<D>> analytic;
  {
    Tape<D> tape;
    Tape<D>::Scope scope(tape);
    Tensor<D> loss = forward_loss();
    tape.backward(loss);
    for (Tensor<D>& t : wiggle) {
      t.ensure_grad();
      analytic.emplace_back(t.grad().begin(), t.grad().end());
      t.zero_grad();
    }
  }
  double max_rel = 0.0;
  for (size_t w = 0; w < wiggle.size(); ++w) {
    Tensor<D>& t = wiggle[w];
    D* data = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const D saved = data[i];
      data[i] = saved + kStep;
      const double up = forward_loss().item();
      data[i] = saved - kStep;
      const double down = forward_loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * kStep);
      const double a = analytic[w][static_cast<size_t>(i)] * corrupt_factor;
      const double diff = std::abs(a - numeric);
      if (diff <= kAbsFloor) continue;
      const double rel = diff / (std::abs(numeric) + 1e-12);
      if (rel > max_rel) {
        max_rel = rel;
        if (worst_index) *worst_index = w;
      }
    }
  }
  return max_rel;
}

// Fixed random weights turn a tensor-valued op into a scalar loss.
Tensor<D> weighted_sum(const Tensor<D>& x, const Tensor<D>& weights) {
  return sum(mul(x, weights));
}

}  // namespace

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.dynamic_vars = 2;
  cfg.static_vars = 3;
  cfg.timesteps = 3;
  cfg.patch = 5;
  cfg.c1 = 2;
  cfg.c2 = 3;
  cfg.dynamic_features = 8;
  cfg.static_features = 4;
  cfg.conv_kernel_depth = 3;
  cfg.loan_blocks = {true, true, false};
  cfg.loan_init_scale = 0.1;  // real modulation so the check sees LOAN gradient flow
  cfg.temporal_encoding = true;
  cfg.dropout = 0.0;  // finite differences need a deterministic forward
  cfg.classifier_dims = {12, 8, 6, 4, 2};
  cfg.dynamic_pool = {{{1, 2, 2}, {1, 1, 1}, {1, 1, 1}}};
  cfg.static_pool = {{{2, 2}, {1, 1}, {1, 1}}};
  return cfg;
}

std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, const std::string& corrupt_layer) {
  std::vector<GradCheckResult> results;
  std::mt19937_64 rng(seed);

  auto check_named = [&](const std::string& layer, std::vector<std::string> names,
                         std::vector<Tensor<D>> wiggle, const std::function<Tensor<D>()>& loss,
                         double tolerance = 1e-4) {
    const double factor = layer == corrupt_layer ? 1.01 : 1.0;
    size_t worst = 0;
    const double err = fd_check(loss, std::move(wiggle), factor, &worst);
    const std::string worst_name = worst < names.size() ? names[worst] : "input";
    results.push_back({layer, worst_name, err, tolerance, err < tolerance});
  };
  auto check = [&](const std::string& layer, std::vector<Tensor<D>> wiggle,
                   const std::function<Tensor<D>()>& loss, double tolerance = 1e-4) {
    std::vector<std::string> names;
    for (size_t i = 0; i < wiggle.size(); ++i) names.push_back("arg" + std::to_string(i));
    check_named(layer, std::move(names), std::move(wiggle), loss, tolerance);
  };

  {
    Tensor<D> a = random_tensor({2, 3}, rng);
    Tensor<D> b = random_tensor({2, 3}, rng);
    check("elementwise_mul", {a, b}, [=]() { return sum(mul(a, b)); });
  }
  {
    Tensor<D> a = random_tensor({2, 4}, rng);
    Tensor<D> b = random_tensor({2, 4}, rng, 0.5, 1.5);
    Tensor<D> r = random_tensor({2, 4}, rng, 0.5, 1.5, false);
    check("elementwise_div", {a, b}, [=]() { return weighted_sum(div(a, b), r); });
  }
  {
    Tensor<D> x = random_tensor({4, 8}, rng);
    Tensor<D> w = random_tensor({3, 8}, rng);
    Tensor<D> b = random_tensor({3}, rng);
    Tensor<D> r = random_tensor({4, 3}, rng, 0.5, 1.5, false);
    check("classifier", {x, w, b}, [=]() { return weighted_sum(matmul_1x1conv(x, w, b), r); });
  }
  {
    std::mt19937_64 init(seed + 1);
    ConvParams<D> p = make_conv<D>(2, 3, {3, 3}, {1, 1}, {1, 1}, init);
    Tensor<D> x = random_tensor({1, 2, 5, 5}, rng);
    Tensor<D> r = random_tensor({1, 3, 5, 5}, rng, 0.5, 1.5, false);
    check("conv2d", {x, p.weight, p.bias}, [=]() { return weighted_sum(conv2d(x, p), r); });
  }
  {
    std::mt19937_64 init(seed + 2);
    ConvParams<D> p = make_conv<D>(2, 3, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, init);
    Tensor<D> x = random_tensor({1, 2, 4, 4, 4}, rng);
    Tensor<D> r = random_tensor({1, 3, 4, 4, 4}, rng, 0.5, 1.5, false);
    check("conv3d", {x, p.weight, p.bias}, [=]() { return weighted_sum(conv3d(x, p), r); });
  }
  {
    Tensor<D> x = random_tensor({1, 1, 4, 4}, rng);
    Tensor<D> r = random_tensor({1, 1, 2, 2}, rng, 0.5, 1.5, false);
    check("maxpool2d", {x}, [=]() { return weighted_sum(maxpool2d(x, {2, 2}, {2, 2}), r); });
  }
  {
    Tensor<D> x = random_tensor({1, 2, 4, 4, 4}, rng);
    Tensor<D> r = random_tensor({1, 2, 2, 2, 2}, rng, 0.5, 1.5, false);
    check("maxpool3d", {x},
          [=]() { return weighted_sum(maxpool3d(x, {2, 2, 2}, {2, 2, 2}), r); });
  }
  {
    Tensor<D> x = random_nonzero({3, 7}, rng);
    Tensor<D> r = random_tensor({3, 7}, rng, 0.5, 1.5, false);
    check("relu", {x}, [=]() { return weighted_sum(relu(x), r); });
  }
  {
    Tensor<D> x = random_tensor({4, 5}, rng);
    Tensor<D> r = random_tensor({4, 5}, rng, 0.5, 1.5, false);
    check("softmax", {x}, [=]() { return weighted_sum(softmax(x), r); });
  }
  {
    Tensor<D> x = random_tensor({2, 3, 4, 5}, rng);
    Tensor<D> r = random_tensor({2, 3}, rng, 0.5, 1.5, false);
    check("global_avg_pool", {x}, [=]() { return weighted_sum(global_avg_pool(x), r); });
  }
  {
    auto state = std::make_shared<BatchNormState<D>>(make_batchnorm<D>(3));
    Tensor<D> x = random_tensor({4, 3, 5}, rng);
    Tensor<D> r = random_tensor({4, 3, 5}, rng, 0.5, 1.5, false);
    check("batchnorm", {x, state->gamma, state->beta},
          [=]() { return weighted_sum(batchnorm(x, *state, Mode::kTrain), r); });
  }
  {
    auto state = std::make_shared<CondNormState<D>>(make_cond_norm<D>(3));
    Tensor<D> x = random_tensor({4, 3, 4, 4}, rng);
    Tensor<D> r = random_tensor({4, 3, 4, 4}, rng, 0.5, 1.5, false);
    check("loan_normalize", {x}, [=]() {
      return weighted_sum(normalize_conditional_map(x, *state, Mode::kTrain), r);
    });
  }
  {
    std::mt19937_64 init(seed + 3);
    auto layer = std::make_shared<LoanLayer<D>>(make_loan_layer<D>(
        LoanVariant::kActivationConditioned, 3, 3, false, init, /*init_scale=*/0.3));
    Tensor<D> z = random_tensor({2, 3, 5, 5}, rng);
    Tensor<D> r1 = random_tensor({2, 3, 5, 5}, rng, 0.5, 1.5, false);
    Tensor<D> r2 = random_tensor({2, 3, 5, 5}, rng, 0.5, 1.5, false);
    check("loan_generate",
          {z, layer->gamma_conv.weight, layer->gamma_conv.bias, layer->beta_conv.weight,
           layer->beta_conv.bias},
          [=]() {
            auto [gamma, beta] = generate_modulation(z, *layer);
            return add(weighted_sum(gamma, r1), weighted_sum(beta, r2));
          });
  }
  {
    Tensor<D> z = random_tensor({2, 3, 2, 4, 4}, rng);
    Tensor<D> gamma = random_tensor({2, 3, 4, 4}, rng);
    Tensor<D> beta = random_tensor({2, 3, 4, 4}, rng);
    Tensor<D> r = random_tensor({2, 3, 2, 4, 4}, rng, 0.5, 1.5, false);
    check("loan_modulate", {z, gamma, beta},
          [=]() { return weighted_sum(modulate(z, gamma, beta), r); });
  }
  {
    Tensor<D> x = random_tensor({2, 2, 6, 6}, rng);
    Tensor<D> r = random_tensor({2, 2, 3, 3}, rng, 0.5, 1.5, false);
    check("loan_resize", {x}, [=]() { return weighted_sum(resize_nearest(x, 3, 3), r); });
  }
  {
    EncodingTable<D> table = build_encoding_table<D>(8);
    auto w = std::make_shared<TemporalWeight<D>>(make_temporal_weight<D>(8));
    Tensor<D> x = random_tensor({3, 8}, rng);
    Tensor<D> r = random_tensor({3, 8}, rng, 0.5, 1.5, false);
    std::vector<int> tau{0, 100, 359};
    check("te_inject", {x, w->weight},
          [=]() { return weighted_sum(inject(x, tau, table, *w), r); });
  }
  {
    Tensor<D> probs = random_tensor({4, 2}, rng, 0.1, 0.9);
    std::vector<int> labels{1, 0, 1, 0};
    check("bce", {probs}, [=]() { return bce_loss<D>(probs, labels); });
  }
  {
    auto model = std::make_shared<Model<D>>(tiny_model_config(), seed + 4);
    Tensor<D> dyn = random_tensor({4, 2, 3, 5, 5}, rng, 0.0, 1.0, false);
    Tensor<D> stat = random_tensor({4, 3, 5, 5}, rng, 0.0, 1.0, false);
    std::vector<int> tau{0, 100, 200, 300};
    std::vector<int> labels{0, 1, 1, 0};
    std::vector<std::string> names;
    std::vector<Tensor<D>> params;
    model->visit_params([&](const std::string& name, Tensor<D>& t) {
      names.push_back(name);
      params.push_back(t);
    });
    check_named("model_end_to_end", std::move(names), std::move(params),
                [=]() { return bce_loss<D>(model->forward(dyn, stat, tau, Mode::kTrain), labels); },
                /*tolerance=*/1e-3);
  }
  {
    // same check with LOAN conditioned on the raw static variables
    ModelConfig cfg = tiny_model_config();
    cfg.loan_variant = LoanVariant::kVariableConditioned;
    auto model = std::make_shared<Model<D>>(cfg, seed + 5);
    Tensor<D> dyn = random_tensor({4, 2, 3, 5, 5}, rng, 0.0, 1.0, false);
    Tensor<D> stat = random_tensor({4, 3, 5, 5}, rng, 0.0, 1.0, false);
    std::vector<int> tau{10, 110, 210, 310};
    std::vector<int> labels{1, 0, 0, 1};
    std::vector<std::string> names;
    std::vector<Tensor<D>> params;
    model->visit_params([&](const std::string& name, Tensor<D>& t) {
      names.push_back(name);
      params.push_back(t);
    });
    check_named("model_end_to_end_varcond", std::move(names), std::move(params),
                [=]() { return bce_loss<D>(model->forward(dyn, stat, tau, Mode::kTrain), labels); },
                /*tolerance=*/1e-3);
  }
  return results;
}

bool gradcheck_all_pass(const std::vector<GradCheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace loancast
