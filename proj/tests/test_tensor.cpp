#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "loancast/tensor.hpp"
#include "oracles.hpp"

using namespace loancast;

TEST_CASE("elementwise basics") {
  auto a = Tensor<float>::from_vector({3}, {1, 2, 3});
  auto b = Tensor<float>::from_vector({3}, {4, 5, 6});
  auto m = mul(a, b);
  CHECK(m.values()[0] == 4.0f);
  CHECK(m.values()[1] == 10.0f);
  CHECK(m.values()[2] == 18.0f);

  auto same = add(a, 0.0f);
  for (int i = 0; i < 3; ++i) CHECK(same.values()[i] == a.values()[i]);

  auto d = div(b, a);
  CHECK(d.values()[2] == doctest::Approx(2.0f));
  auto s = sub(b, a);
  CHECK(s.values()[0] == 3.0f);
}

TEST_CASE("elementwise suffix broadcast") {
  auto a = Tensor<float>::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<float>::from_vector({3}, {10, 20, 30});
  auto out = add(a, b);
  CHECK(out.values()[0] == 11.0f);
  CHECK(out.values()[5] == 36.0f);

  auto bad = Tensor<float>::from_vector({2}, {1, 2});
  CHECK_THROWS_AS((void)add(a, bad), DimensionError);
}

TEST_CASE("broadcast gradient sums over leading axes") {
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  auto a = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4}, true);
  auto b = Tensor<double>::from_vector({2}, {5, 7}, true);
  auto loss = sum(mul(a, b));
  tape.backward(loss);
  CHECK(b.grad()[0] == doctest::Approx(1 + 3));
  CHECK(b.grad()[1] == doctest::Approx(2 + 4));
  CHECK(a.grad()[0] == doctest::Approx(5));
  CHECK(a.grad()[3] == doctest::Approx(7));
}

TEST_CASE("gradient of sum(a*b) equals b under central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> av(6), bv(6);
  for (auto& v : av) v = dist(rng);
  for (auto& v : bv) v = dist(rng);
  auto a = Tensor<double>::from_vector({2, 3}, av, true);
  auto b = Tensor<double>::from_vector({2, 3}, bv);

  {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    auto loss = sum(mul(a, b));
    tape.backward(loss);
  }
  // analytic grad should equal b; cross-check with h=1e-6 central differences
  const double h = 1e-6;
  for (int i = 0; i < 6; ++i) {
    const double saved = a.data()[i];
    a.data()[i] = saved + h;
    double up = sum(mul(a, b)).item();
    a.data()[i] = saved - h;
    double down = sum(mul(a, b)).item();
    a.data()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double rel = std::abs(a.grad()[i] - numeric) / (std::abs(numeric) + 1e-12);
    CHECK(rel < 1e-4);
    CHECK(a.grad()[i] == doctest::Approx(bv[static_cast<size_t>(i)]));
  }
}

TEST_CASE("matmul_1x1conv identity and fixture") {
  auto x = Tensor<float>::from_vector({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor<float>::from_vector({2, 2}, {1, 0, 0, 1});
  auto zero = Tensor<float>::zeros({2});
  auto y = matmul_1x1conv(x, eye, zero);
  for (int i = 0; i < 4; ++i) CHECK(y.values()[i] == x.values()[i]);

  auto x1 = Tensor<float>::from_vector({1, 2}, {1, 1});
  auto w1 = Tensor<float>::from_vector({1, 2}, {1, 1});
  auto b1 = Tensor<float>::zeros({1});
  CHECK(matmul_1x1conv(x1, w1, b1).item() == 2.0f);

  auto bad = Tensor<float>::from_vector({1, 3}, {1, 1, 1});
  CHECK_THROWS_AS((void)matmul_1x1conv(x1, bad, b1), DimensionError);
}

TEST_CASE("matmul_1x1conv matches the loop oracle") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> xv(4 * 8), wv(3 * 8), bv(3);
  for (auto& v : xv) v = dist(rng);
  for (auto& v : wv) v = dist(rng);
  for (auto& v : bv) v = dist(rng);
  auto x = Tensor<double>::from_vector({4, 8}, xv);
  auto w = Tensor<double>::from_vector({3, 8}, wv);
  auto b = Tensor<double>::from_vector({3}, bv);
  auto y = matmul_1x1conv(x, w, b);
  auto expect = oracle::matmul_loops(xv, 4, 8, wv, bv, 3);
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(std::abs(y.values()[i] - expect[i]) < 1e-6);
}

TEST_CASE("backward fills gradients and validates the loss") {
  Tape<float> tape;
  Tape<float>::Scope scope(tape);
  auto x = Tensor<float>::from_vector({2, 2}, {1, -2, 3, 4}, true);
  auto loss = sum(x);
  tape.backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == 1.0f);

  // loss = sum(x*x)/2 -> grad = x
  auto x2 = Tensor<float>::from_vector({2, 2}, {1, -2, 3, 4}, true);
  auto loss2 = div(sum(mul(x2, x2)), 2.0f);
  tape.backward(loss2);
  for (int i = 0; i < 4; ++i) CHECK(x2.grad()[i] == doctest::Approx(x2.values()[i]));

  auto vec = mul(x2, 2.0f);
  CHECK_THROWS_AS(tape.backward(vec), ContractError);

  auto off_tape = Tensor<float>::full({1}, 1.0f);
  CHECK_THROWS_AS(tape.backward(off_tape), ContractError);
}

TEST_CASE("repeated backward accumulates until zeroed") {
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  auto x = Tensor<double>::from_vector({2}, {1, 2}, true);
  auto loss = sum(x);
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  x.zero_grad();
  loss.zero_grad();
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("tape replay is bit-deterministic") {
  auto run = [](std::vector<double>& grads) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> dist(-1, 1);
    std::vector<double> av(12), bv(12);
    for (auto& v : av) v = dist(rng);
    for (auto& v : bv) v = dist(rng);
    auto a = Tensor<double>::from_vector({3, 4}, av, true);
    auto b = Tensor<double>::from_vector({3, 4}, bv, true);
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    auto loss = sum(mul(add(a, b), sub(a, b)));
    tape.backward(loss);
    grads.assign(a.grad().begin(), a.grad().end());
    grads.insert(grads.end(), b.grad().begin(), b.grad().end());
    return loss.item();
  };
  std::vector<double> g1, g2;
  const double l1 = run(g1);
  const double l2 = run(g2);
  CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
  REQUIRE(g1.size() == g2.size());
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("op outputs never alias their inputs") {
  auto a = Tensor<float>::from_vector({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<float>::from_vector({2}, {1, 1});
  const std::vector<float> a_before(a.values().begin(), a.values().end());

  auto out = add(a, b);
  CHECK(out.storage_id() != a.storage_id());
  for (auto& v : out.values_mut()) v = -99.0f;
  for (int i = 0; i < 4; ++i) CHECK(a.values()[i] == a_before[static_cast<size_t>(i)]);

  auto s = sum(a);
  s.values_mut()[0] = -1.0f;
  for (int i = 0; i < 4; ++i) CHECK(a.values()[i] == a_before[static_cast<size_t>(i)]);
}

TEST_CASE("shape validation") {
  CHECK_THROWS_AS((void)Tensor<float>::zeros({2, 0}), DimensionError);
  CHECK_THROWS_AS((void)Tensor<float>::from_vector({3}, {1.0f, 2.0f}), DimensionError);
  auto t = Tensor<float>::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.extent(1) == 3);
  CHECK_THROWS_AS((void)t.item(), ContractError);
}
