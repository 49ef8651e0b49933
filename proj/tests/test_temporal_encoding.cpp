#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "loancast/temporal_encoding.hpp"

using namespace loancast;

TEST_CASE("encoding table matches a scalar evaluation") {
  auto table = build_encoding_table<double>(256);

  // tau = 0: even dims sin(0)=0, odd dims cos(0)=1
  for (int64_t j = 0; j < 128; ++j) {
    CHECK(table.table.values()[2 * j] == 0.0);
    CHECK(table.table.values()[2 * j + 1] == 1.0);
  }

  // independent scalar math over a spread of rows and dims
  for (int tau : {1, 100, 365})
    for (int64_t j : {int64_t{0}, int64_t{1}, int64_t{13}, int64_t{127}}) {
      const double angle = tau / std::pow(10.0, (2.0 * static_cast<double>(j)) / 256.0);
      const double s = std::sin(angle);
      const double c = std::cos(angle);
      CHECK(std::abs(table.table.values()[tau * 256 + 2 * j] - s) <= 1e-12);
      CHECK(std::abs(table.table.values()[tau * 256 + 2 * j + 1] - c) <= 1e-12);
    }
  // spot value: tau=100, j=0 -> sin(100 rad)
  CHECK(table.table.values()[100 * 256] == doctest::Approx(std::sin(100.0)).epsilon(1e-12));

  // every entry bounded
  for (double v : table.table.values()) {
    CHECK(v <= 1.0);
    CHECK(v >= -1.0);
  }
}

TEST_CASE("all 366 rows are pairwise distinct") {
  auto table = build_encoding_table<double>(256);
  double min_dist = 1e300;
  for (int a = 0; a < 366; ++a)
    for (int b = a + 1; b < 366; ++b) {
      double d2 = 0;
      for (int64_t j = 0; j < 256; ++j) {
        const double d = table.table.values()[a * 256 + j] - table.table.values()[b * 256 + j];
        d2 += d * d;
      }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  CHECK(min_dist > 0.0);
}

TEST_CASE("table construction is pure and bit-identical") {
  auto t1 = build_encoding_table<double>(64);
  auto t2 = build_encoding_table<double>(64);
  CHECK(std::memcmp(t1.table.data(), t2.table.data(),
                    static_cast<size_t>(t1.table.numel()) * sizeof(double)) == 0);
  CHECK_THROWS_AS((void)build_encoding_table<double>(7), ContractError);
}

TEST_CASE("day_of_year fixed 366-slot calendar") {
  CHECK(day_of_year(2021, 1, 1) == 0);
  CHECK(day_of_year(2020, 2, 29) == 59);
  CHECK(day_of_year(2020, 3, 1) == 60);
  CHECK(day_of_year(2021, 3, 1) == 60);  // stable across leap status
  CHECK(day_of_year(2020, 12, 31) == 365);
  CHECK(day_of_year(2021, 12, 31) == 365);

  CHECK_THROWS_AS((void)day_of_year(2021, 2, 29), ContractError);
  CHECK_THROWS_AS((void)day_of_year(1900, 2, 29), ContractError);  // century, not leap
  CHECK(day_of_year(2000, 2, 29) == 59);                            // 400-year rule
  CHECK_THROWS_AS((void)day_of_year(2021, 13, 1), ContractError);
  CHECK_THROWS_AS((void)day_of_year(2021, 4, 31), ContractError);
}

TEST_CASE("inject") {
  auto table = build_encoding_table<double>(8);
  auto w = make_temporal_weight<double>(8);
  std::vector<int> tau{3, 200};

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> xv(16);
  for (auto& v : xv) v = dist(rng);
  auto x = Tensor<double>::from_vector({2, 8}, xv);

  // W == 0 annihilates the encoding
  auto w0 = TemporalWeight<double>{Tensor<double>::zeros({8}, true)};
  auto same = inject(x, tau, table, w0);
  for (int64_t i = 0; i < 16; ++i) CHECK(same.values()[i] == xv[static_cast<size_t>(i)]);

  // X_d == 0, W == 1 returns the table rows
  auto zero = Tensor<double>::zeros({2, 8});
  auto rows = inject(zero, tau, table, w);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 8; ++j)
      CHECK(rows.values()[i * 8 + j] == table.table.values()[tau[static_cast<size_t>(i)] * 8 + j]);

  std::vector<int> bad{366};
  CHECK_THROWS_AS((void)inject(x, bad, table, w), ContractError);
  std::vector<int> neg{-1, 0};
  CHECK_THROWS_AS((void)inject(x, neg, table, w), ContractError);
}

TEST_CASE("inject gradient w.r.t. W is the sum of selected rows") {
  auto table = build_encoding_table<double>(8);
  auto w = make_temporal_weight<double>(8);
  std::vector<int> tau{10, 10, 77};
  auto x = Tensor<double>::zeros({3, 8}, true);

  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  auto out = inject(x, tau, table, w);
  auto loss = sum(out);
  tape.backward(loss);

  for (int64_t j = 0; j < 8; ++j) {
    const double expect = table.table.values()[10 * 8 + j] * 2 + table.table.values()[77 * 8 + j];
    CHECK(w.weight.grad()[j] == doctest::Approx(expect).epsilon(1e-12));
  }

  // central-difference cross-check on W
  const double h = 1e-6;
  for (int64_t j = 0; j < 8; ++j) {
    const double saved = w.weight.data()[j];
    w.weight.data()[j] = saved + h;
    const double up = sum(inject(x, tau, table, w)).item();
    w.weight.data()[j] = saved - h;
    const double down = sum(inject(x, tau, table, w)).item();
    w.weight.data()[j] = saved;
    const double numeric = (up - down) / (2 * h);
    CHECK(std::abs(w.weight.grad()[j] - numeric) / (std::abs(numeric) + 1e-12) < 1e-4);
  }
}
