#include "loancast/temporal_encoding.hpp"

#include <cmath>

namespace loancast {

template <typename T>
EncodingTable<T> build_encoding_table(int64_t dim, double base) {
  LOANCAST_CHECK(dim > 0 && dim % 2 == 0, "build_encoding_table: dim must be even, got ", dim);
  LOANCAST_CHECK(base > 1.0, "build_encoding_table: base must exceed 1, got ", base);
  std::vector<T> values(static_cast<size_t>(kDaysPerYearSlots) * dim);
  for (int tau = 0; tau < kDaysPerYearSlots; ++tau) {
    T* row = values.data() + static_cast<size_t>(tau) * dim;
    for (int64_t j = 0; 2 * j < dim; ++j) {
      const double angle =
          static_cast<double>(tau) / std::pow(base, static_cast<double>(2 * j) / static_cast<double>(dim));
      row[2 * j] = static_cast<T>(std::sin(angle));
      row[2 * j + 1] = static_cast<T>(std::cos(angle));
    }
  }
  EncodingTable<T> t;
  t.table = Tensor<T>::from_vector({kDaysPerYearSlots, dim}, std::move(values));
  t.dim = dim;
  t.base = base;
  return t;
}

namespace {
// Month lengths of the fixed 366-slot calendar (February always 29).
constexpr int kSlotMonthDays[12] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};

bool is_leap(int year) {
  return (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
}
}  // namespace

int day_of_year(int year, int month, int day) {
  LOANCAST_CHECK(month >= 1 && month <= 12, "day_of_year: month ", month, " out of range");
  int real_days = kSlotMonthDays[month - 1];
  if (month == 2 && !is_leap(year)) real_days = 28;
  LOANCAST_CHECK(day >= 1 && day <= real_days, "day_of_year: ", year, "-", month, "-", day,
                 " is not a valid date");
  int slot = day - 1;
  for (int m = 1; m < month; ++m) slot += kSlotMonthDays[m - 1];
  return slot;
}

template <typename T>
TemporalWeight<T> make_temporal_weight(int64_t dim) {
  return TemporalWeight<T>{Tensor<T>::full({dim}, T(1), /*requires_grad=*/true)};
}

template <typename T>
Tensor<T> inject(const Tensor<T>& x_d, std::span<const int> tau, const EncodingTable<T>& table,
                 const TemporalWeight<T>& w) {
  LOANCAST_CHECK_DIM(x_d.rank() == 2 && x_d.extent(1) == table.dim,
                     "inject: want x_d [N,", table.dim, "], got ", shape_str(x_d.shape()));
  const int64_t n = x_d.extent(0), dim = table.dim;
  LOANCAST_CHECK(static_cast<int64_t>(tau.size()) == n, "inject: ", tau.size(), " day indices vs ",
                 n, " rows");
  for (int t : tau)
    LOANCAST_CHECK(t >= 0 && t < kDaysPerYearSlots, "inject: day index ", t, " outside [0,365]");
  LOANCAST_CHECK_DIM(w.weight.numel() == dim, "inject: weight length ", w.weight.numel(),
                     " != dim ", dim);

  Tensor<T> out = Tensor<T>::zeros(x_d.shape());
  const T* px = x_d.data();
  const T* pt = table.table.data();
  const T* pw = w.weight.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const T* row = pt + static_cast<int64_t>(tau[static_cast<size_t>(i)]) * dim;
    for (int64_t j = 0; j < dim; ++j) po[i * dim + j] = px[i * dim + j] + pw[j] * row[j];
  }

  if (grad_enabled<T>({&x_d, &w.weight})) {
    auto xn = x_d.node();
    auto wn = w.weight.node();
    auto tn = table.table.node();
    auto on = out.node();
    std::vector<int> tau_copy(tau.begin(), tau.end());
    Tape<T>* tape = Tape<T>::active();
    int64_t idx = tape->record([xn, wn, tn, on, tau_copy = std::move(tau_copy), n, dim]() {
      if (on->grad.empty()) return;
      const T* g = on->grad.data();
      if (xn->requires_grad) {
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
        T* gx = xn->grad.data();
        for (int64_t i = 0; i < n * dim; ++i) gx[i] += g[i];
      }
      if (wn->requires_grad) {
        if (wn->grad.empty()) wn->grad.assign(wn->data.size(), T(0));
        T* gw = wn->grad.data();
        const T* pt = tn->data.data();
        for (int64_t i = 0; i < n; ++i) {
          const T* row = pt + static_cast<int64_t>(tau_copy[static_cast<size_t>(i)]) * dim;
          for (int64_t j = 0; j < dim; ++j) gw[j] += g[i * dim + j] * row[j];
        }
      }
    });
    tape->attach(out, idx);
  }
  return out;
}

#define LOANCAST_INSTANTIATE_TE(T)                                             \
  template EncodingTable<T> build_encoding_table<T>(int64_t, double);          \
  template TemporalWeight<T> make_temporal_weight<T>(int64_t);                 \
  template Tensor<T> inject<T>(const Tensor<T>&, std::span<const int>,         \
                               const EncodingTable<T>&, const TemporalWeight<T>&);

LOANCAST_INSTANTIATE_TE(float)
LOANCAST_INSTANTIATE_TE(double)

#undef LOANCAST_INSTANTIATE_TE

}  // namespace loancast
