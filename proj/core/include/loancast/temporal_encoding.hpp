#pragma once

#include <vector>

#include "loancast/tensor.hpp"

namespace loancast {

// Fixed sinusoidal day-of-year encoding. Row tau holds
//   table[tau, 2j]   = sin(tau / base^(2j/dim))
//   table[tau, 2j+1] = cos(tau / base^(2j/dim))
// for tau in [0,365] (366 rows; Feb 29 has its own slot). Angles are
// computed in double and stored at working precision. Immutable once built.
template <typename T>
struct EncodingTable {
  Tensor<T> table;  // [366, dim]
  int64_t dim = 0;
  double base = 10.0;
};

inline constexpr int kDaysPerYearSlots = 366;

template <typename T>
EncodingTable<T> build_encoding_table(int64_t dim = 256, double base = 10.0);

// Zero-based day index within a fixed 366-slot calendar keyed by month/day
// (Feb 29 = slot 59), so every calendar date maps to the same slot in leap
// and non-leap years. Invalid Gregorian dates are rejected.
int day_of_year(int year, int month, int day);

// Learnable per-dimension weight on the encoding (Hadamard), ones at init.
template <typename T>
struct TemporalWeight {
  Tensor<T> weight;  // [dim]
};

template <typename T>
TemporalWeight<T> make_temporal_weight(int64_t dim);

// row n of the result = x_d[n] + weight o table[tau[n]].
template <typename T>
Tensor<T> inject(const Tensor<T>& x_d, std::span<const int> tau, const EncodingTable<T>& table,
                 const TemporalWeight<T>& w);

}  // namespace loancast
