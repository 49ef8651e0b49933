#pragma once

#include <string>
#include <vector>

#include "loancast/model.hpp"

namespace loancast {

struct GradCheckResult {
  std::string layer;
  std::string worst_param;  // wiggled tensor with the largest relative error
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

// 64-bit central-difference verification (h = 1e-6) of every layer's
// backward rule on small random inputs, plus an end-to-end check of a tiny
// two-branch model at 1e-3. The relative error is
// |analytic - numeric| / (|numeric| + 1e-12), elementwise max.
//
// `corrupt_layer` scales that layer's analytic gradient by 1.01 before the
// comparison; a harness self-test hook (the run must then fail there).
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed = 7,
                                                 const std::string& corrupt_layer = "");

bool gradcheck_all_pass(const std::vector<GradCheckResult>& results);

// The reduced model configuration the end-to-end check runs on.
ModelConfig tiny_model_config();

}  // namespace loancast
