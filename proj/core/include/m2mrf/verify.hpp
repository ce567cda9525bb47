#pragma once

#include <string>
#include <vector>

namespace m2mrf {

// One property check: a stable name, the verdict, and the measured value
// (or the reason for failure).
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Central-finite-difference comparison for every differentiable primitive
// and the full reassembly operator (both directions, inputs and weights).
// Passing means max relative error < 1e-6 at eps = 1e-6.
std::vector<CheckResult> verify_gradcheck();

// Linear-map equivalences: the reassembly operator against its materialized
// matrix on random inputs, partition/merge inversion, and a cascade against
// the product of its stage matrices.
std::vector<CheckResult> verify_oracle();

// Closed-form parameter counts for the pinned configurations against
// exhaustive enumeration of stored weights.
std::vector<CheckResult> verify_params();

// Shape laws: cascade vs one-step output shapes across aligned sizes and
// t in {1, 2, 3}, and network logit shapes for every operator variant.
std::vector<CheckResult> verify_shapes();

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace m2mrf
