#pragma once

#include <functional>
#include <vector>

#include "m2mrf/autograd.hpp"
#include "m2mrf/tensor.hpp"

namespace m2mrf {

// Compares the tape gradient of f at x against central finite differences,
// coordinate by coordinate. f must map a tensor to a scalar tensor and be
// pure; the same callable is invoked with tape-attached and plain inputs.
// Returns the max relative error with denominator max(|a|, |b|, 1e-8).
// A loss that never touches x yields zero on both sides, hence error 0.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

// Same comparison for one parameter buried inside a model. build_loss runs
// the model on the given tape (or plainly when tape is null) and returns the
// scalar loss. Finite differences are taken only at `coords` (all
// coordinates when empty), since full sweeps over weight tensors are
// needlessly slow for a spot check.
double grad_check_param(const std::function<Tensor(Tape*)>& build_loss, const ParamPtr& param,
                        double eps, const std::vector<int64_t>& coords = {});

}  // namespace m2mrf
