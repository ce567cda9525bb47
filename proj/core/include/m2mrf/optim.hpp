#pragma once

#include <vector>

#include "m2mrf/autograd.hpp"

namespace m2mrf {

// Heavy-ball SGD with L2 weight decay:
//   v <- momentum * v + grad + weight_decay * value
//   value <- value - lr * v
// Consumes and zeroes the gradients.
void sgd_update(const std::vector<ParamPtr>& params, double lr, double momentum, double weight_decay);

// base * (1 - iter/max_iter)^power. iter must lie in [0, max_iter].
double poly_lr(double base, int64_t iter, int64_t max_iter, double power);

}  // namespace m2mrf
