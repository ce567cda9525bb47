#include "m2mrf/optim.hpp"

#include <cmath>
#include <string>

#include "m2mrf/errors.hpp"

namespace m2mrf {

void sgd_update(const std::vector<ParamPtr>& params, double lr, double momentum, double weight_decay) {
  for (const ParamPtr& p : params) {
    if (!p) throw ContractError("sgd_update: null parameter");
    std::vector<double>& v = p->momentum.data_mut();
    std::vector<double>& w = p->value.data_mut();
    std::vector<double>& g = p->gradient.data_mut();
    const size_t n = w.size();
    for (size_t i = 0; i < n; ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
      w[i] -= lr * v[i];
      g[i] = 0.0;
    }
  }
}

double poly_lr(double base, int64_t iter, int64_t max_iter, double power) {
  if (max_iter < 1) throw ContractError("poly_lr: max_iter must be >= 1, got " + std::to_string(max_iter));
  if (iter < 0 || iter > max_iter)
    throw ContractError("poly_lr: iter " + std::to_string(iter) + " outside [0, " +
                        std::to_string(max_iter) + "]");
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
  return base * std::pow(frac, power);
}

}  // namespace m2mrf
