#include "m2mrf/gradcheck.hpp"

#include <cmath>
#include <memory>

#include "m2mrf/errors.hpp"

namespace m2mrf {

namespace {

double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");

  auto param = std::make_shared<Parameter>(x.clone());
  Tape tape;
  Tensor loss = f(tape.watch(param));
  if (loss.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
  if (loss.node() >= 0) tape.backward(loss);  // constant f leaves the gradient at zero
  const std::vector<double> analytic = param->gradient.data();

  Tensor probe = x.clone();
  double worst = 0.0;
  for (int64_t i = 0; i < probe.numel(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(probe).scalar_value();
    probe[i] = saved - eps;
    const double down = f(probe).scalar_value();
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, rel_err(analytic[static_cast<size_t>(i)], numeric));
  }
  return worst;
}

double grad_check_param(const std::function<Tensor(Tape*)>& build_loss, const ParamPtr& param,
                        double eps, const std::vector<int64_t>& coords) {
  if (eps <= 0.0) throw ContractError("grad_check_param: eps must be positive");
  if (!param) throw ContractError("grad_check_param: null parameter");

  param->zero_grad();
  {
    Tape tape;
    Tensor loss = build_loss(&tape);
    if (loss.numel() != 1) throw ContractError("grad_check_param: loss must be scalar");
    if (loss.node() >= 0) tape.backward(loss);
  }
  const std::vector<double> analytic = param->gradient.data();
  param->zero_grad();

  std::vector<int64_t> where = coords;
  if (where.empty()) {
    where.resize(static_cast<size_t>(param->numel()));
    for (int64_t i = 0; i < param->numel(); ++i) where[static_cast<size_t>(i)] = i;
  }

  std::vector<double>& w = param->value.data_mut();
  double worst = 0.0;
  for (int64_t i : where) {
    if (i < 0 || i >= param->numel())
      throw ContractError("grad_check_param: coordinate " + std::to_string(i) + " out of range");
    const double saved = w[static_cast<size_t>(i)];
    w[static_cast<size_t>(i)] = saved + eps;
    const double up = build_loss(nullptr).scalar_value();
    w[static_cast<size_t>(i)] = saved - eps;
    const double down = build_loss(nullptr).scalar_value();
    w[static_cast<size_t>(i)] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, rel_err(analytic[static_cast<size_t>(i)], numeric));
  }
  return worst;
}

}  // namespace m2mrf
