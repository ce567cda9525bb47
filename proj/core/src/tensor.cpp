#include "m2mrf/tensor.hpp"

#include <cmath>
#include <sstream>

namespace m2mrf {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

void Tensor::check_invariants() const {
  if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (int64_t d : shape_) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
  if (shape_numel(shape_) != numel()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match buffer of " +
                     std::to_string(numel()) + " elements");
  }
}

Tensor Tensor::zeros(Shape shape) {
  const int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  const int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double mean, double stddev) {
  const int64_t n = shape_numel(shape);
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.normal(mean, stddev);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  const int64_t n = shape_numel(shape);
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::identity(int64_t n) {
  Tensor t = zeros({n, n});
  for (int64_t i = 0; i < n; ++i) (*t.data_)[static_cast<size_t>(i * n + i)] = 1.0;
  return t;
}

double Tensor::at(int64_t i, int64_t j) const {
  if (rank() != 2) throw ShapeError("at(i,j) needs a rank-2 tensor, got " + shape_str(shape_));
  return (*data_)[static_cast<size_t>(i * shape_[1] + j)];
}

double Tensor::at(int64_t i, int64_t j, int64_t k) const {
  if (rank() != 3) throw ShapeError("at(i,j,k) needs a rank-3 tensor, got " + shape_str(shape_));
  return (*data_)[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
}

double Tensor::at(int64_t i, int64_t j, int64_t k, int64_t l) const {
  if (rank() != 4) throw ShapeError("at(i,j,k,l) needs a rank-4 tensor, got " + shape_str(shape_));
  return (*data_)[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
}

bool Tensor::all_finite() const {
  for (double x : *data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor Tensor::clone() const {
  return Tensor(shape_, std::make_shared<std::vector<double>>(*data_));
}

Tensor Tensor::viewed_as(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("cannot view " + shape_str(shape_) + " as " + shape_str(new_shape) +
                     ": element counts differ");
  }
  Tensor t(std::move(new_shape), data_);
  return t;
}

}  // namespace m2mrf
