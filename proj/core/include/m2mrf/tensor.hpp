#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "m2mrf/errors.hpp"
#include "m2mrf/rng.hpp"

namespace m2mrf {

class Tape;

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense row-major tensor of doubles. Copies share the underlying buffer;
// every operation allocates a fresh output, so shared buffers are never
// mutated behind a reader's back (Parameter updates are the one documented
// exception and happen between forward/backward cycles).
//
// Feature maps use (H, W, C) layout, matrices (rows, cols), scalars {1}.
// A tensor may be attached to a Tape node, in which case gradients flow
// through it during Tape::backward.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

  Tensor(Shape shape, std::shared_ptr<std::vector<double>> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_invariants();
  }

  Tensor(Shape shape, std::vector<double> values)
      : Tensor(std::move(shape), std::make_shared<std::vector<double>>(std::move(values))) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, std::vector<double>{value}); }
  static Tensor randn(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0);
  // n x n identity matrix.
  static Tensor identity(int64_t n);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_->size()); }

  const std::vector<double>& data() const { return *data_; }
  std::vector<double>& data_mut() { return *data_; }
  const std::shared_ptr<std::vector<double>>& buffer() const { return data_; }

  double operator[](int64_t flat) const { return (*data_)[static_cast<size_t>(flat)]; }
  double& operator[](int64_t flat) { return (*data_)[static_cast<size_t>(flat)]; }

  // Convenience indexers for the common ranks.
  double at(int64_t i, int64_t j) const;
  double at(int64_t i, int64_t j, int64_t k) const;
  double at(int64_t i, int64_t j, int64_t k, int64_t l) const;

  double scalar_value() const {
    if (numel() != 1) throw ContractError("expected a scalar tensor, got shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool all_finite() const;

  // Deep copy: fresh buffer, no tape attachment.
  Tensor clone() const;

  // Same buffer under a new shape with equal element count. Metadata only;
  // for a differentiable reshape use ops::reshape.
  Tensor viewed_as(Shape new_shape) const;

  // --- tape plumbing (used by ops and Tape; not part of the numeric API) ---
  Tape* tape() const { return tape_; }
  int64_t node() const { return node_; }
  void attach(Tape* tape, int64_t node) {
    tape_ = tape;
    node_ = node;
  }
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

 private:
  void check_invariants() const;

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int64_t node_ = -1;
};

}  // namespace m2mrf
