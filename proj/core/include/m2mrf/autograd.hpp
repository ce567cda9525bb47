#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "m2mrf/tensor.hpp"

namespace m2mrf {

// A learned weight: value plus gradient and momentum buffers of the same
// shape. Gradients accumulate across backward calls until the optimizer
// consumes and zeroes them.
struct Parameter {
  Tensor value;
  Tensor gradient;
  Tensor momentum;

  explicit Parameter(Tensor v)
      : value(std::move(v)), gradient(Tensor::zeros(value.shape())), momentum(Tensor::zeros(value.shape())) {}

  int64_t numel() const { return value.numel(); }
  void zero_grad() { std::fill(gradient.data_mut().begin(), gradient.data_mut().end(), 0.0); }
};

using ParamPtr = std::shared_ptr<Parameter>;

// Reverse-mode differentiation tape. Operations record one node each, in
// topological order (inputs always precede their consumers). backward()
// seeds the loss node with 1, sweeps the node list in reverse, accumulates
// into watched parameters' gradient buffers, then frees every intermediate.
//
// A tape is single-threaded; independent tapes may run on distinct threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Bind a parameter to this tape. Watching the same parameter twice
  // returns the same node, so gradients from repeated use sum correctly.
  Tensor watch(const ParamPtr& param);

  // Record a node; `backward` receives the node's accumulated output
  // gradient and must scatter into input node gradients via accumulate().
  int64_t record(int64_t output_size, std::function<void(Tape&, const std::vector<double>&)> backward);

  void accumulate(int64_t node, const double* grad, int64_t n);
  void accumulate(int64_t node, const std::vector<double>& grad) {
    accumulate(node, grad.data(), static_cast<int64_t>(grad.size()));
  }

  // d loss / d parameter for every watched parameter, added into each
  // Parameter::gradient. The loss must be scalar and recorded on this
  // tape. Clears the tape afterwards.
  void backward(const Tensor& loss);

  int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }

 private:
  struct Node {
    int64_t size = 0;
    std::vector<double> grad;  // allocated on first accumulation
    std::function<void(Tape&, const std::vector<double>&)> backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<int64_t, ParamPtr>> watched_;
  std::unordered_map<const Parameter*, int64_t> watch_nodes_;
};

// The tape shared by the operands, or null when both are plain values.
// Mixing tensors from two live tapes is a caller bug.
Tape* joint_tape(const Tensor& a, const Tensor& b);

}  // namespace m2mrf
