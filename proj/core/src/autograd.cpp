#include "m2mrf/autograd.hpp"

namespace m2mrf {

Tensor Tape::watch(const ParamPtr& param) {
  auto it = watch_nodes_.find(param.get());
  if (it != watch_nodes_.end()) {
    Tensor t(param->value.shape(), param->value.buffer());
    t.attach(this, it->second);
    return t;
  }
  const int64_t node = record(param->numel(), nullptr);
  watch_nodes_.emplace(param.get(), node);
  watched_.emplace_back(node, param);
  Tensor t(param->value.shape(), param->value.buffer());
  t.attach(this, node);
  return t;
}

int64_t Tape::record(int64_t output_size, std::function<void(Tape&, const std::vector<double>&)> backward) {
  Node n;
  n.size = output_size;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return static_cast<int64_t>(nodes_.size()) - 1;
}

void Tape::accumulate(int64_t node, const double* grad, int64_t n) {
  Node& nd = nodes_[static_cast<size_t>(node)];
  if (nd.grad.empty()) nd.grad.assign(static_cast<size_t>(nd.size), 0.0);
  double* dst = nd.grad.data();
  for (int64_t i = 0; i < n; ++i) dst[i] += grad[i];
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (loss.tape() != this || loss.node() < 0) {
    throw ContractError("backward: loss is not connected to this tape");
  }
  nodes_[static_cast<size_t>(loss.node())].grad.assign(1, 1.0);

  for (int64_t id = loss.node(); id >= 0; --id) {
    Node& nd = nodes_[static_cast<size_t>(id)];
    if (nd.grad.empty()) continue;
    if (nd.backward) nd.backward(*this, nd.grad);
  }

  for (auto& [node, param] : watched_) {
    const Node& nd = nodes_[static_cast<size_t>(node)];
    if (nd.grad.empty()) continue;
    auto& g = param->gradient.data_mut();
    for (size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
  }

  nodes_.clear();
  watched_.clear();
  watch_nodes_.clear();
}

Tape* joint_tape(const Tensor& a, const Tensor& b) {
  Tape* ta = a.node() >= 0 ? a.tape() : nullptr;
  Tape* tb = b.node() >= 0 ? b.tape() : nullptr;
  if (ta && tb && ta != tb) throw ContractError("operands belong to different tapes");
  return ta ? ta : tb;
}

}  // namespace m2mrf
