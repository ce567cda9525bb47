#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "m2mrf/m2mrf_op.hpp"
#include "m2mrf/ops.hpp"

namespace m2mrf {

// The operator family: many-to-many reassembly in its one-step and cascade
// compositions, plus the classical many-to-one baselines it is compared
// against. All map (H, W, C) -> (rate*H, rate*W, C) for aligned inputs.

enum class RFKind { M2MRFOneStep, M2MRFCascade, StrideConv, MaxPool, Bilinear, Deconv, Unpool };
enum class Direction { Down, Up };

std::string kind_str(RFKind kind);
RFKind kind_from_str(const std::string& s);
std::string direction_str(Direction dir);
Direction direction_from_str(const std::string& s);

class RFOperator {
 public:
  virtual ~RFOperator() = default;
  RFOperator(const RFOperator&) = delete;
  RFOperator& operator=(const RFOperator&) = delete;

  RFKind kind() const { return kind_; }
  Direction direction() const { return dir_; }
  int64_t steps() const { return t_; }  // t: overall rate is 2^t or 2^-t
  const Rational& rate() const { return rate_; }
  int64_t channels() const { return channels_; }

  // Runs the operator; differentiable when a tape is given. Unpool has no
  // self-contained forward and throws (see apply_with_indices).
  virtual Tensor apply(Tape* tape, const Tensor& x) const = 0;

  virtual std::vector<ParamPtr> parameters() const { return {}; }
  int64_t param_count() const;

  // True for the bias-free linear kinds; such operators can be materialized
  // as explicit matrices.
  virtual bool is_linear() const = 0;

 protected:
  RFOperator(RFKind kind, Direction dir, int64_t t, Rational rate, int64_t channels);

 private:
  RFKind kind_;
  Direction dir_;
  int64_t t_;
  Rational rate_;
  int64_t channels_;
};

class M2MRFOneStepOp final : public RFOperator {
 public:
  M2MRFOneStepOp(Direction dir, int64_t t, M2MRFConfig base, Rng& rng);
  M2MRFOneStepOp(Direction dir, int64_t t, M2MRFOperator stage);
  Tensor apply(Tape* tape, const Tensor& x) const override;
  std::vector<ParamPtr> parameters() const override;
  bool is_linear() const override { return true; }
  const M2MRFOperator& stage() const { return stages_.front(); }

 private:
  std::vector<M2MRFOperator> stages_;
};

class M2MRFCascadeOp final : public RFOperator {
 public:
  M2MRFCascadeOp(Direction dir, int64_t t, M2MRFConfig base, Rng& rng);
  M2MRFCascadeOp(Direction dir, int64_t t, std::vector<M2MRFOperator> stages);
  Tensor apply(Tape* tape, const Tensor& x) const override;
  std::vector<ParamPtr> parameters() const override;
  bool is_linear() const override { return true; }
  const std::vector<M2MRFOperator>& stages() const { return stages_; }

 private:
  std::vector<M2MRFOperator> stages_;
};

// t stacked 3x3 / stride-2 / pad-1 convolutions (downsample only).
class StrideConvOp final : public RFOperator {
 public:
  StrideConvOp(int64_t t, int64_t channels, Rng& rng);
  StrideConvOp(int64_t t, int64_t channels, std::vector<Tensor> kernels);
  Tensor apply(Tape* tape, const Tensor& x) const override;
  std::vector<ParamPtr> parameters() const override;
  bool is_linear() const override { return true; }

 private:
  std::vector<ParamPtr> kernels_;  // each (3, 3, C, C)
};

// t stacked 3x3 / stride-2 / pad-1 max-pools (downsample only). Nonlinear;
// apply() discards indices, apply_argmax keeps them for unpooling.
class MaxPoolOp final : public RFOperator {
 public:
  MaxPoolOp(int64_t t, int64_t channels);
  Tensor apply(Tape* tape, const Tensor& x) const override;
  Tensor apply_argmax(Tape* tape, const Tensor& x, std::vector<ops::MaxPoolIndices>& indices) const;
  bool is_linear() const override { return false; }
};

// Single bilinear resize by 2^t (upsample only).
class BilinearOp final : public RFOperator {
 public:
  BilinearOp(int64_t t, int64_t channels);
  Tensor apply(Tape* tape, const Tensor& x) const override;
  bool is_linear() const override { return true; }
};

// t stacked 4x4 / stride-2 / pad-1 transposed convolutions (upsample only).
class DeconvOp final : public RFOperator {
 public:
  DeconvOp(int64_t t, int64_t channels, Rng& rng);
  DeconvOp(int64_t t, int64_t channels, std::vector<Tensor> kernels);
  Tensor apply(Tape* tape, const Tensor& x) const override;
  std::vector<ParamPtr> parameters() const override;
  bool is_linear() const override { return true; }

 private:
  std::vector<ParamPtr> kernels_;  // each (4, 4, C, C)
};

// Scatter by a paired max-pool's indices (upsample only). apply() throws:
// the indices must come from the matching pool via apply_with_indices.
class UnpoolOp final : public RFOperator {
 public:
  UnpoolOp(int64_t t, int64_t channels);
  Tensor apply(Tape* tape, const Tensor& x) const override;
  Tensor apply_with_indices(Tape* tape, const Tensor& x,
                            const std::vector<ops::MaxPoolIndices>& indices) const;
  bool is_linear() const override { return false; }
};

// ---- builders ----------------------------------------------------------
// `base` supplies patch size, reduction, bottleneck and channels; its rate
// is overridden by the requested direction and t.

std::unique_ptr<RFOperator> build_one_step(Direction dir, int64_t t, const M2MRFConfig& base, Rng& rng);
std::unique_ptr<RFOperator> build_cascade(Direction dir, int64_t t, const M2MRFConfig& base, Rng& rng);
std::unique_ptr<RFOperator> build_baseline(RFKind kind, Direction dir, int64_t t, int64_t channels,
                                           Rng& rng);

// ---- linear-map oracle ---------------------------------------------------

// Matrix of any linear map f on (H, W, C) tensors: column j is f(e_j)
// flattened, so matrix . vec(x) == vec(f(x)).
Tensor materialize_linear_map(const std::function<Tensor(const Tensor&)>& f, int64_t H, int64_t W,
                              int64_t C);

// Same for an operator; requires op.is_linear() and H*W*C <= 4096.
Tensor materialize_linear_map(const RFOperator& op, int64_t H, int64_t W, int64_t C);

// ---- serialization ---------------------------------------------------------
// An operator saves as a directory: descriptor.json holding
// {kind, direction, t, S_h, S_w, r, alpha, C} plus one tensor container per
// stored weight. Parameter-free kinds write only the descriptor.

void save_rf_operator(const RFOperator& op, const std::string& dir);
std::unique_ptr<RFOperator> load_rf_operator(const std::string& dir);

}  // namespace m2mrf
