#pragma once

#include <cstdint>

#include "m2mrf/autograd.hpp"
#include "m2mrf/rational.hpp"
#include "m2mrf/rng.hpp"
#include "m2mrf/tensor.hpp"

namespace m2mrf {

// Geometry of one many-to-many reassembly stage. A feature map is cut into
// patches of patch_h x patch_w cells; each patch, flattened with its
// (reduced) channels, is mapped by one shared factorized linear projection
// to an output patch scaled by `rate`.
struct M2MRFConfig {
  int64_t patch_h = 8;      // S_h
  int64_t patch_w = 8;      // S_w
  int64_t reduction = 4;    // channel reduction factor r
  int64_t bottleneck = 64;  // factorization factor alpha
  Rational rate{1, 2};      // sample rate delta
  int64_t channels = 32;    // input/output channel count C

  // Throws ConfigError unless all divisibility and positivity invariants
  // hold: reduction | channels, (alpha * reduction) | (N * channels), and
  // rate scales both patch sides to positive integers.
  void validate() const;

  int64_t reduced_channels() const { return channels / reduction; }
  int64_t cells() const { return patch_h * patch_w; }                       // N
  int64_t in_flat() const { return cells() * reduced_channels(); }          // N*C/r
  int64_t mid_flat() const { return cells() * channels / (bottleneck * reduction); }
  int64_t out_patch_h() const { return rate.scale_exact(patch_h); }
  int64_t out_patch_w() const { return rate.scale_exact(patch_w); }
  int64_t out_cells() const { return out_patch_h() * out_patch_w(); }       // M
  int64_t out_flat() const { return out_cells() * reduced_channels(); }     // M*C/r

  // Stored weight total: compressor + both projection factors + recover.
  int64_t param_count() const;
};

// Rows of the returned (L, S_h*S_w*C) matrix are the patches of x in
// row-major patch order, each flattened in (row, col, channel) order.
// Requires S_h | H and S_w | W; pad first.
Tensor partition_patches(const Tensor& x, int64_t S_h, int64_t S_w);

// Inverse of partition_patches at the output patch size: reassembles a
// (gridH*outPatchH, gridW*outPatchW, C) map from gridH*gridW patch rows.
Tensor merge_patches(const Tensor& patches, int64_t gridH, int64_t gridW, int64_t outPatchH,
                     int64_t outPatchW);

// One reassembly stage: 1x1 compressor, shared per-patch factorized
// projection, 1x1 recover. Purely linear, no biases or nonlinearities.
class M2MRFOperator {
 public:
  // Weights drawn Gaussian(0, 0.01) from rng.
  M2MRFOperator(M2MRFConfig cfg, Rng& rng);

  // Adopts existing weight tensors (deserialization, oracles). Shapes must
  // match the config algebra exactly.
  M2MRFOperator(M2MRFConfig cfg, Tensor compressor, Tensor proj_in, Tensor proj_out, Tensor recover);

  // r=1, alpha=1, rate=1 operator whose four weights are identities; maps
  // every input to itself.
  static M2MRFOperator identity_configured(int64_t channels, int64_t S_h, int64_t S_w);

  const M2MRFConfig& config() const { return cfg_; }

  // (H, W, C) -> (round(delta*H), round(delta*W), C): compress channels,
  // zero-pad bottom/right to a patch multiple, project every patch by the
  // shared factor pair, merge at the output patch size, crop, recover
  // channels. Differentiable w.r.t. x and all four weights when a tape is
  // given.
  Tensor apply(Tape* tape, const Tensor& x) const;

  int64_t param_count() const { return cfg_.param_count(); }
  std::vector<ParamPtr> parameters() const { return {compressor_, proj_in_, proj_out_, recover_}; }

  const ParamPtr& compressor() const { return compressor_; }
  const ParamPtr& proj_in() const { return proj_in_; }
  const ParamPtr& proj_out() const { return proj_out_; }
  const ParamPtr& recover() const { return recover_; }

 private:
  M2MRFConfig cfg_;
  ParamPtr compressor_;  // (1, 1, C, C/r)
  ParamPtr proj_in_;     // (N*C/r, N*C/(alpha*r))   W'
  ParamPtr proj_out_;    // (N*C/(alpha*r), M*C/r)   W''
  ParamPtr recover_;     // (1, 1, C/r, C)
};

}  // namespace m2mrf
