#include "m2mrf/m2mrf_op.hpp"

#include <string>
#include <utility>

#include "m2mrf/errors.hpp"
#include "m2mrf/ops.hpp"

namespace m2mrf {

namespace {

int64_t ceil_to_multiple(int64_t x, int64_t m) { return (x + m - 1) / m * m; }

void require_weight_shape(const char* name, const Tensor& t, const Shape& want) {
  if (t.shape() != want)
    throw ConfigError(std::string("operator weight ") + name + " must have shape " + shape_str(want) +
                      ", got " + shape_str(t.shape()));
}

}  // namespace

void M2MRFConfig::validate() const {
  if (patch_h < 1 || patch_w < 1)
    throw ConfigError("patch size must be positive, got " + std::to_string(patch_h) + "x" +
                      std::to_string(patch_w));
  if (channels < 1) throw ConfigError("channels must be positive, got " + std::to_string(channels));
  if (reduction < 1) throw ConfigError("reduction must be >= 1, got " + std::to_string(reduction));
  if (bottleneck < 1) throw ConfigError("bottleneck must be >= 1, got " + std::to_string(bottleneck));
  if (channels % reduction != 0)
    throw ConfigError("reduction " + std::to_string(reduction) + " must divide channels " +
                      std::to_string(channels));
  if ((cells() * channels) % (bottleneck * reduction) != 0)
    throw ConfigError("bottleneck width is fractional: " + std::to_string(cells()) + "*" +
                      std::to_string(channels) + " not divisible by " +
                      std::to_string(bottleneck * reduction));
  if (!rate.scales_to_integer(patch_h) || !rate.scales_to_integer(patch_w))
    throw ConfigError("rate " + rate.str() + " does not scale patch " + std::to_string(patch_h) + "x" +
                      std::to_string(patch_w) + " to integers");
  // Rational guarantees positivity, so scaled patch sides are >= 1 iff integer.
}

int64_t M2MRFConfig::param_count() const {
  return channels * reduced_channels()      // compressor
         + in_flat() * mid_flat()           // W'
         + mid_flat() * out_flat()          // W''
         + reduced_channels() * channels;   // recover
}

Tensor partition_patches(const Tensor& x, int64_t S_h, int64_t S_w) {
  if (x.rank() != 3)
    throw ShapeError("partition_patches: expected (H, W, C), got " + shape_str(x.shape()));
  if (S_h < 1 || S_w < 1)
    throw ContractError("partition_patches: patch size must be positive, got " + std::to_string(S_h) +
                        "x" + std::to_string(S_w));
  const int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (H % S_h != 0 || W % S_w != 0)
    throw ShapeError("partition_patches: input " + shape_str(x.shape()) +
                     " is not a multiple of patch " + std::to_string(S_h) + "x" + std::to_string(S_w));
  const int64_t gridH = H / S_h, gridW = W / S_w;
  const int64_t L = gridH * gridW;
  const int64_t flat = S_h * S_w * C;

  auto map = std::make_shared<std::vector<int64_t>>(L * flat);
  int64_t i = 0;
  for (int64_t py = 0; py < gridH; ++py)
    for (int64_t px = 0; px < gridW; ++px)
      for (int64_t row = 0; row < S_h; ++row) {
        const int64_t y = py * S_h + row;
        for (int64_t col = 0; col < S_w; ++col) {
          const int64_t base = (y * W + px * S_w + col) * C;
          for (int64_t c = 0; c < C; ++c, ++i) (*map)[i] = base + c;
        }
      }
  return ops::gather(x, std::move(map), {L, flat});
}

Tensor merge_patches(const Tensor& patches, int64_t gridH, int64_t gridW, int64_t outPatchH,
                     int64_t outPatchW) {
  if (patches.rank() != 2)
    throw ShapeError("merge_patches: expected (L, patch_flat), got " + shape_str(patches.shape()));
  if (gridH < 1 || gridW < 1 || outPatchH < 1 || outPatchW < 1)
    throw ContractError("merge_patches: grid and patch dims must be positive");
  if (patches.dim(0) != gridH * gridW)
    throw ShapeError("merge_patches: " + std::to_string(patches.dim(0)) + " patches cannot fill a " +
                     std::to_string(gridH) + "x" + std::to_string(gridW) + " grid");
  const int64_t flat = patches.dim(1);
  const int64_t cells = outPatchH * outPatchW;
  if (flat % cells != 0)
    throw ShapeError("merge_patches: patch length " + std::to_string(flat) +
                     " is not a multiple of patch area " + std::to_string(cells));
  const int64_t C = flat / cells;
  const int64_t Ho = gridH * outPatchH, Wo = gridW * outPatchW;

  auto map = std::make_shared<std::vector<int64_t>>(Ho * Wo * C);
  int64_t i = 0;
  for (int64_t y = 0; y < Ho; ++y) {
    const int64_t py = y / outPatchH, row = y % outPatchH;
    for (int64_t x = 0; x < Wo; ++x) {
      const int64_t px = x / outPatchW, col = x % outPatchW;
      const int64_t base = (py * gridW + px) * flat + (row * outPatchW + col) * C;
      for (int64_t c = 0; c < C; ++c, ++i) (*map)[i] = base + c;
    }
  }
  return ops::gather(patches, std::move(map), {Ho, Wo, C});
}

M2MRFOperator::M2MRFOperator(M2MRFConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const double stddev = 0.01;
  compressor_ = std::make_shared<Parameter>(
      Tensor::randn({1, 1, cfg_.channels, cfg_.reduced_channels()}, rng, 0.0, stddev));
  proj_in_ = std::make_shared<Parameter>(Tensor::randn({cfg_.in_flat(), cfg_.mid_flat()}, rng, 0.0, stddev));
  proj_out_ =
      std::make_shared<Parameter>(Tensor::randn({cfg_.mid_flat(), cfg_.out_flat()}, rng, 0.0, stddev));
  recover_ = std::make_shared<Parameter>(
      Tensor::randn({1, 1, cfg_.reduced_channels(), cfg_.channels}, rng, 0.0, stddev));
}

M2MRFOperator::M2MRFOperator(M2MRFConfig cfg, Tensor compressor, Tensor proj_in, Tensor proj_out,
                             Tensor recover)
    : cfg_(cfg) {
  cfg_.validate();
  require_weight_shape("compressor", compressor, {1, 1, cfg_.channels, cfg_.reduced_channels()});
  require_weight_shape("proj_in", proj_in, {cfg_.in_flat(), cfg_.mid_flat()});
  require_weight_shape("proj_out", proj_out, {cfg_.mid_flat(), cfg_.out_flat()});
  require_weight_shape("recover", recover, {1, 1, cfg_.reduced_channels(), cfg_.channels});
  compressor_ = std::make_shared<Parameter>(std::move(compressor));
  proj_in_ = std::make_shared<Parameter>(std::move(proj_in));
  proj_out_ = std::make_shared<Parameter>(std::move(proj_out));
  recover_ = std::make_shared<Parameter>(std::move(recover));
}

M2MRFOperator M2MRFOperator::identity_configured(int64_t channels, int64_t S_h, int64_t S_w) {
  M2MRFConfig cfg;
  cfg.patch_h = S_h;
  cfg.patch_w = S_w;
  cfg.reduction = 1;
  cfg.bottleneck = 1;
  cfg.rate = Rational{1, 1};
  cfg.channels = channels;
  Tensor eye_c = Tensor::identity(channels).viewed_as({1, 1, channels, channels});
  Tensor eye_flat = Tensor::identity(cfg.in_flat());
  return M2MRFOperator(cfg, eye_c.clone(), eye_flat, eye_flat.clone(), eye_c.clone());
}

Tensor M2MRFOperator::apply(Tape* tape, const Tensor& x) const {
  if (x.rank() != 3 || x.dim(2) != cfg_.channels)
    throw ShapeError("m2mrf apply: expected (H, W, " + std::to_string(cfg_.channels) + "), got " +
                     shape_str(x.shape()));
  const int64_t H = x.dim(0), W = x.dim(1);
  const int64_t outH = cfg_.rate.scale_round(H);
  const int64_t outW = cfg_.rate.scale_round(W);
  if (outH < 1 || outW < 1)
    throw ShapeError("m2mrf apply: input " + shape_str(x.shape()) + " scales below one cell at rate " +
                     cfg_.rate.str());

  auto weight = [tape](const ParamPtr& p) { return tape ? tape->watch(p) : p->value; };

  Tensor xc = ops::conv2d(x, weight(compressor_), 1, 0);
  const int64_t Hp = ceil_to_multiple(H, cfg_.patch_h);
  const int64_t Wp = ceil_to_multiple(W, cfg_.patch_w);
  Tensor xp = ops::pad2d_bottom_right(xc, Hp, Wp);
  Tensor p = partition_patches(xp, cfg_.patch_h, cfg_.patch_w);
  Tensor q = ops::matmul(ops::matmul(p, weight(proj_in_)), weight(proj_out_));
  Tensor merged =
      merge_patches(q, Hp / cfg_.patch_h, Wp / cfg_.patch_w, cfg_.out_patch_h(), cfg_.out_patch_w());
  Tensor cropped = ops::crop2d(merged, outH, outW);
  return ops::conv2d(cropped, weight(recover_), 1, 0);
}

}  // namespace m2mrf
