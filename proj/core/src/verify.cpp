#include "m2mrf/verify.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "m2mrf/fusion_net.hpp"
#include "m2mrf/gradcheck.hpp"
#include "m2mrf/m2mrf_op.hpp"
#include "m2mrf/ops.hpp"
#include "m2mrf/rf_operators.hpp"

namespace m2mrf {

namespace {

constexpr double kGradEps = 1e-6;
constexpr double kGradTol = 1e-6;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// A small config that exercises every algebra branch (r > 1, alpha > 1)
// while keeping finite-difference sweeps cheap.
M2MRFConfig tiny_config(Rational rate) {
  M2MRFConfig cfg;
  cfg.patch_h = 4;
  cfg.patch_w = 4;
  cfg.reduction = 2;
  cfg.bottleneck = 4;
  cfg.rate = rate;
  cfg.channels = 4;
  cfg.validate();
  return cfg;
}

// The one-step down configuration the linear-map criterion pins:
// 8x8 inputs with 2 channels, patch 4, no reduction or bottleneck, rate 1/2,
// so the materialized matrix is 32x128.
M2MRFConfig oracle_config() {
  M2MRFConfig cfg;
  cfg.patch_h = 4;
  cfg.patch_w = 4;
  cfg.reduction = 1;
  cfg.bottleneck = 1;
  cfg.rate = Rational{1, 2};
  cfg.channels = 2;
  cfg.validate();
  return cfg;
}

double matvec_max_diff(const Tensor& matrix, const Tensor& x, const Tensor& y) {
  const int64_t rows = matrix.dim(0);
  const int64_t cols = matrix.dim(1);
  double worst = 0.0;
  for (int64_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < cols; ++j) acc += matrix[i * cols + j] * x[j];
    worst = std::max(worst, std::abs(acc - y[i]));
  }
  return worst;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

bool all_passed(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results)
    if (!r.passed) return false;
  return true;
}

std::vector<CheckResult> verify_gradcheck() {
  std::vector<CheckResult> out;
  Rng rng(2024);

  auto item = [&out](const std::string& name, double err) {
    out.push_back({"gradcheck/" + name, std::isfinite(err) && err < kGradTol,
                   "max rel err " + fmt(err)});
  };

  // --- elementwise and reductions ---
  {
    Tensor x = Tensor::rand_uniform({2, 3}, rng, -1.0, 1.0);
    item("add", grad_check([](const Tensor& t) { return ops::sum(ops::add(t, t)); }, x, kGradEps));
    item("sub", grad_check(
                    [](const Tensor& t) { return ops::sum(ops::sub(t, ops::scale(t, 0.5))); }, x,
                    kGradEps));
    item("mul", grad_check([](const Tensor& t) { return ops::sum(ops::mul(t, t)); }, x, kGradEps));
    item("div", grad_check(
                    [](const Tensor& t) {
                      return ops::sum(ops::div(t, ops::add_scalar(ops::mul(t, t), 1.5)));
                    },
                    x, kGradEps));
    item("scale-and-shift",
         grad_check([](const Tensor& t) { return ops::sum(ops::add_scalar(ops::scale(t, -1.7), 0.3)); },
                    x, kGradEps));
    item("sigmoid",
         grad_check([](const Tensor& t) { return ops::sum(ops::sigmoid(t)); }, x, kGradEps));
  }
  {
    // Keep every coordinate well away from the ReLU kink so the finite
    // difference never straddles it.
    Tensor x = Tensor::rand_uniform({3, 3}, rng, 0.2, 1.2);
    for (int64_t i = 0; i < x.numel(); ++i)
      if (i % 2 == 1) x[i] = -x[i];
    item("relu", grad_check(
                     [](const Tensor& t) { return ops::sum(ops::mul(ops::relu(t), ops::relu(t))); },
                     x, kGradEps));
  }

  // --- shape and indexing ---
  {
    Tensor x = Tensor::rand_uniform({2, 3}, rng, -1.0, 1.0);
    item("reshape", grad_check(
                        [](const Tensor& t) {
                          Tensor v = ops::reshape(t, {6});
                          return ops::sum(ops::mul(v, v));
                        },
                        x, kGradEps));
    auto map = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{3, -1, 0, 3, 5});
    item("gather", grad_check(
                       [map](const Tensor& t) {
                         Tensor g = ops::gather(t, map, {5});
                         return ops::sum(ops::mul(g, g));
                       },
                       x, kGradEps));
    auto smap = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{2, 0, 2, -1, 4, 1});
    item("scatter_add", grad_check(
                            [smap](const Tensor& t) {
                              Tensor s = ops::scatter_add(t, smap, {5});
                              return ops::sum(ops::mul(s, s));
                            },
                            x, kGradEps));
  }
  {
    Tensor x = Tensor::rand_uniform({2, 3, 2}, rng, -1.0, 1.0);
    item("channel", grad_check(
                        [](const Tensor& t) {
                          Tensor c = ops::channel(t, 1);
                          return ops::sum(ops::mul(c, c));
                        },
                        x, kGradEps));
    item("pad-crop", grad_check(
                         [](const Tensor& t) {
                           Tensor p = ops::pad2d_bottom_right(t, 4, 5);
                           Tensor c = ops::crop2d(p, 3, 4);
                           return ops::sum(ops::mul(c, c));
                         },
                         x, kGradEps));
  }

  // --- linear algebra ---
  {
    Tensor x = Tensor::rand_uniform({2, 3}, rng, -1.0, 1.0);
    item("matmul", grad_check(
                       [](const Tensor& t) {
                         Tensor y = ops::matmul(t, ops::reshape(t, {3, 2}));
                         return ops::sum(ops::mul(y, y));
                       },
                       x, kGradEps));
  }

  // --- spatial kernels ---
  {
    Tensor x = Tensor::rand_uniform({5, 5, 2}, rng, -1.0, 1.0);
    Tensor k = Tensor::rand_uniform({3, 3, 2, 3}, rng, -0.5, 0.5);
    item("conv2d/input", grad_check(
                             [&k](const Tensor& t) {
                               Tensor y = ops::conv2d(t, k, 2, 1);
                               return ops::sum(ops::mul(y, y));
                             },
                             x, kGradEps));
    item("conv2d/kernel", grad_check(
                              [&x](const Tensor& t) {
                                Tensor y = ops::conv2d(x, t, 1, 1);
                                return ops::sum(ops::mul(y, y));
                              },
                              k, kGradEps));

    Tensor xt = Tensor::rand_uniform({3, 3, 2}, rng, -1.0, 1.0);
    Tensor kt = Tensor::rand_uniform({4, 4, 2, 2}, rng, -0.5, 0.5);
    item("conv2d_transpose/input", grad_check(
                                       [&kt](const Tensor& t) {
                                         Tensor y = ops::conv2d_transpose(t, kt, 2, 1);
                                         return ops::sum(ops::mul(y, y));
                                       },
                                       xt, kGradEps));
    item("conv2d_transpose/kernel", grad_check(
                                        [&xt](const Tensor& t) {
                                          Tensor y = ops::conv2d_transpose(xt, t, 2, 1);
                                          return ops::sum(ops::mul(y, y));
                                        },
                                        kt, kGradEps));

    item("maxpool2d", grad_check(
                          [](const Tensor& t) {
                            Tensor y = ops::maxpool2d_argmax(t, 3, 3, 2, 1).first;
                            return ops::sum(ops::mul(y, y));
                          },
                          x, kGradEps));
    const ops::MaxPoolIndices idx = ops::maxpool2d_argmax(x, 3, 3, 2, 1).second;
    Tensor pooled = Tensor::rand_uniform(idx.out_shape, rng, -1.0, 1.0);
    item("max_unpool2d", grad_check(
                             [&idx](const Tensor& t) {
                               Tensor y = ops::max_unpool2d(t, idx);
                               return ops::sum(ops::mul(y, y));
                             },
                             pooled, kGradEps));

    Tensor xb = Tensor::rand_uniform({3, 4, 2}, rng, -1.0, 1.0);
    item("bilinear_resize", grad_check(
                                [](const Tensor& t) {
                                  Tensor y = ops::bilinear_resize(t, 5, 7);
                                  return ops::sum(ops::mul(y, y));
                                },
                                xb, kGradEps));
  }

  // --- the full reassembly operator, both directions ---
  for (const bool up : {false, true}) {
    const M2MRFConfig cfg = tiny_config(up ? Rational{2, 1} : Rational{1, 2});
    M2MRFOperator op(cfg, rng);
    Tensor x = Tensor::rand_uniform({6, 7, cfg.channels}, rng, -1.0, 1.0);  // forces padding
    const std::string tag = up ? "m2mrf-up" : "m2mrf-down";

    item(tag + "/input", grad_check(
                             [&op](const Tensor& t) {
                               Tensor y = op.apply(nullptr, t);
                               return ops::sum(ops::mul(y, y));
                             },
                             x, kGradEps));

    const std::vector<ParamPtr> params = op.parameters();
    const char* names[] = {"compressor", "proj_in", "proj_out", "recover"};
    for (size_t pi = 0; pi < params.size(); ++pi) {
      std::vector<int64_t> coords;
      const int64_t n = params[pi]->numel();
      for (int64_t c = 0; c < std::min<int64_t>(n, 8); ++c)
        coords.push_back(rng.uniform_int(0, n - 1));
      const double err = grad_check_param(
          [&op, &x](Tape* tape) {
            Tensor y = op.apply(tape, x);
            return ops::sum(ops::mul(y, y));
          },
          params[pi], kGradEps, coords);
      item(tag + "/" + names[pi], err);
    }
  }

  return out;
}

std::vector<CheckResult> verify_oracle() {
  std::vector<CheckResult> out;
  Rng rng(7);

  // Pinned equivalence: rate-1/2 operator on 8x8x2 inputs against its
  // materialized 32x128 matrix, 10 random inputs.
  {
    const M2MRFConfig cfg = oracle_config();
    M2MRFOperator op(cfg, rng);
    Tensor matrix = materialize_linear_map(
        [&op](const Tensor& t) { return op.apply(nullptr, t); }, 8, 8, cfg.channels);
    const bool shape_ok = matrix.dim(0) == 32 && matrix.dim(1) == 128;
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x = Tensor::rand_uniform({8, 8, cfg.channels}, rng, -1.0, 1.0);
      Tensor y = op.apply(nullptr, x);
      worst = std::max(worst, matvec_max_diff(matrix, x, y));
    }
    out.push_back({"oracle/matrix-equivalence", shape_ok && worst < 1e-10,
                   "matrix " + std::to_string(matrix.dim(0)) + "x" + std::to_string(matrix.dim(1)) +
                       ", max abs diff " + fmt(worst)});
  }

  // partition then merge at the same patch size is the identity.
  {
    Tensor x = Tensor::rand_uniform({6, 8, 3}, rng, -1.0, 1.0);
    Tensor patches = partition_patches(x, 2, 4);
    Tensor back = merge_patches(patches, 3, 2, 2, 4);
    const double diff = max_abs_diff(x, back);
    out.push_back({"oracle/partition-merge-inverse", diff == 0.0, "max abs diff " + fmt(diff)});
  }

  // A two-stage cascade is the product of its stage matrices.
  {
    M2MRFConfig base = oracle_config();
    auto cascade = build_cascade(Direction::Down, 2, base, rng);
    Tensor whole = materialize_linear_map(*cascade, 8, 8, base.channels);

    const auto* cas = dynamic_cast<const M2MRFCascadeOp*>(cascade.get());
    const M2MRFOperator& s0 = cas->stages()[0];
    const M2MRFOperator& s1 = cas->stages()[1];
    Tensor m0 = materialize_linear_map([&s0](const Tensor& t) { return s0.apply(nullptr, t); }, 8,
                                       8, base.channels);
    Tensor m1 = materialize_linear_map([&s1](const Tensor& t) { return s1.apply(nullptr, t); }, 4,
                                       4, base.channels);
    Tensor product = ops::matmul(m1, m0);
    const double diff = max_abs_diff(whole, product);
    out.push_back(
        {"oracle/cascade-stage-product", diff < 1e-12, "max abs diff " + fmt(diff)});
  }

  // Identity-configured operator reproduces arbitrary inputs.
  {
    M2MRFOperator ident = M2MRFOperator::identity_configured(3, 4, 4);
    Tensor x = Tensor::rand_uniform({9, 11, 3}, rng, -5.0, 5.0);
    Tensor y = ident.apply(nullptr, x);
    const double diff = max_abs_diff(x, y);
    out.push_back({"oracle/identity-config", diff < 1e-12, "max abs diff " + fmt(diff)});
  }

  return out;
}

std::vector<CheckResult> verify_params() {
  std::vector<CheckResult> out;
  Rng rng(11);

  auto check_op = [&out](const std::string& name, const RFOperator& op, int64_t expect) {
    // param_count() on the operator enumerates stored weights; the closed
    // form is what the configuration predicts.
    const int64_t enumerated = op.param_count();
    const bool ok = enumerated == expect;
    out.push_back({"params/" + name, ok,
                   "enumerated " + std::to_string(enumerated) + ", expected " +
                       std::to_string(expect)});
  };

  M2MRFConfig base;  // S=8, r=4, alpha=64
  base.channels = 32;

  {
    auto op = build_one_step(Direction::Down, 1, base, rng);  // rate 1/2
    check_op("one-step-rate-1/2", *op, 5632);
    M2MRFConfig cfg = base;
    cfg.rate = Rational{1, 2};
    out.push_back({"params/closed-form-rate-1/2", cfg.param_count() == 5632,
                   "closed form " + std::to_string(cfg.param_count())});
  }
  {
    auto op = build_one_step(Direction::Down, 2, base, rng);  // rate 1/4
    check_op("one-step-rate-1/4", *op, 4864);
  }
  {
    auto op = build_cascade(Direction::Down, 2, base, rng);  // two rate-1/2 stages
    check_op("cascade-t2", *op, 11264);
  }
  {
    // Closed form matches enumeration on a non-default shape too.
    M2MRFConfig odd;
    odd.patch_h = 4;
    odd.patch_w = 8;
    odd.reduction = 2;
    odd.bottleneck = 8;
    odd.rate = Rational{2, 1};
    odd.channels = 8;
    odd.validate();
    M2MRFOperator op(odd, rng);
    int64_t enumerated = 0;
    for (const ParamPtr& p : op.parameters()) enumerated += p->numel();
    out.push_back({"params/closed-form-vs-enumeration", enumerated == odd.param_count(),
                   "enumerated " + std::to_string(enumerated) + ", closed form " +
                       std::to_string(odd.param_count())});
  }

  return out;
}

std::vector<CheckResult> verify_shapes() {
  std::vector<CheckResult> out;
  Rng rng(23);

  M2MRFConfig base;  // S=8, r=4, alpha=64
  base.channels = 16;

  // Cascade and one-step agree on output shapes for aligned inputs.
  for (int64_t t = 1; t <= 3; ++t) {
    for (const Direction dir : {Direction::Down, Direction::Up}) {
      auto one = build_one_step(dir, t, base, rng);
      auto cas = build_cascade(dir, t, base, rng);
      const int64_t align = int64_t{1} << t;
      bool ok = true;
      std::string detail;
      for (int trial = 0; trial < 10 && ok; ++trial) {
        const int64_t H = align * rng.uniform_int(1, 5);
        const int64_t W = align * rng.uniform_int(1, 5);
        Tensor x = Tensor::rand_uniform({H, W, base.channels}, rng, -1.0, 1.0);
        const Shape a = one->apply(nullptr, x).shape();
        const Shape b = cas->apply(nullptr, x).shape();
        if (a != b) {
          ok = false;
          detail = "input " + std::to_string(H) + "x" + std::to_string(W) + ": one-step " +
                   shape_str(a) + " vs cascade " + shape_str(b);
        }
      }
      const std::string dname = dir == Direction::Down ? "down" : "up";
      out.push_back({"shapes/cascade-vs-one-step-" + dname + "-t" + std::to_string(t), ok,
                     ok ? "10 aligned sizes agree" : detail});
    }
  }

  // Every network variant emits (H, W, num_classes) logits.
  for (const Variant v : {Variant::A, Variant::B, Variant::C, Variant::D, Variant::BaselineScBl,
                          Variant::BaselineMp}) {
    NetConfig cfg;
    cfg.variant = v;
    MiniFusionNet net(cfg, 0);
    Tensor x = Tensor::rand_uniform({16, 24, 3}, rng, 0.0, 1.0);
    const Shape got = net.forward(nullptr, x).shape();
    const Shape want{16, 24, cfg.num_classes};
    out.push_back({"shapes/net-logits-" + variant_str(v), got == want,
                   "logits " + shape_str(got)});
  }

  return out;
}

}  // namespace m2mrf
