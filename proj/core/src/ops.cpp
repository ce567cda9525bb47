#include "m2mrf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "m2mrf/errors.hpp"

namespace m2mrf::ops {

namespace {

using Buf = std::shared_ptr<std::vector<double>>;

Tensor finish(Tape* tape, Tensor out, std::function<void(Tape&, const std::vector<double>&)> bw) {
  if (tape == nullptr) return out;
  int64_t node = tape->record(out.numel(), std::move(bw));
  out.attach(tape, node);
  return out;
}

// Tape to record on, or null when no operand is tracked.
Tape* tracked_tape(const Tensor& a) { return a.node() >= 0 ? a.tape() : nullptr; }
Tape* tracked_tape(const Tensor& a, const Tensor& b) {
  Tape* t = joint_tape(a, b);
  if (t == nullptr || (a.node() < 0 && b.node() < 0)) return nullptr;
  return t;
}

void require_rank(const char* op, const Tensor& t, int64_t r) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got shape " +
                     shape_str(t.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// c(rows x cols) += a(rows x inner) . b(inner x cols)
void mm_nn(const double* a, const double* b, double* c, int64_t rows, int64_t inner, int64_t cols) {
  for (int64_t i = 0; i < rows; ++i) {
    const double* ai = a + i * inner;
    double* ci = c + i * cols;
    for (int64_t p = 0; p < inner; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * cols;
      for (int64_t j = 0; j < cols; ++j) ci[j] += av * bp[j];
    }
  }
}

// c(rows x cols) += a(rows x inner) . b(cols x inner)^T
void mm_nt(const double* a, const double* b, double* c, int64_t rows, int64_t inner, int64_t cols) {
  for (int64_t i = 0; i < rows; ++i) {
    const double* ai = a + i * inner;
    double* ci = c + i * cols;
    for (int64_t j = 0; j < cols; ++j) {
      const double* bj = b + j * inner;
      double s = 0.0;
      for (int64_t p = 0; p < inner; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// c(rows x cols) += a(inner x rows)^T . b(inner x cols)
void mm_tn(const double* a, const double* b, double* c, int64_t rows, int64_t inner, int64_t cols) {
  for (int64_t p = 0; p < inner; ++p) {
    const double* ap = a + p * rows;
    const double* bp = b + p * cols;
    for (int64_t i = 0; i < rows; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * cols;
      for (int64_t j = 0; j < cols; ++j) ci[j] += av * bp[j];
    }
  }
}

// Gather map realizing im2col: output row per (oy, ox), columns ordered
// (ky, kx, ci). Negative pads arise internally from conv2d_transpose.
IndexMap im2col_map(int64_t H, int64_t W, int64_t C, int64_t kh, int64_t kw, int64_t stride,
                    int64_t pad_h, int64_t pad_w, int64_t Ho, int64_t Wo) {
  auto map = std::make_shared<std::vector<int64_t>>(Ho * Wo * kh * kw * C);
  int64_t i = 0;
  for (int64_t oy = 0; oy < Ho; ++oy) {
    for (int64_t ox = 0; ox < Wo; ++ox) {
      for (int64_t ky = 0; ky < kh; ++ky) {
        const int64_t iy = oy * stride - pad_h + ky;
        for (int64_t kx = 0; kx < kw; ++kx) {
          const int64_t ix = ox * stride - pad_w + kx;
          const bool ok = iy >= 0 && iy < H && ix >= 0 && ix < W;
          const int64_t base = ok ? (iy * W + ix) * C : -1;
          for (int64_t c = 0; c < C; ++c) (*map)[i++] = ok ? base + c : -1;
        }
      }
    }
  }
  return map;
}

// Shared conv path; the public entry points add their own preconditions.
Tensor conv2d_impl(const char* op, const Tensor& x, const Tensor& k, int64_t stride, int64_t pad_h,
                   int64_t pad_w) {
  require_rank(op, x, 3);
  if (k.rank() != 4)
    throw ShapeError(std::string(op) + ": kernel must be (kh, kw, Cin, Cout), got " + shape_str(k.shape()));
  const int64_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int64_t kh = k.dim(0), kw = k.dim(1), Cout = k.dim(3);
  if (k.dim(2) != Cin)
    throw ShapeError(std::string(op) + ": input channels " + shape_str(x.shape()) +
                     " do not match kernel " + shape_str(k.shape()));
  const int64_t hnum = H + 2 * pad_h - kh;
  const int64_t wnum = W + 2 * pad_w - kw;
  if (hnum < 0 || wnum < 0)
    throw ShapeError(std::string(op) + ": non-positive output dimension for input " +
                     shape_str(x.shape()) + ", kernel " + shape_str(k.shape()) + ", stride " +
                     std::to_string(stride) + ", pad " + std::to_string(pad_h) + "/" + std::to_string(pad_w));
  const int64_t Ho = hnum / stride + 1;
  const int64_t Wo = wnum / stride + 1;

  Tensor cols = (kh == 1 && kw == 1 && stride == 1 && pad_h == 0 && pad_w == 0)
                    ? reshape(x, {H * W, Cin})
                    : gather(x, im2col_map(H, W, Cin, kh, kw, stride, pad_h, pad_w, Ho, Wo),
                             {Ho * Wo, kh * kw * Cin});
  Tensor kmat = reshape(k, {kh * kw * Cin, Cout});
  return reshape(matmul(cols, kmat), {Ho, Wo, Cout});
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  const int64_t an = a.node(), bn = b.node();
  return finish(tracked_tape(a, b), Tensor(a.shape(), std::move(out)),
                [an, bn](Tape& t, const std::vector<double>& g) {
                  if (an >= 0) t.accumulate(an, g);
                  if (bn >= 0) t.accumulate(bn, g);
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  const int64_t an = a.node(), bn = b.node();
  return finish(tracked_tape(a, b), Tensor(a.shape(), std::move(out)),
                [an, bn, n](Tape& t, const std::vector<double>& g) {
                  if (an >= 0) t.accumulate(an, g);
                  if (bn >= 0) {
                    std::vector<double> gb(static_cast<size_t>(n));
                    for (int64_t i = 0; i < n; ++i) gb[i] = -g[i];
                    t.accumulate(bn, gb);
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  const int64_t an = a.node(), bn = b.node();
  const Buf ab = a.buffer(), bb = b.buffer();
  return finish(tracked_tape(a, b), Tensor(a.shape(), std::move(out)),
                [an, bn, n, ab, bb](Tape& t, const std::vector<double>& g) {
                  if (an >= 0) {
                    std::vector<double> ga(static_cast<size_t>(n));
                    for (int64_t i = 0; i < n; ++i) ga[i] = g[i] * (*bb)[i];
                    t.accumulate(an, ga);
                  }
                  if (bn >= 0) {
                    std::vector<double> gb(static_cast<size_t>(n));
                    for (int64_t i = 0; i < n; ++i) gb[i] = g[i] * (*ab)[i];
                    t.accumulate(bn, gb);
                  }
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
  const int64_t an = a.node(), bn = b.node();
  const Buf ab = a.buffer(), bb = b.buffer();
  return finish(tracked_tape(a, b), Tensor(a.shape(), std::move(out)),
                [an, bn, n, ab, bb](Tape& t, const std::vector<double>& g) {
                  if (an >= 0) {
                    std::vector<double> ga(static_cast<size_t>(n));
                    for (int64_t i = 0; i < n; ++i) ga[i] = g[i] / (*bb)[i];
                    t.accumulate(an, ga);
                  }
                  if (bn >= 0) {
                    std::vector<double> gb(static_cast<size_t>(n));
                    for (int64_t i = 0; i < n; ++i) {
                      const double bi = (*bb)[i];
                      gb[i] = -g[i] * (*ab)[i] / (bi * bi);
                    }
                    t.accumulate(bn, gb);
                  }
                });
}

Tensor scale(const Tensor& a, double c) {
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * c;
  const int64_t an = a.node();
  return finish(tracked_tape(a), Tensor(a.shape(), std::move(out)),
                [an, n, c](Tape& t, const std::vector<double>& g) {
                  std::vector<double> ga(static_cast<size_t>(n));
                  for (int64_t i = 0; i < n; ++i) ga[i] = g[i] * c;
                  t.accumulate(an, ga);
                });
}

Tensor add_scalar(const Tensor& a, double c) {
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + c;
  const int64_t an = a.node();
  return finish(tracked_tape(a), Tensor(a.shape(), std::move(out)),
                [an](Tape& t, const std::vector<double>& g) { t.accumulate(an, g); });
}

Tensor relu(const Tensor& a) {
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  const int64_t an = a.node();
  const Buf ab = a.buffer();
  return finish(tracked_tape(a), Tensor(a.shape(), std::move(out)),
                [an, n, ab](Tape& t, const std::vector<double>& g) {
                  std::vector<double> ga(static_cast<size_t>(n));
                  for (int64_t i = 0; i < n; ++i) ga[i] = (*ab)[i] > 0.0 ? g[i] : 0.0;
                  t.accumulate(an, ga);
                });
}

Tensor sigmoid(const Tensor& a) {
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double v = a[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor r(a.shape(), std::move(out));
  const int64_t an = a.node();
  const Buf yb = r.buffer();
  return finish(tracked_tape(a), std::move(r),
                [an, n, yb](Tape& t, const std::vector<double>& g) {
                  std::vector<double> ga(static_cast<size_t>(n));
                  for (int64_t i = 0; i < n; ++i) {
                    const double y = (*yb)[i];
                    ga[i] = g[i] * y * (1.0 - y);
                  }
                  t.accumulate(an, ga);
                });
}

Tensor sum(const Tensor& a) {
  const int64_t n = a.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i];
  const int64_t an = a.node();
  return finish(tracked_tape(a), Tensor::scalar(s),
                [an, n](Tape& t, const std::vector<double>& g) {
                  t.accumulate(an, std::vector<double>(static_cast<size_t>(n), g[0]));
                });
}

// ---- shape / indexing ------------------------------------------------------

Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
  Tensor r = a.detached().viewed_as(std::move(new_shape));
  const int64_t an = a.node();
  return finish(tracked_tape(a), std::move(r),
                [an](Tape& t, const std::vector<double>& g) { t.accumulate(an, g); });
}

Tensor gather(const Tensor& a, IndexMap map, Shape out_shape) {
  if (!map) throw ContractError("gather: null index map");
  const int64_t n = static_cast<int64_t>(map->size());
  if (shape_numel(out_shape) != n)
    throw ContractError("gather: map size " + std::to_string(n) + " does not match output shape " +
                        shape_str(out_shape));
  const int64_t in_n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t s = (*map)[i];
    if (s < -1 || s >= in_n)
      throw ContractError("gather: map entry " + std::to_string(s) + " at position " +
                          std::to_string(i) + " outside input of " + std::to_string(in_n) + " elements");
    out[i] = s < 0 ? 0.0 : a[s];
  }
  const int64_t an = a.node();
  return finish(tracked_tape(a), Tensor(std::move(out_shape), std::move(out)),
                [an, n, in_n, map](Tape& t, const std::vector<double>& g) {
                  std::vector<double> ga(static_cast<size_t>(in_n), 0.0);
                  for (int64_t i = 0; i < n; ++i) {
                    const int64_t s = (*map)[i];
                    if (s >= 0) ga[s] += g[i];
                  }
                  t.accumulate(an, ga);
                });
}

Tensor scatter_add(const Tensor& a, IndexMap map, Shape out_shape) {
  if (!map) throw ContractError("scatter_add: null index map");
  const int64_t n = a.numel();
  if (static_cast<int64_t>(map->size()) != n)
    throw ContractError("scatter_add: map size " + std::to_string(map->size()) +
                        " does not match input shape " + shape_str(a.shape()));
  const int64_t out_n = shape_numel(out_shape);
  std::vector<double> out(static_cast<size_t>(out_n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t d = (*map)[i];
    if (d < -1 || d >= out_n)
      throw ContractError("scatter_add: map entry " + std::to_string(d) + " at position " +
                          std::to_string(i) + " outside output of " + std::to_string(out_n) + " elements");
    if (d >= 0) out[d] += a[i];
  }
  const int64_t an = a.node();
  return finish(tracked_tape(a), Tensor(std::move(out_shape), std::move(out)),
                [an, n, map](Tape& t, const std::vector<double>& g) {
                  std::vector<double> ga(static_cast<size_t>(n), 0.0);
                  for (int64_t i = 0; i < n; ++i) {
                    const int64_t d = (*map)[i];
                    if (d >= 0) ga[i] = g[d];
                  }
                  t.accumulate(an, ga);
                });
}

Tensor channel(const Tensor& a, int64_t c) {
  require_rank("channel", a, 3);
  const int64_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
  if (c < 0 || c >= C)
    throw ContractError("channel: index " + std::to_string(c) + " outside " + shape_str(a.shape()));
  auto map = std::make_shared<std::vector<int64_t>>(H * W);
  for (int64_t i = 0; i < H * W; ++i) (*map)[i] = i * C + c;
  return gather(a, std::move(map), {H, W});
}

Tensor pad2d_bottom_right(const Tensor& a, int64_t newH, int64_t newW) {
  require_rank("pad2d_bottom_right", a, 3);
  const int64_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
  if (newH < H || newW < W)
    throw ContractError("pad2d_bottom_right: target " + std::to_string(newH) + "x" + std::to_string(newW) +
                        " smaller than input " + shape_str(a.shape()));
  if (newH == H && newW == W) return reshape(a, a.shape());
  auto map = std::make_shared<std::vector<int64_t>>(newH * newW * C);
  int64_t i = 0;
  for (int64_t y = 0; y < newH; ++y)
    for (int64_t x = 0; x < newW; ++x)
      for (int64_t c = 0; c < C; ++c, ++i) (*map)[i] = (y < H && x < W) ? (y * W + x) * C + c : -1;
  return gather(a, std::move(map), {newH, newW, C});
}

Tensor crop2d(const Tensor& a, int64_t outH, int64_t outW) {
  require_rank("crop2d", a, 3);
  const int64_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
  if (outH < 1 || outW < 1 || outH > H || outW > W)
    throw ContractError("crop2d: target " + std::to_string(outH) + "x" + std::to_string(outW) +
                        " invalid for input " + shape_str(a.shape()));
  if (outH == H && outW == W) return reshape(a, a.shape());
  auto map = std::make_shared<std::vector<int64_t>>(outH * outW * C);
  int64_t i = 0;
  for (int64_t y = 0; y < outH; ++y)
    for (int64_t x = 0; x < outW; ++x)
      for (int64_t c = 0; c < C; ++c, ++i) (*map)[i] = (y * W + x) * C + c;
  return gather(a, std::move(map), {outH, outW, C});
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  const int64_t an = a.node(), bn = b.node();
  const Buf ab = a.buffer(), bb = b.buffer();
  return finish(tracked_tape(a, b), Tensor({m, n}, std::move(out)),
                [an, bn, ab, bb, m, k, n](Tape& t, const std::vector<double>& g) {
                  if (an >= 0) {
                    std::vector<double> ga(static_cast<size_t>(m * k), 0.0);
                    mm_nt(g.data(), bb->data(), ga.data(), m, n, k);
                    t.accumulate(an, ga);
                  }
                  if (bn >= 0) {
                    std::vector<double> gb(static_cast<size_t>(k * n), 0.0);
                    mm_tn(ab->data(), g.data(), gb.data(), k, m, n);
                    t.accumulate(bn, gb);
                  }
                });
}

// ---- spatial kernels -------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& k, int64_t stride, int64_t pad) {
  if (k.rank() != 4)
    throw ShapeError("conv2d: kernel must be (kh, kw, Cin, Cout), got " + shape_str(k.shape()));
  if (k.dim(0) % 2 == 0 || k.dim(1) % 2 == 0)
    throw ContractError("conv2d: kernel dims must be odd, got " + shape_str(k.shape()));
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw ContractError("conv2d: pad must be >= 0, got " + std::to_string(pad));
  return conv2d_impl("conv2d", x, k, stride, pad, pad);
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& k, int64_t stride, int64_t pad) {
  require_rank("conv2d_transpose", x, 3);
  if (k.rank() != 4)
    throw ShapeError("conv2d_transpose: kernel must be (kh, kw, Cin, Cout), got " + shape_str(k.shape()));
  if (stride < 1)
    throw ContractError("conv2d_transpose: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw ContractError("conv2d_transpose: pad must be >= 0, got " + std::to_string(pad));
  const int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int64_t kh = k.dim(0), kw = k.dim(1);
  if (k.dim(2) != C)
    throw ShapeError("conv2d_transpose: input channels " + shape_str(x.shape()) +
                     " do not match kernel " + shape_str(k.shape()));
  const int64_t Ho = stride * (H - 1) + kh - 2 * pad;
  const int64_t Wo = stride * (W - 1) + kw - 2 * pad;
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv2d_transpose: non-positive output dimension for input " + shape_str(x.shape()) +
                     ", kernel " + shape_str(k.shape()) + ", stride " + std::to_string(stride) +
                     ", pad " + std::to_string(pad));

  // Equivalent direct form: zero-dilate the input by the stride, then run a
  // stride-1 correlation with the spatially flipped kernel at pad (k-1-pad).
  Tensor xd = x;
  if (stride > 1) {
    const int64_t Hd = stride * (H - 1) + 1;
    const int64_t Wd = stride * (W - 1) + 1;
    auto dmap = std::make_shared<std::vector<int64_t>>(Hd * Wd * C);
    int64_t i = 0;
    for (int64_t y = 0; y < Hd; ++y) {
      const bool yhit = y % stride == 0;
      for (int64_t xx = 0; xx < Wd; ++xx) {
        const bool hit = yhit && xx % stride == 0;
        const int64_t base = hit ? ((y / stride) * W + xx / stride) * C : -1;
        for (int64_t c = 0; c < C; ++c, ++i) (*dmap)[i] = hit ? base + c : -1;
      }
    }
    xd = gather(x, std::move(dmap), {Hd, Wd, C});
  }

  const int64_t Cin = k.dim(2), Cout = k.dim(3);
  auto fmap = std::make_shared<std::vector<int64_t>>(k.numel());
  int64_t i = 0;
  for (int64_t ky = 0; ky < kh; ++ky)
    for (int64_t kx = 0; kx < kw; ++kx) {
      const int64_t src = ((kh - 1 - ky) * kw + (kw - 1 - kx)) * Cin * Cout;
      for (int64_t cc = 0; cc < Cin * Cout; ++cc, ++i) (*fmap)[i] = src + cc;
    }
  Tensor kf = gather(k, std::move(fmap), k.shape());

  Tensor out = conv2d_impl("conv2d_transpose", xd, kf, 1, kh - 1 - pad, kw - 1 - pad);
  if (out.dim(0) != Ho || out.dim(1) != Wo)
    throw ContractError("conv2d_transpose: internal size mismatch " + shape_str(out.shape()));
  return out;
}

std::pair<Tensor, MaxPoolIndices> maxpool2d_argmax(const Tensor& x, int64_t kh, int64_t kw,
                                                   int64_t stride, int64_t pad) {
  require_rank("maxpool2d_argmax", x, 3);
  if (kh < 1 || kw < 1)
    throw ContractError("maxpool2d_argmax: window must be >= 1x1, got " + std::to_string(kh) + "x" +
                        std::to_string(kw));
  if (stride < 1)
    throw ContractError("maxpool2d_argmax: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw ContractError("maxpool2d_argmax: pad must be >= 0, got " + std::to_string(pad));
  const int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int64_t hnum = H + 2 * pad - kh;
  const int64_t wnum = W + 2 * pad - kw;
  if (hnum < 0 || wnum < 0)
    throw ShapeError("maxpool2d_argmax: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " does not fit input " + shape_str(x.shape()) + " with pad " + std::to_string(pad));
  const int64_t Ho = hnum / stride + 1;
  const int64_t Wo = wnum / stride + 1;

  std::vector<double> out(static_cast<size_t>(Ho * Wo * C));
  auto src = std::make_shared<std::vector<int64_t>>(Ho * Wo * C, -1);
  std::vector<double> best(static_cast<size_t>(C));
  std::vector<int64_t> bidx(static_cast<size_t>(C));
  for (int64_t oy = 0; oy < Ho; ++oy) {
    for (int64_t ox = 0; ox < Wo; ++ox) {
      std::fill(best.begin(), best.end(), -std::numeric_limits<double>::infinity());
      std::fill(bidx.begin(), bidx.end(), int64_t{-1});
      for (int64_t ky = 0; ky < kh; ++ky) {
        const int64_t iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int64_t kx = 0; kx < kw; ++kx) {
          const int64_t ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const int64_t base = (iy * W + ix) * C;
          for (int64_t c = 0; c < C; ++c) {
            const double v = x[base + c];
            if (v > best[c]) {
              best[c] = v;
              bidx[c] = base + c;
            }
          }
        }
      }
      const int64_t obase = (oy * Wo + ox) * C;
      for (int64_t c = 0; c < C; ++c) {
        // A window fully inside the padding has no source; emit 0.
        out[obase + c] = bidx[c] >= 0 ? best[c] : 0.0;
        (*src)[obase + c] = bidx[c];
      }
    }
  }

  MaxPoolIndices idx{x.shape(), {Ho, Wo, C}, src};
  const int64_t an = x.node();
  const int64_t n = Ho * Wo * C;
  const int64_t in_n = x.numel();
  Tensor r = finish(tracked_tape(x), Tensor({Ho, Wo, C}, std::move(out)),
                    [an, n, in_n, src](Tape& t, const std::vector<double>& g) {
                      std::vector<double> ga(static_cast<size_t>(in_n), 0.0);
                      for (int64_t i = 0; i < n; ++i) {
                        const int64_t s = (*src)[i];
                        if (s >= 0) ga[s] += g[i];
                      }
                      t.accumulate(an, ga);
                    });
  return {std::move(r), std::move(idx)};
}

Tensor max_unpool2d(const Tensor& y, const MaxPoolIndices& idx) {
  if (!idx.src) throw ContractError("max_unpool2d: indices carry no source map");
  if (y.shape() != idx.out_shape)
    throw ShapeError("max_unpool2d: input " + shape_str(y.shape()) + " does not match pooled shape " +
                     shape_str(idx.out_shape));
  return scatter_add(y, idx.src, idx.in_shape);
}

Tensor bilinear_resize(const Tensor& x, int64_t outH, int64_t outW) {
  require_rank("bilinear_resize", x, 3);
  if (outH < 1 || outW < 1)
    throw ContractError("bilinear_resize: target dims must be >= 1, got " + std::to_string(outH) + "x" +
                        std::to_string(outW));
  const int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);

  auto axis_taps = [](int64_t in, int64_t out, std::vector<int64_t>& lo, std::vector<int64_t>& hi,
                      std::vector<double>& w) {
    lo.resize(static_cast<size_t>(out));
    hi.resize(static_cast<size_t>(out));
    w.resize(static_cast<size_t>(out));
    for (int64_t i = 0; i < out; ++i) {
      double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      s = std::min(std::max(s, 0.0), static_cast<double>(in - 1));
      const int64_t l = static_cast<int64_t>(std::floor(s));
      lo[i] = l;
      hi[i] = std::min(l + 1, in - 1);
      w[i] = s - static_cast<double>(l);
    }
  };
  auto ys0 = std::make_shared<std::vector<int64_t>>();
  auto ys1 = std::make_shared<std::vector<int64_t>>();
  auto wy = std::make_shared<std::vector<double>>();
  auto xs0 = std::make_shared<std::vector<int64_t>>();
  auto xs1 = std::make_shared<std::vector<int64_t>>();
  auto wx = std::make_shared<std::vector<double>>();
  axis_taps(H, outH, *ys0, *ys1, *wy);
  axis_taps(W, outW, *xs0, *xs1, *wx);

  std::vector<double> out(static_cast<size_t>(outH * outW * C));
  for (int64_t oy = 0; oy < outH; ++oy) {
    const int64_t y0 = (*ys0)[oy], y1 = (*ys1)[oy];
    const double fy = (*wy)[oy];
    for (int64_t ox = 0; ox < outW; ++ox) {
      const int64_t x0 = (*xs0)[ox], x1 = (*xs1)[ox];
      const double fx = (*wx)[ox];
      const int64_t b00 = (y0 * W + x0) * C, b01 = (y0 * W + x1) * C;
      const int64_t b10 = (y1 * W + x0) * C, b11 = (y1 * W + x1) * C;
      const int64_t ob = (oy * outW + ox) * C;
      for (int64_t c = 0; c < C; ++c) {
        const double top = (1.0 - fx) * x[b00 + c] + fx * x[b01 + c];
        const double bot = (1.0 - fx) * x[b10 + c] + fx * x[b11 + c];
        out[ob + c] = (1.0 - fy) * top + fy * bot;
      }
    }
  }

  const int64_t an = x.node();
  const int64_t in_n = x.numel();
  return finish(tracked_tape(x), Tensor({outH, outW, C}, std::move(out)),
                [an, in_n, W, C, outH, outW, ys0, ys1, wy, xs0, xs1, wx](Tape& t,
                                                                         const std::vector<double>& g) {
                  std::vector<double> ga(static_cast<size_t>(in_n), 0.0);
                  for (int64_t oy = 0; oy < outH; ++oy) {
                    const int64_t y0 = (*ys0)[oy], y1 = (*ys1)[oy];
                    const double fy = (*wy)[oy];
                    for (int64_t ox = 0; ox < outW; ++ox) {
                      const int64_t x0 = (*xs0)[ox], x1 = (*xs1)[ox];
                      const double fx = (*wx)[ox];
                      const int64_t b00 = (y0 * W + x0) * C, b01 = (y0 * W + x1) * C;
                      const int64_t b10 = (y1 * W + x0) * C, b11 = (y1 * W + x1) * C;
                      const int64_t ob = (oy * outW + ox) * C;
                      for (int64_t c = 0; c < C; ++c) {
                        const double gv = g[ob + c];
                        ga[b00 + c] += (1.0 - fy) * (1.0 - fx) * gv;
                        ga[b01 + c] += (1.0 - fy) * fx * gv;
                        ga[b10 + c] += fy * (1.0 - fx) * gv;
                        ga[b11 + c] += fy * fx * gv;
                      }
                    }
                  }
                  t.accumulate(an, ga);
                });
}

}  // namespace m2mrf::ops
