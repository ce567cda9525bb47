#pragma once

// Deliberately naive reference implementations, independent of the library
// kernels, plus small comparison helpers shared by the test suites.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <utility>
#include <vector>

#include "m2mrf/tensor.hpp"

namespace test_util {

using m2mrf::Shape;
using m2mrf::Tensor;

inline bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

// Reference cross-correlation on (H, W, Cin) with kernel (kh, kw, Cin, Cout),
// zero padding, written as four plain loops.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& k, int64_t stride, int64_t pad) {
  const int64_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int64_t kh = k.dim(0), kw = k.dim(1), Cout = k.dim(3);
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out = Tensor::zeros({Ho, Wo, Cout});
  for (int64_t i = 0; i < Ho; ++i)
    for (int64_t j = 0; j < Wo; ++j)
      for (int64_t co = 0; co < Cout; ++co) {
        double acc = 0.0;
        for (int64_t a = 0; a < kh; ++a)
          for (int64_t b = 0; b < kw; ++b) {
            const int64_t r = i * stride + a - pad;
            const int64_t c = j * stride + b - pad;
            if (r < 0 || r >= H || c < 0 || c >= W) continue;
            for (int64_t ci = 0; ci < Cin; ++ci) acc += x.at(r, c, ci) * k.at(a, b, ci, co);
          }
        out[(i * Wo + j) * Cout + co] = acc;
      }
  return out;
}

struct Component {
  int64_t area = 0;
  double cy = 0.0;  // centroid row
  double cx = 0.0;  // centroid col
};

// 4-connectivity components of one binary (H, W) plane via flood fill.
inline std::vector<Component> components(const Tensor& mask) {
  const int64_t H = mask.dim(0), W = mask.dim(1);
  std::vector<char> seen(static_cast<size_t>(H * W), 0);
  std::vector<Component> out;
  std::vector<int64_t> stack;
  for (int64_t s = 0; s < H * W; ++s) {
    if (seen[static_cast<size_t>(s)] || mask[s] == 0.0) continue;
    Component comp;
    stack.assign(1, s);
    seen[static_cast<size_t>(s)] = 1;
    while (!stack.empty()) {
      const int64_t cur = stack.back();
      stack.pop_back();
      const int64_t i = cur / W, j = cur % W;
      comp.area += 1;
      comp.cy += static_cast<double>(i);
      comp.cx += static_cast<double>(j);
      const int64_t di[4] = {-1, 1, 0, 0};
      const int64_t dj[4] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        const int64_t ni = i + di[d], nj = j + dj[d];
        if (ni < 0 || ni >= H || nj < 0 || nj >= W) continue;
        const int64_t n = ni * W + nj;
        if (seen[static_cast<size_t>(n)] || mask[n] == 0.0) continue;
        seen[static_cast<size_t>(n)] = 1;
        stack.push_back(n);
      }
    }
    comp.cy /= static_cast<double>(comp.area);
    comp.cx /= static_cast<double>(comp.area);
    out.push_back(comp);
  }
  return out;
}

// Channel plane (H, W) copied out of an (H, W, C) map.
inline Tensor plane(const Tensor& x, int64_t c) {
  const int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor out = Tensor::zeros({H, W});
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) out[i * W + j] = x[(i * W + j) * C + c];
  return out;
}

// Row rank of an (m, n) matrix by Gaussian elimination with partial
// pivoting; entries below tol count as zero.
inline int64_t matrix_rank(Tensor m, double tol = 1e-9) {
  const int64_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> a(m.data());
  int64_t rank = 0;
  for (int64_t col = 0; col < cols && rank < rows; ++col) {
    int64_t pivot = -1;
    double best = tol;
    for (int64_t r = rank; r < rows; ++r) {
      const double v = std::abs(a[static_cast<size_t>(r * cols + col)]);
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (pivot < 0) continue;
    for (int64_t c = 0; c < cols; ++c)
      std::swap(a[static_cast<size_t>(rank * cols + c)], a[static_cast<size_t>(pivot * cols + c)]);
    const double lead = a[static_cast<size_t>(rank * cols + col)];
    for (int64_t r = rank + 1; r < rows; ++r) {
      const double f = a[static_cast<size_t>(r * cols + col)] / lead;
      if (f == 0.0) continue;
      for (int64_t c = col; c < cols; ++c)
        a[static_cast<size_t>(r * cols + c)] -= f * a[static_cast<size_t>(rank * cols + c)];
    }
    ++rank;
  }
  return rank;
}

}  // namespace test_util
