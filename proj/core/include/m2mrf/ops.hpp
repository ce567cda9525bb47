#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "m2mrf/autograd.hpp"
#include "m2mrf/tensor.hpp"

namespace m2mrf::ops {

using IndexMap = std::shared_ptr<std::vector<int64_t>>;

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Elementwise quotient; the denominator must be nonzero everywhere.
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
// Numerically stable logistic; finite for any finite input.
Tensor sigmoid(const Tensor& a);

// Sum of all elements, as a {1} scalar.
Tensor sum(const Tensor& a);

// ---- shape / indexing ------------------------------------------------------

Tensor reshape(const Tensor& a, Shape new_shape);

// out[i] = map[i] < 0 ? 0 : a[map[i]]. The one indexing primitive that
// padding, cropping, patch partition/merge and im2col are built from;
// its backward is scatter-add.
Tensor gather(const Tensor& a, IndexMap map, Shape out_shape);

// out[map[i]] += a[i] (entries with map[i] < 0 are dropped). Adjoint of
// gather; used for unpooling.
Tensor scatter_add(const Tensor& a, IndexMap map, Shape out_shape);

// Plane c of an (H, W, C) map, as (H, W).
Tensor channel(const Tensor& a, int64_t c);

// Zero-pad on the bottom/right to (newH, newW); crop back from the top-left.
Tensor pad2d_bottom_right(const Tensor& a, int64_t newH, int64_t newW);
Tensor crop2d(const Tensor& a, int64_t outH, int64_t outW);

// ---- linear algebra --------------------------------------------------------

// (m x k) . (k x n) -> (m x n)
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- spatial kernels -------------------------------------------------------
// Feature maps are (H, W, C); kernels are (kh, kw, Cin, Cout).

// Cross-correlation with zero padding, no bias. kh, kw must be odd.
Tensor conv2d(const Tensor& x, const Tensor& k, int64_t stride, int64_t pad);

// Transposed convolution: output size stride*(H-1) + kh - 2*pad. Input
// channels match the kernel's third axis, like conv2d.
Tensor conv2d_transpose(const Tensor& x, const Tensor& k, int64_t stride, int64_t pad);

struct MaxPoolIndices {
  Shape in_shape;   // (H, W, C)
  Shape out_shape;  // (Ho, Wo, C)
  IndexMap src;     // per output element, flat index of the winning input; -1 if none
};

// Channelwise windowed max. Ties break to the first cell in row-major
// window scan; padding cells never win. Indices are flat into the input
// and reusable by max_unpool2d.
std::pair<Tensor, MaxPoolIndices> maxpool2d_argmax(const Tensor& x, int64_t kh, int64_t kw,
                                                   int64_t stride, int64_t pad);

// Scatters y back to the recorded argmax sites, zero elsewhere.
Tensor max_unpool2d(const Tensor& y, const MaxPoolIndices& idx);

// Half-pixel-center bilinear resampling with edge clamping; channelwise
// and linear in x.
Tensor bilinear_resize(const Tensor& x, int64_t outH, int64_t outW);

}  // namespace m2mrf::ops
