#pragma once

#include "refseg/tensor.hpp"

#include <span>
#include <vector>

namespace refseg {

// Every operation below records itself on the operands' tape when at least
// one operand is tracked, and is a plain computation otherwise. Binary
// elementwise operations require identical shapes; the only broadcasts are
// the explicitly named ones (scalar scaling, channel gating, spatial tiling).

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// alpha * x + beta
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T alpha, T beta = T(0));
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return affine(x, factor);
}
/// x scaled by a single-element tensor; differentiable in both.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& factor);

/// Row l of x [L, C] multiplied by factors[l].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& factors);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Softmax over a rank-1 tensor, computed with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& v);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis);
template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, int axis) {
  std::vector<Tensor<T>> v(parts);
  return concat(std::span<const Tensor<T>>(v), axis);
}
/// Elements [start, start + length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, Index start, Index length);

/// Rows `ids` of a [N, C] table, giving [ids.size(), C].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids);

/// Repeats a [C] vector at every cell of an H x W grid, giving [C, H, W].
template <typename T>
Tensor<T> tile_spatial(const Tensor<T>& v, Index height, Index width);

/// Multiplies every channel of x [C, H, W] by the single-channel map
/// gate [1, H, W].
template <typename T>
Tensor<T> mul_channels(const Tensor<T>& gate, const Tensor<T>& x);

/// Cross-correlation of input [C_in, H, W] with kernel [C_out, C_in, k, k]
/// and bias [C_out], zero padded. Output spatial size is
/// (H + 2 * padding - k) / stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int padding, int stride = 1);

/// Bilinear resampling of [C, H, W] to [C, out_h, out_w] with the
/// align-corners-false convention: source coordinate
/// (dst + 0.5) * in / out - 0.5, clamped to the valid range.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, Index out_h, Index out_w);

/// Mean binary cross entropy between probabilities and {0,1} targets.
/// Probabilities are clamped to [1e-7, 1 - 1e-7] before the logarithm; the
/// clamp passes zero gradient.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& target);

inline constexpr double kBceClamp = 1e-7;

}  // namespace refseg
