#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "telescopic/core/rng.hpp"
#include "telescopic/core/tensor.hpp"

namespace telescopic::ops {

inline constexpr Real kLayerNormEps = Real(1e-5);
inline constexpr Real kBatchNormEps = Real(1e-5);
inline constexpr Real kBatchNormMomentum = Real(0.1);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, Real factor);
Tensor add_scalar(const Tensor& x, Real value);
// x * s where s is a one-element tensor; gradients flow to both.
Tensor scale_by(const Tensor& x, const Tensor& s);
// Adds a vector of length x.shape().back() to every row of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// [m x k] . [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x . w (+ b); x is [n x in], w is [in x out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b = nullptr);
// Batched product over the leading axis: [g x m x k] . [g x k x n], or with
// transpose_b the second operand is [g x n x k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// [a x b x c x d] -> [a x c x b x d]
Tensor swap_axes12(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Softmax over the last axis.
Tensor softmax(const Tensor& x);
// Normalizes over the last axis, then applies gain and bias (both of that length).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = kLayerNormEps);
// Inverted dropout: survivors are scaled by 1/(1-p); identity when !training.
Tensor dropout(const Tensor& x, Real p, bool training, RngStream& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// [g*t x d] -> [g x d], averaging each block of t consecutive rows.
Tensor mean_groups(const Tensor& x, std::size_t group_rows);
// [g x d] -> [g*t x d], repeating each row t times.
Tensor expand_rows(const Tensor& x, std::size_t times);
// Picks rows of a 2-D tensor; also serves as embedding lookup.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

enum class Padding { kSame, kNone };
// Cross-correlation. x is [c x h x w] or [b x c x h x w]; kernel is
// [c_out x c x kh x kw]. kSame needs odd kernel extents.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, Padding padding);
// Nearest-neighbour 2x upsampling of the two trailing axes.
Tensor upsample_nearest2x(const Tensor& x);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  static BatchNormStats fresh(std::size_t channels);
};
// Per-channel normalization of [b x c x h x w]. Training mode normalizes with
// batch statistics and updates `stats`; eval mode uses the running values.
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormStats& stats, bool training,
                  Real momentum = kBatchNormMomentum, Real eps = kBatchNormEps);

// [b x c x h x w] -> [b*(h/p)*(w/p) x c*p*p], tokens in row-major patch order.
Tensor patchify(const Tensor& x, std::size_t patch);
// Inverse of patchify.
Tensor unpatchify(const Tensor& tokens, std::size_t batch, std::size_t channels, std::size_t height,
                  std::size_t width, std::size_t patch);

}  // namespace telescopic::ops
