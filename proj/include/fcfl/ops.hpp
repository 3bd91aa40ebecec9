#pragma once

// Differentiable tensor operations. Each op computes its forward value
// eagerly and, when any input requires grad and GradMode is on, records a
// backward rule on the thread's tape.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fcfl/tensor.hpp"

namespace fcfl {

// a + b. `b` may have a's shape or a trailing suffix of it (leading 1s
// allowed), in which case it is broadcast over the leading dims of `a`.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise product; shapes must match.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// [B,m,k] x [B,k,n] -> [B,m,n]
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

// x[..., in] * weight[in, out] + bias[out]. `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// out.shape[i] = a.shape[perm[i]]
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);

// Repeats a tensor whose leading dim is 1 `count` times along that dim.
template <typename T>
Tensor<T> expand_batch(const Tensor<T>& a, std::size_t count);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

// mean((a - b)^2) over all elements.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b);

// Along the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a);

// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

// Normalizes over the last axis with biased variance, then gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Per-sample, per-channel normalization over H*W of an NCHW tensor, with a
// per-channel affine map. Independent of batch size.
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                       T eps = T(1e-5));

// scale * q k^T for q [n,Lq,d], k [n,Lk,d] -> [n,Lq,Lk].
template <typename T>
Tensor<T> attention_scores(const Tensor<T>& q, const Tensor<T>& k, T scale);

// Scalar multiplies spent in attention_scores on this thread since the last
// reset: n * Lq * Lk * (d + 1) per call (dot products plus scaling).
std::uint64_t attention_multiply_count();
void reset_attention_multiply_count();

// Cross-correlation. input [B,Ci,H,W], kernel [Co,Ci,kh,kw], bias [Co] or
// undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);

// Adjoint of conv2d w.r.t. its input. input [B,Ci,H,W], kernel [Ci,Co,kh,kw],
// output [B,Co,(H-1)*stride - 2*padding + kh, ...].
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           std::size_t stride, std::size_t padding);

// Gradient goes to the first maximal element of each window in scan order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride);

// Half-pixel-centre bilinear resampling of an NCHW tensor (edges clamped).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, std::size_t out_h, std::size_t out_w);

}  // namespace fcfl
