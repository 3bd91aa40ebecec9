#pragma once

// Raw numeric kernels behind the differentiable ops.
//
// Each kernel has a serial reference in `kernels::serial` and an OpenMP
// version in `kernels::parallel`. The parallel versions split work only over
// output elements that a single thread owns and keep the per-element
// accumulation order of the serial reference, so both produce bitwise
// identical results. The unqualified `kernels::` entry points dispatch to the
// parallel version when the build has OpenMP and the problem is large enough.

#include <cstddef>
#include <span>

namespace fcfl::kernels {

struct GemmShape {
  std::size_t m = 0;  // rows of op(A) and C
  std::size_t n = 0;  // cols of op(B) and C
  std::size_t k = 0;  // inner dimension
  bool trans_a = false;  // A stored k x m
  bool trans_b = false;  // B stored n x k
};

// Cross-correlation geometry for conv2d, NCHW input and OIHW kernel.
struct Conv2dGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  std::size_t kernel_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
};

#define FCFL_DECLARE_KERNELS(ns)                                                               \
  namespace ns {                                                                               \
  /* C (+)= op(A) * op(B) */                                                                   \
  template <typename T>                                                                        \
  void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c,    \
            bool accumulate);                                                                  \
  /* y = conv2d(x, w), overwrites y */                                                         \
  template <typename T>                                                                        \
  void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w,     \
                      std::span<T> y);                                                         \
  /* dx += conv2d input-adjoint of dy */                                                       \
  template <typename T>                                                                        \
  void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> dy,                   \
                             std::span<const T> w, std::span<T> dx);                           \
  /* dw += correlation of x with dy */                                                         \
  template <typename T>                                                                        \
  void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x,                   \
                              std::span<const T> dy, std::span<T> dw);                         \
  }

FCFL_DECLARE_KERNELS(serial)
FCFL_DECLARE_KERNELS(parallel)

#undef FCFL_DECLARE_KERNELS

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c,
          bool accumulate);
template <typename T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y);
template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);
template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw);

// Number of OpenMP threads the parallel kernels would use (1 without OpenMP).
int max_threads();

}  // namespace fcfl::kernels
