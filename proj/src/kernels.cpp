#include "fcfl/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fcfl::kernels {

namespace {

// Below this many multiply-adds the parallel region costs more than it saves.
constexpr std::size_t kMinParallelWork = 1u << 15;

// One output row of C. Shared by both schedules so the accumulation order
// per element is identical.
template <typename T>
void gemm_row(const GemmShape& s, const T* a, const T* b, T* c, std::size_t i, bool accumulate) {
  T* crow = c + i * s.n;
  if (!accumulate) std::fill(crow, crow + s.n, T(0));
  if (!s.trans_b) {
    for (std::size_t p = 0; p < s.k; ++p) {
      const T av = s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
      const T* brow = b + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < s.n; ++j) {
      const T* brow = b + j * s.k;
      T acc = T(0);
      if (s.trans_a) {
        for (std::size_t p = 0; p < s.k; ++p) acc += a[p * s.m + i] * brow[p];
      } else {
        const T* arow = a + i * s.k;
        for (std::size_t p = 0; p < s.k; ++p) acc += arow[p] * brow[p];
      }
      crow[j] += acc;
    }
  }
}

// y[b, co, :, :] for one (b, co) plane.
template <typename T>
void conv_forward_plane(const Conv2dGeometry& g, const T* x, const T* w, T* y, std::size_t b,
                        std::size_t co) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  T* yp = y + (b * g.out_channels + co) * oh_n * ow_n;
  std::fill(yp, yp + oh_n * ow_n, T(0));
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const T* xp = x + (b * g.in_channels + ci) * g.in_h * g.in_w;
    const T* wp = w + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T wv = wp[ki * g.kernel_w + kj];
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          const T* xrow = xp + static_cast<std::size_t>(ih) * g.in_w;
          T* yrow = yp + oh * ow_n;
          for (std::size_t ow = 0; ow < ow_n; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            yrow[ow] += wv * xrow[iw];
          }
        }
      }
    }
  }
}

// dx[b, ci, :, :] += sum over co and taps of w * dy.
template <typename T>
void conv_backward_input_plane(const Conv2dGeometry& g, const T* dy, const T* w, T* dx,
                               std::size_t b, std::size_t ci) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  T* dxp = dx + (b * g.in_channels + ci) * g.in_h * g.in_w;
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    const T* dyp = dy + (b * g.out_channels + co) * oh_n * ow_n;
    const T* wp = w + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T wv = wp[ki * g.kernel_w + kj];
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* dxrow = dxp + static_cast<std::size_t>(ih) * g.in_w;
          const T* dyrow = dyp + oh * ow_n;
          for (std::size_t ow = 0; ow < ow_n; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            dxrow[iw] += wv * dyrow[ow];
          }
        }
      }
    }
  }
}

// dw[co, ci, :, :] += correlation of x[:, ci] with dy[:, co].
template <typename T>
void conv_backward_weight_pair(const Conv2dGeometry& g, const T* x, const T* dy, T* dw,
                               std::size_t co, std::size_t ci) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  T* dwp = dw + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
  for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
    for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
      T acc = T(0);
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* xp = x + (b * g.in_channels + ci) * g.in_h * g.in_w;
        const T* dyp = dy + (b * g.out_channels + co) * oh_n * ow_n;
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          const T* xrow = xp + static_cast<std::size_t>(ih) * g.in_w;
          const T* dyrow = dyp + oh * ow_n;
          for (std::size_t ow = 0; ow < ow_n; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            acc += dyrow[ow] * xrow[iw];
          }
        }
      }
      dwp[ki * g.kernel_w + kj] += acc;
    }
  }
}

}  // namespace

namespace serial {

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c,
          bool accumulate) {
  for (std::size_t i = 0; i < s.m; ++i) gemm_row(s, a.data(), b.data(), c.data(), i, accumulate);
}

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      conv_forward_plane(g, x.data(), w.data(), y.data(), b, co);
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
      conv_backward_input_plane(g, dy.data(), w.data(), dx.data(), b, ci);
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  for (std::size_t co = 0; co < g.out_channels; ++co)
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
      conv_backward_weight_pair(g, x.data(), dy.data(), dw.data(), co, ci);
}

}  // namespace serial

namespace parallel {

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c,
          bool accumulate) {
  const auto rows = static_cast<std::int64_t>(s.m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i)
    gemm_row(s, a.data(), b.data(), c.data(), static_cast<std::size_t>(i), accumulate);
}

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  const auto planes = static_cast<std::int64_t>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const auto idx = static_cast<std::size_t>(p);
    conv_forward_plane(g, x.data(), w.data(), y.data(), idx / g.out_channels,
                       idx % g.out_channels);
  }
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const auto planes = static_cast<std::int64_t>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const auto idx = static_cast<std::size_t>(p);
    conv_backward_input_plane(g, dy.data(), w.data(), dx.data(), idx / g.in_channels,
                              idx % g.in_channels);
  }
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  const auto pairs = static_cast<std::int64_t>(g.out_channels * g.in_channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < pairs; ++p) {
    const auto idx = static_cast<std::size_t>(p);
    conv_backward_weight_pair(g, x.data(), dy.data(), dw.data(), idx / g.in_channels,
                              idx % g.in_channels);
  }
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {
bool use_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kMinParallelWork && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}
}  // namespace

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c,
          bool accumulate) {
  if (use_parallel(s.m * s.n * s.k)) {
    parallel::gemm(s, a, b, c, accumulate);
  } else {
    serial::gemm(s, a, b, c, accumulate);
  }
}

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  if (use_parallel(g.output_size() * g.in_channels * g.kernel_h * g.kernel_w)) {
    parallel::conv2d_forward(g, x, w, y);
  } else {
    serial::conv2d_forward(g, x, w, y);
  }
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  if (use_parallel(g.output_size() * g.in_channels * g.kernel_h * g.kernel_w)) {
    parallel::conv2d_backward_input(g, dy, w, dx);
  } else {
    serial::conv2d_backward_input(g, dy, w, dx);
  }
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  if (use_parallel(g.output_size() * g.in_channels * g.kernel_h * g.kernel_w)) {
    parallel::conv2d_backward_weight(g, x, dy, dw);
  } else {
    serial::conv2d_backward_weight(g, x, dy, dw);
  }
}

#define FCFL_INSTANTIATE(T)                                                                       \
  template void serial::gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>,         \
                                std::span<T>, bool);                                              \
  template void parallel::gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>,       \
                                  std::span<T>, bool);                                            \
  template void gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>, std::span<T>,   \
                        bool);                                                                    \
  template void serial::conv2d_forward<T>(const Conv2dGeometry&, std::span<const T>,              \
                                          std::span<const T>, std::span<T>);                      \
  template void parallel::conv2d_forward<T>(const Conv2dGeometry&, std::span<const T>,            \
                                            std::span<const T>, std::span<T>);                    \
  template void conv2d_forward<T>(const Conv2dGeometry&, std::span<const T>, std::span<const T>,  \
                                  std::span<T>);                                                  \
  template void serial::conv2d_backward_input<T>(const Conv2dGeometry&, std::span<const T>,       \
                                                 std::span<const T>, std::span<T>);               \
  template void parallel::conv2d_backward_input<T>(const Conv2dGeometry&, std::span<const T>,     \
                                                   std::span<const T>, std::span<T>);             \
  template void conv2d_backward_input<T>(const Conv2dGeometry&, std::span<const T>,               \
                                         std::span<const T>, std::span<T>);                       \
  template void serial::conv2d_backward_weight<T>(const Conv2dGeometry&, std::span<const T>,      \
                                                  std::span<const T>, std::span<T>);              \
  template void parallel::conv2d_backward_weight<T>(const Conv2dGeometry&, std::span<const T>,    \
                                                    std::span<const T>, std::span<T>);            \
  template void conv2d_backward_weight<T>(const Conv2dGeometry&, std::span<const T>,              \
                                          std::span<const T>, std::span<T>);

FCFL_INSTANTIATE(float)
FCFL_INSTANTIATE(double)

#undef FCFL_INSTANTIATE

}  // namespace fcfl::kernels
