#include "fcfl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fcfl/kernels.hpp"

namespace fcfl {

namespace {

template <typename T>
using Impl = std::shared_ptr<TensorStorage<T>>;

// Marks `out` as part of the graph and records `rule`, which runs only when
// the output actually received a gradient.
template <typename T, typename Rule>
void record(const char* name, Tensor<T>& out, Rule rule) {
  out.set_requires_grad(true);
  Impl<T> oi = out.impl();
  Tape<T>::current().record(name, [oi, rule = std::move(rule)]() {
    if (oi->grad.empty()) return;
    rule(oi->grad);
  });
}

template <typename T>
bool wants(const Impl<T>& p) {
  return p && p->requires_grad;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

// True if `b` (leading 1s dropped) is a trailing suffix of `a`.
bool broadcasts_into(const Shape& a, const Shape& b) {
  std::size_t lead = 0;
  while (lead < b.size() && b[lead] == 1) ++lead;
  const std::size_t tail = b.size() - lead;
  if (tail > a.size()) return false;
  return std::equal(b.begin() + static_cast<std::ptrdiff_t>(lead), b.end(),
                    a.end() - static_cast<std::ptrdiff_t>(tail));
}

thread_local std::uint64_t g_attention_mults = 0;

}  // namespace

std::uint64_t attention_multiply_count() { return g_attention_mults; }
void reset_attention_multiply_count() { g_attention_mults = 0; }

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  require(same || broadcasts_into(a.shape(), b.shape()),
          "add: cannot broadcast " + shape_str(b.shape()) + " into " + shape_str(a.shape()));
  const std::size_t n = a.numel(), nb = b.numel();
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = ad[i] + bd[i % nb];
  if (tracks_grad<T>({&a, &b})) {
    record<T>("add", out, [ai = a.impl(), bi = b.impl(), n, nb](const std::vector<T>& g) {
      if (wants(ai)) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (wants(bi)) {
        auto& gb = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.numel();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  if (tracks_grad<T>({&a, &b})) {
    record<T>("sub", out, [ai = a.impl(), bi = b.impl(), n](const std::vector<T>& g) {
      if (wants(ai)) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (wants(bi)) {
        auto& gb = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.numel();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (tracks_grad<T>({&a, &b})) {
    record<T>("mul", out, [ai = a.impl(), bi = b.impl(), n](const std::vector<T>& g) {
      if (wants(ai)) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bi->data[i];
      }
      if (wants(bi)) {
        auto& gb = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * ai->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  const std::size_t n = a.numel();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * factor;
  if (tracks_grad<T>({&a})) {
    record<T>("scale", out, [ai = a.impl(), n, factor](const std::vector<T>& g) {
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  kernels::gemm<T>({m, n, k, false, false}, a.data(), b.data(), out.data(), false);
  if (tracks_grad<T>({&a, &b})) {
    record<T>("matmul", out, [ai = a.impl(), bi = b.impl(), m, k, n](const std::vector<T>& g) {
      if (wants(ai)) {
        kernels::gemm<T>({m, k, n, false, true}, g, bi->data, ai->grad_buffer(), true);
      }
      if (wants(bi)) {
        kernels::gemm<T>({k, n, m, true, false}, ai->data, g, bi->grad_buffer(), true);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          "bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor<T> out(Shape{batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm<T>({m, n, k, false, false}, a.data().subspan(i * m * k, m * k),
                     b.data().subspan(i * k * n, k * n), out.data().subspan(i * m * n, m * n),
                     false);
  }
  if (tracks_grad<T>({&a, &b})) {
    record<T>("bmm", out,
              [ai = a.impl(), bi = b.impl(), batch, m, k, n](const std::vector<T>& gv) {
                std::span<const T> g(gv);
                for (std::size_t i = 0; i < batch; ++i) {
                  auto gi = g.subspan(i * m * n, m * n);
                  std::span<const T> ad(ai->data), bd(bi->data);
                  if (wants(ai)) {
                    std::span<T> ga(ai->grad_buffer());
                    kernels::gemm<T>({m, k, n, false, true}, gi, bd.subspan(i * k * n, k * n),
                                     ga.subspan(i * m * k, m * k), true);
                  }
                  if (wants(bi)) {
                    std::span<T> gb(bi->grad_buffer());
                    kernels::gemm<T>({k, n, m, true, false}, ad.subspan(i * m * k, m * k), gi,
                                     gb.subspan(i * k * n, k * n), true);
                  }
                }
              });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.rank() >= 1 && weight.rank() == 2 && x.shape().back() == weight.dim(0),
          "linear: input " + shape_str(x.shape()) + " does not match weight " +
              shape_str(weight.shape()));
  const std::size_t in = weight.dim(0), outd = weight.dim(1);
  require(!bias.defined() || (bias.rank() == 1 && bias.dim(0) == outd),
          "linear: bias " + (bias.defined() ? shape_str(bias.shape()) : std::string()) +
              " does not match output width " + std::to_string(outd));
  const std::size_t rows = x.numel() / in;
  Shape oshape = x.shape();
  oshape.back() = outd;
  Tensor<T> out(oshape);
  kernels::gemm<T>({rows, outd, in, false, false}, x.data(), weight.data(), out.data(), false);
  if (bias.defined()) {
    auto o = out.data();
    auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outd; ++j) o[r * outd + j] += bd[j];
  }
  if (tracks_grad<T>({&x, &weight, &bias})) {
    Impl<T> bimpl = bias.defined() ? bias.impl() : nullptr;
    record<T>("linear", out,
              [xi = x.impl(), wi = weight.impl(), bimpl, rows, in,
               outd](const std::vector<T>& g) {
                if (wants(xi)) {
                  kernels::gemm<T>({rows, in, outd, false, true}, g, wi->data, xi->grad_buffer(),
                                   true);
                }
                if (wants(wi)) {
                  kernels::gemm<T>({in, outd, rows, true, false}, xi->data, g, wi->grad_buffer(),
                                   true);
                }
                if (wants(bimpl)) {
                  auto& gb = bimpl->grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
                }
              });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (tracks_grad<T>({&a})) {
    record<T>("reshape", out, [ai = a.impl()](const std::vector<T>& g) {
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  require(perm.size() == r, "permute: permutation length does not match rank of " +
                                shape_str(a.shape()));
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    require(p < r && !seen[p], "permute: invalid permutation");
    seen[p] = true;
  }
  Shape oshape(r);
  for (std::size_t i = 0; i < r; ++i) oshape[i] = a.dim(perm[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.dim(i);
  // For each output element, the flat input index it reads.
  const std::size_t n = a.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_strides[perm[i]];
    src[o] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < oshape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor<T> out(oshape);
  for (std::size_t o = 0; o < n; ++o) out[o] = a[src[o]];
  if (tracks_grad<T>({&a})) {
    record<T>("permute", out, [ai = a.impl(), src = std::move(src)](const std::vector<T>& g) {
      auto& ga = ai->grad_buffer();
      for (std::size_t o = 0; o < g.size(); ++o) ga[src[o]] += g[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat: axis out of range for " + shape_str(first));
  Shape oshape = first;
  oshape[axis] = 0;
  for (const auto& p : parts) {
    require(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis) {
        require(p.dim(i) == first[i], "concat: shape mismatch " + shape_str(p.shape()) +
                                          " vs " + shape_str(first));
      }
    }
    oshape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t orow = oshape[axis] * inner;
  Tensor<T> out(oshape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t prow = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * prow), prow,
                  out.data().begin() + static_cast<std::ptrdiff_t>(o * orow + offset));
    offsets.push_back(offset);
    offset += prow;
  }
  bool track = false;
  for (const auto& p : parts) track = track || tracks_grad<T>({&p});
  if (track) {
    std::vector<Impl<T>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    record<T>("concat", out,
              [impls = std::move(impls), offsets = std::move(offsets), outer, orow,
               inner, axis](const std::vector<T>& g) {
                for (std::size_t k = 0; k < impls.size(); ++k) {
                  if (!wants(impls[k])) continue;
                  const std::size_t prow = impls[k]->shape[axis] * inner;
                  auto& gp = impls[k]->grad_buffer();
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < prow; ++j)
                      gp[o * prow + j] += g[o * orow + offsets[k] + j];
                }
              });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require(axis < a.rank() && begin < end && end <= a.dim(axis),
          "slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
              ") invalid for axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t arow = a.dim(axis) * inner;
  const std::size_t orow = (end - begin) * inner;
  const std::size_t start = begin * inner;
  Shape oshape = a.shape();
  oshape[axis] = end - begin;
  Tensor<T> out(oshape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(o * arow + start), orow,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * orow));
  if (tracks_grad<T>({&a})) {
    record<T>("slice", out, [ai = a.impl(), outer, arow, orow, start](const std::vector<T>& g) {
      auto& ga = ai->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < orow; ++j) ga[o * arow + start + j] += g[o * orow + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> expand_batch(const Tensor<T>& a, std::size_t count) {
  require(a.rank() >= 1 && a.dim(0) == 1 && count >= 1,
          "expand_batch: leading dim of " + shape_str(a.shape()) + " must be 1");
  Shape oshape = a.shape();
  oshape[0] = count;
  const std::size_t n = a.numel();
  Tensor<T> out(oshape);
  for (std::size_t c = 0; c < count; ++c)
    std::copy(a.data().begin(), a.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(c * n));
  if (tracks_grad<T>({&a})) {
    record<T>("expand_batch", out, [ai = a.impl(), n, count](const std::vector<T>& g) {
      auto& ga = ai->grad_buffer();
      for (std::size_t c = 0; c < count; ++c)
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[c * n + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tracks_grad<T>({&a})) {
    record<T>("sum", out, [ai = a.impl()](const std::vector<T>& g) {
      auto& ga = ai->grad_buffer();
      for (auto& v : ga) v += g[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  Tensor<T> out = Tensor<T>::scalar(acc * inv);
  if (tracks_grad<T>({&a})) {
    record<T>("mean", out, [ai = a.impl(), inv](const std::vector<T>& g) {
      auto& ga = ai->grad_buffer();
      for (auto& v : ga) v += g[0] * inv;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "mse_loss: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.numel();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  const T inv = T(1) / static_cast<T>(n);
  Tensor<T> out = Tensor<T>::scalar(acc * inv);
  if (tracks_grad<T>({&a, &b})) {
    record<T>("mse_loss", out, [ai = a.impl(), bi = b.impl(), n, inv](const std::vector<T>& g) {
      const T c = T(2) * inv * g[0];
      if (wants(ai)) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) ga[i] += c * (ai->data[i] - bi->data[i]);
      }
      if (wants(bi)) {
        auto& gb = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) gb[i] -= c * (ai->data[i] - bi->data[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  require(a.rank() >= 1, "softmax: scalar input");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.numel() / width;
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * width;
    T* y = out.data().data() + r * width;
    const T mx = *std::max_element(x, x + width);
    T z = T(0);
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < width; ++j) y[j] /= z;
  }
  if (tracks_grad<T>({&a})) {
    record<T>("softmax", out,
              [ai = a.impl(), oi = out.impl(), rows, width](const std::vector<T>& g) {
                auto& ga = ai->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                  const T* y = oi->data.data() + r * width;
                  const T* gr = g.data() + r * width;
                  T dot = T(0);
                  for (std::size_t j = 0; j < width; ++j) dot += gr[j] * y[j];
                  for (std::size_t j = 0; j < width; ++j) ga[r * width + j] += y[j] * (gr[j] - dot);
                }
              });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = static_cast<T>(0.044715);
  const std::size_t n = a.numel();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T x = a[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(kC * (x + kA * x * x * x)));
  }
  if (tracks_grad<T>({&a})) {
    record<T>("gelu", out, [ai = a.impl(), n](const std::vector<T>& g) {
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const T x = ai->data[i];
        const T t = std::tanh(kC * (x + kA * x * x * x));
        const T d = T(0.5) * (T(1) + t) +
                    T(0.5) * x * (T(1) - t * t) * kC * (T(1) + T(3) * kA * x * x);
        ga[i] += g[i] * d;
      }
    });
  }
  return out;
}

namespace {

// Shared normalization core: `groups` groups of `size` contiguous elements;
// the affine parameter for element j of group r is param_index(r, j).
template <typename T, typename ParamIndex>
Tensor<T> normalize_groups(const char* name, const Tensor<T>& a, const Tensor<T>& gamma,
                           const Tensor<T>& beta, T eps, std::size_t groups, std::size_t size,
                           ParamIndex param_index) {
  Tensor<T> out(a.shape());
  std::vector<T> xhat(a.numel());
  std::vector<T> rstd(groups);
  for (std::size_t r = 0; r < groups; ++r) {
    const T* x = a.data().data() + r * size;
    T mu = T(0);
    for (std::size_t j = 0; j < size; ++j) mu += x[j];
    mu /= static_cast<T>(size);
    T var = T(0);
    for (std::size_t j = 0; j < size; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<T>(size);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < size; ++j) {
      const std::size_t i = r * size + j;
      xhat[i] = (x[j] - mu) * rstd[r];
      const std::size_t p = param_index(r, j);
      out[i] = xhat[i] * gamma[p] + beta[p];
    }
  }
  if (tracks_grad<T>({&a, &gamma, &beta})) {
    record<T>(name, out,
              [ai = a.impl(), gi = gamma.impl(), bi = beta.impl(), xhat = std::move(xhat),
               rstd = std::move(rstd), groups, size, param_index](const std::vector<T>& g) {
                if (wants(gi) || wants(bi)) {
                  for (std::size_t r = 0; r < groups; ++r) {
                    for (std::size_t j = 0; j < size; ++j) {
                      const std::size_t i = r * size + j;
                      const std::size_t p = param_index(r, j);
                      if (wants(gi)) gi->grad_buffer()[p] += g[i] * xhat[i];
                      if (wants(bi)) bi->grad_buffer()[p] += g[i];
                    }
                  }
                }
                if (!wants(ai)) return;
                auto& ga = ai->grad_buffer();
                const T inv_n = T(1) / static_cast<T>(size);
                for (std::size_t r = 0; r < groups; ++r) {
                  T s1 = T(0), s2 = T(0);
                  for (std::size_t j = 0; j < size; ++j) {
                    const std::size_t i = r * size + j;
                    const T dxh = g[i] * gi->data[param_index(r, j)];
                    s1 += dxh;
                    s2 += dxh * xhat[i];
                  }
                  for (std::size_t j = 0; j < size; ++j) {
                    const std::size_t i = r * size + j;
                    const T dxh = g[i] * gi->data[param_index(r, j)];
                    ga[i] += rstd[r] * (dxh - inv_n * s1 - xhat[i] * inv_n * s2);
                  }
                }
              });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(a.rank() >= 1, "layer_norm: scalar input");
  const std::size_t width = a.shape().back();
  require(gamma.numel() == width && beta.numel() == width,
          "layer_norm: gamma/beta must have " + std::to_string(width) + " elements");
  return normalize_groups<T>("layer_norm", a, gamma, beta, eps, a.numel() / width, width,
                             [](std::size_t, std::size_t j) { return j; });
}

template <typename T>
Tensor<T> channel_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(a.rank() == 4, "channel_norm: expected NCHW input, got " + shape_str(a.shape()));
  const std::size_t channels = a.dim(1);
  require(gamma.numel() == channels && beta.numel() == channels,
          "channel_norm: gamma/beta must have " + std::to_string(channels) + " elements");
  const std::size_t plane = a.dim(2) * a.dim(3);
  return normalize_groups<T>("channel_norm", a, gamma, beta, eps, a.dim(0) * channels, plane,
                             [channels](std::size_t r, std::size_t) { return r % channels; });
}

template <typename T>
Tensor<T> attention_scores(const Tensor<T>& q, const Tensor<T>& k, T scale_factor) {
  require(q.rank() == 3 && k.rank() == 3 && q.dim(0) == k.dim(0) && q.dim(2) == k.dim(2),
          "attention_scores: incompatible q " + shape_str(q.shape()) + " and k " +
              shape_str(k.shape()));
  const std::size_t n = q.dim(0), lq = q.dim(1), lk = k.dim(1), d = q.dim(2);
  Tensor<T> out(Shape{n, lq, lk});
  for (std::size_t b = 0; b < n; ++b) {
    auto ob = out.data().subspan(b * lq * lk, lq * lk);
    kernels::gemm<T>({lq, lk, d, false, true}, q.data().subspan(b * lq * d, lq * d),
                     k.data().subspan(b * lk * d, lk * d), ob, false);
    for (T& v : ob) v *= scale_factor;
  }
  g_attention_mults += static_cast<std::uint64_t>(n * lq * lk * (d + 1));
  if (tracks_grad<T>({&q, &k})) {
    record<T>("attention_scores", out,
              [qi = q.impl(), ki = k.impl(), n, lq, lk, d,
               scale_factor](const std::vector<T>& gv) {
                std::vector<T> gs(gv.size());
                for (std::size_t i = 0; i < gv.size(); ++i) gs[i] = gv[i] * scale_factor;
                std::span<const T> g(gs), qd(qi->data), kd(ki->data);
                for (std::size_t b = 0; b < n; ++b) {
                  auto gb = g.subspan(b * lq * lk, lq * lk);
                  if (wants(qi)) {
                    std::span<T> gq(qi->grad_buffer());
                    kernels::gemm<T>({lq, d, lk, false, false}, gb, kd.subspan(b * lk * d, lk * d),
                                     gq.subspan(b * lq * d, lq * d), true);
                  }
                  if (wants(ki)) {
                    std::span<T> gk(ki->grad_buffer());
                    kernels::gemm<T>({lk, d, lq, true, false}, gb, qd.subspan(b * lq * d, lq * d),
                                     gk.subspan(b * lk * d, lk * d), true);
                  }
                }
              });
  }
  return out;
}

namespace {

template <typename T>
void add_channel_bias(Tensor<T>& out, const Tensor<T>& bias) {
  const std::size_t batch = out.dim(0), ch = out.dim(1), plane = out.dim(2) * out.dim(3);
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < plane; ++i) o[(b * ch + c) * plane + i] += bias[c];
}

template <typename T>
void accumulate_channel_bias_grad(const Impl<T>& bias, const std::vector<T>& g, std::size_t batch,
                                  std::size_t ch, std::size_t plane) {
  auto& gb = bias->grad_buffer();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      T acc = T(0);
      for (std::size_t i = 0; i < plane; ++i) acc += g[(b * ch + c) * plane + i];
      gb[c] += acc;
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  require(input.rank() == 4 && kernel.rank() == 4 && input.dim(1) == kernel.dim(1),
          "conv2d: input " + shape_str(input.shape()) + " incompatible with kernel " +
              shape_str(kernel.shape()));
  require(stride >= 1, "conv2d: stride must be >= 1");
  kernels::Conv2dGeometry geo{input.dim(0), input.dim(1), kernel.dim(0), input.dim(2),
                              input.dim(3), kernel.dim(2), kernel.dim(3), stride, padding};
  require(geo.kernel_h <= geo.in_h + 2 * padding && geo.kernel_w <= geo.in_w + 2 * padding,
          "conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
              shape_str(input.shape()));
  require(!bias.defined() || bias.numel() == geo.out_channels, "conv2d: bias size mismatch");
  Tensor<T> out(Shape{geo.batch, geo.out_channels, geo.out_h(), geo.out_w()});
  kernels::conv2d_forward<T>(geo, input.data(), kernel.data(), out.data());
  if (bias.defined()) add_channel_bias(out, bias);
  if (tracks_grad<T>({&input, &kernel, &bias})) {
    Impl<T> bimpl = bias.defined() ? bias.impl() : nullptr;
    record<T>("conv2d", out,
              [xi = input.impl(), wi = kernel.impl(), bimpl, geo](const std::vector<T>& g) {
                if (wants(xi)) kernels::conv2d_backward_input<T>(geo, g, wi->data, xi->grad_buffer());
                if (wants(wi)) kernels::conv2d_backward_weight<T>(geo, xi->data, g, wi->grad_buffer());
                if (wants(bimpl))
                  accumulate_channel_bias_grad(bimpl, g, geo.batch, geo.out_channels,
                                               geo.out_h() * geo.out_w());
              });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           std::size_t stride, std::size_t padding) {
  require(input.rank() == 4 && kernel.rank() == 4 && input.dim(1) == kernel.dim(0),
          "conv_transpose2d: input " + shape_str(input.shape()) + " incompatible with kernel " +
              shape_str(kernel.shape()));
  require(stride >= 1, "conv_transpose2d: stride must be >= 1");
  const std::size_t h = input.dim(2), w = input.dim(3), kh = kernel.dim(2), kw = kernel.dim(3);
  const auto out_extent = [&](std::size_t n, std::size_t k) {
    return static_cast<std::ptrdiff_t>((n - 1) * stride + k) -
           static_cast<std::ptrdiff_t>(2 * padding);
  };
  require(out_extent(h, kh) > 0 && out_extent(w, kw) > 0,
          "conv_transpose2d: non-positive output size for input " + shape_str(input.shape()) +
              ", kernel " + shape_str(kernel.shape()) + ", padding " + std::to_string(padding));
  // As the input-adjoint of a conv2d mapping [B,Co,H'',W''] -> [B,Ci,H,W].
  kernels::Conv2dGeometry geo{input.dim(0),
                              kernel.dim(1),
                              kernel.dim(0),
                              static_cast<std::size_t>(out_extent(h, kh)),
                              static_cast<std::size_t>(out_extent(w, kw)),
                              kh,
                              kw,
                              stride,
                              padding};
  require(!bias.defined() || bias.numel() == geo.in_channels,
          "conv_transpose2d: bias size mismatch");
  Tensor<T> out(Shape{geo.batch, geo.in_channels, geo.in_h, geo.in_w});
  kernels::conv2d_backward_input<T>(geo, input.data(), kernel.data(), out.data());
  if (bias.defined()) add_channel_bias(out, bias);
  if (tracks_grad<T>({&input, &kernel, &bias})) {
    Impl<T> bimpl = bias.defined() ? bias.impl() : nullptr;
    record<T>("conv_transpose2d", out,
              [xi = input.impl(), wi = kernel.impl(), bimpl, geo](const std::vector<T>& g) {
                if (wants(xi)) {
                  std::vector<T> tmp(geo.output_size());
                  kernels::conv2d_forward<T>(geo, g, wi->data, tmp);
                  auto& gx = xi->grad_buffer();
                  for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                }
                if (wants(wi)) kernels::conv2d_backward_weight<T>(geo, g, xi->data, wi->grad_buffer());
                if (wants(bimpl))
                  accumulate_channel_bias_grad(bimpl, g, geo.batch, geo.in_channels,
                                               geo.in_h * geo.in_w);
              });
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  require(input.rank() == 4, "max_pool2d: expected NCHW input, got " + shape_str(input.shape()));
  require(window >= 1 && stride >= 1, "max_pool2d: window and stride must be >= 1");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  require(window <= h && window <= w, "max_pool2d: window " + std::to_string(window) +
                                          " exceeds input " + shape_str(input.shape()));
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor<T> out(Shape{input.dim(0), input.dim(1), oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* x = input.data().data() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (i * stride) * w + j * stride;
        for (std::size_t di = 0; di < window; ++di)
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = (i * stride + di) * w + j * stride + dj;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (p * oh + i) * ow + j;
        out[o] = x[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  if (tracks_grad<T>({&input})) {
    record<T>("max_pool2d", out, [xi = input.impl(), argmax = std::move(argmax)](
                                     const std::vector<T>& g) {
      auto& gx = xi->grad_buffer();
      for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  require(input.rank() == 4, "resize_bilinear: expected NCHW input, got " +
                                 shape_str(input.shape()));
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: empty output size");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  struct Tap {
    std::size_t lo, hi;
    T wlo, whi;
  };
  const auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in - 1);
      const double frac = src - static_cast<double>(lo);
      t[i] = {lo, hi, static_cast<T>(1.0 - frac), static_cast<T>(frac)};
    }
    return t;
  };
  auto ty = taps(h, out_h);
  auto tx = taps(w, out_w);
  Tensor<T> out(Shape{input.dim(0), input.dim(1), out_h, out_w});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* x = input.data().data() + p * h * w;
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& a = ty[i];
        const Tap& b = tx[j];
        out[(p * out_h + i) * out_w + j] =
            a.wlo * (b.wlo * x[a.lo * w + b.lo] + b.whi * x[a.lo * w + b.hi]) +
            a.whi * (b.wlo * x[a.hi * w + b.lo] + b.whi * x[a.hi * w + b.hi]);
      }
  }
  if (tracks_grad<T>({&input})) {
    record<T>("resize_bilinear", out,
              [xi = input.impl(), ty = std::move(ty), tx = std::move(tx), planes, h, w, out_h,
               out_w](const std::vector<T>& g) {
                auto& gx = xi->grad_buffer();
                for (std::size_t p = 0; p < planes; ++p) {
                  T* dx = gx.data() + p * h * w;
                  for (std::size_t i = 0; i < out_h; ++i)
                    for (std::size_t j = 0; j < out_w; ++j) {
                      const T go = g[(p * out_h + i) * out_w + j];
                      const Tap& a = ty[i];
                      const Tap& b = tx[j];
                      dx[a.lo * w + b.lo] += go * a.wlo * b.wlo;
                      dx[a.lo * w + b.hi] += go * a.wlo * b.whi;
                      dx[a.hi * w + b.lo] += go * a.whi * b.wlo;
                      dx[a.hi * w + b.hi] += go * a.whi * b.whi;
                    }
                }
              });
  }
  return out;
}

#define FCFL_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                        \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);              \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                      \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template Tensor<T> expand_batch<T>(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                   \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                  \
  template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                               \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                  \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> channel_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> attention_scores<T>(const Tensor<T>&, const Tensor<T>&, T);                 \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                               std::size_t, std::size_t);                                        \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                         std::size_t, std::size_t);                              \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> resize_bilinear<T>(const Tensor<T>&, std::size_t, std::size_t);

FCFL_INSTANTIATE_OPS(float)
FCFL_INSTANTIATE_OPS(double)

#undef FCFL_INSTANTIATE_OPS

}  // namespace fcfl
