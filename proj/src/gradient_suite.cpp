#include "fcfl/gradient_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>

#include "fcfl/fusion.hpp"
#include "fcfl/gradcheck.hpp"
#include "fcfl/head.hpp"
#include "fcfl/nrca_autoencoder.hpp"
#include "fcfl/ops.hpp"

namespace fcfl {

namespace {

using T = double;
using Fn = std::function<Tensor<T>()>;

// Finite-difference step per op. Ops that are linear (or quadratic) in any
// single coordinate have no truncation error, so a large step minimises
// roundoff; max_pool2d's step stays below half the spacing between values;
// the rest balance truncation against roundoff.
double step_for(const std::string& op) {
  if (op == "matmul" || op == "conv2d" || op == "conv_transpose2d" || op == "linear" ||
      op == "mse_loss" || op == "patch_embed" || op == "resize_bilinear")
    return 1e-2;
  if (op == "max_pool2d") return 1e-3;
  if (op == "cross_fuse") return 1e-4;
  if (op == "attention") return 3e-5;
  return kGradCheckEpsilon;
}

class Suite {
 public:
  Suite(std::uint64_t seed, double tol, std::optional<double> eps) : rng_(seed), tol_(tol), eps_(eps) {}

  Tensor<T> rand(Shape s, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<T> t(std::move(s));
    for (auto& v : t.data()) v = d(rng_);
    return t;
  }

  // sum(f() * w) for a fixed random w, so every output element matters.
  Fn weighted(const std::function<Tensor<T>()>& f) {
    auto w = std::make_shared<Tensor<T>>();
    return [f, w, this]() {
      Tensor<T> y = f();
      if (!w->defined()) *w = rand(y.shape());
      return sum(mul(y, *w));
    };
  }

  void check(const std::string& op, const std::string& shape, const Fn& f,
             std::vector<Tensor<T>> inputs) {
    const double epsilon = eps_.value_or(step_for(op));
    {
      NoGradGuard ng;
      f();  // materialise any lazily drawn weighting before perturbing
    }
    const auto r = grad_check<T>(op, f, std::move(inputs), epsilon, tol_);
    char at[160];
    std::snprintf(at, sizeof(at), "input %zu #%zu analytic=%.12e numeric=%.12e", r.worst_input,
                  r.worst_index, r.worst_analytic, r.worst_numeric);
    report_.cases.push_back({op, shape, r.max_relative_error, r.pass, epsilon, at});
  }

  // Like check, but tensors in `zero_grad` must have an exactly-vanishing
  // gradient (relative error is undefined there) and are asserted |g| < 1e-12.
  void check_with_zero(const std::string& op, const std::string& shape, const Fn& f,
                       std::vector<Tensor<T>> inputs, std::vector<Tensor<T>> zero_grad) {
    check(op, shape, f, inputs);
    for (auto& t : zero_grad) t.set_requires_grad(true);
    for (auto& t : inputs) t.set_requires_grad(true);
    discard_tape<T>();
    backward(f());
    bool ok = true;
    for (auto& t : zero_grad) {
      if (t.has_grad())
        for (T g : t.grad()) ok = ok && std::abs(g) < 1e-12;
      t.zero_grad();
    }
    for (auto& t : inputs) t.zero_grad();
    report_.cases.back().pass = report_.cases.back().pass && ok;
  }

  std::mt19937_64& rng() { return rng_; }
  GradSuiteReport take() { return std::move(report_); }

 private:
  std::mt19937_64 rng_;
  double tol_;
  std::optional<double> eps_;
  GradSuiteReport report_;
};

template <typename P>
std::vector<Tensor<T>> collect_params(const P& params, std::vector<Tensor<T>> extra = {},
                                      std::vector<Tensor<T>>* key_biases = nullptr) {
  ParamList<T> list;
  params.collect("", list);
  for (auto& p : list) {
    const bool kb = p.name.size() >= 11 && p.name.compare(p.name.size() - 11, 11, "attn.k.bias") == 0;
    if (kb && key_biases)
      key_biases->push_back(p.tensor);
    else
      extra.push_back(p.tensor);
  }
  return extra;
}

void matmul_cases(Suite& s) {
  for (auto [m, k, n] : std::vector<std::array<std::size_t, 3>>{{3, 4, 2}, {1, 5, 3}, {4, 4, 4}, {2, 7, 1}, {6, 3, 5}}) {
    auto a = s.rand({m, k}), b = s.rand({k, n});
    s.check("matmul", shape_str({m, k}) + "x" + shape_str({k, n}),
            s.weighted([=] { return matmul(a, b); }), {a, b});
  }
}

void conv_cases(Suite& s) {
  struct Case { Shape x, k; std::size_t stride, pad; };
  const std::vector<Case> fwd{{{2, 3, 8, 8}, {4, 3, 3, 3}, 1, 0}, {{1, 2, 6, 5}, {3, 2, 3, 3}, 1, 1},
                              {{2, 1, 7, 7}, {2, 1, 3, 3}, 2, 1}, {{1, 3, 4, 4}, {2, 3, 2, 2}, 2, 0},
                              {{1, 2, 5, 6}, {1, 2, 1, 3}, 1, 0}};
  for (const auto& c : fwd) {
    auto x = s.rand(c.x), k = s.rand(c.k), b = s.rand({c.k[0]});
    s.check("conv2d", shape_str(c.x) + " k" + shape_str(c.k) + " s" + std::to_string(c.stride) + " p" + std::to_string(c.pad),
            s.weighted([=] { return conv2d(x, k, b, c.stride, c.pad); }), {x, k, b});
  }
  const std::vector<Case> tr{{{1, 2, 3, 3}, {2, 3, 2, 2}, 2, 0}, {{2, 1, 4, 4}, {1, 2, 3, 3}, 1, 1},
                             {{1, 3, 2, 3}, {3, 1, 3, 3}, 2, 1}, {{1, 2, 4, 4}, {2, 2, 2, 2}, 1, 0},
                             {{2, 2, 3, 2}, {2, 1, 4, 4}, 2, 1}};
  for (const auto& c : tr) {
    auto x = s.rand(c.x), k = s.rand(c.k), b = s.rand({c.k[1]});
    s.check("conv_transpose2d", shape_str(c.x) + " k" + shape_str(c.k) + " s" + std::to_string(c.stride) + " p" + std::to_string(c.pad),
            s.weighted([=] { return conv_transpose2d(x, k, b, c.stride, c.pad); }), {x, k, b});
  }
}

void pool_cases(Suite& s) {
  // Distinct values 0.01 apart keep every window's maximum away from ties.
  for (const Shape& shape : std::vector<Shape>{{1, 1, 4, 4}, {2, 3, 4, 4}, {1, 2, 6, 6}, {1, 1, 8, 6}, {2, 2, 2, 4}}) {
    Tensor<T> x(shape);
    std::vector<T> vals(x.numel());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<T>(i);
    std::shuffle(vals.begin(), vals.end(), s.rng());
    std::copy(vals.begin(), vals.end(), x.data().begin());
    s.check("max_pool2d", shape_str(shape), s.weighted([=] { return max_pool2d(x, 2, 2); }), {x});
  }
}

void elementwise_cases(Suite& s) {
  for (const Shape& shape : std::vector<Shape>{{3, 8}, {2, 3, 5}, {1, 4}, {4, 2, 6}, {6, 3}}) {
    auto x = s.rand(shape), g = s.rand({shape.back()}, 0.5, 1.5), b = s.rand({shape.back()});
    s.check("layer_norm", shape_str(shape), s.weighted([=] { return layer_norm(x, g, b); }), {x, g, b});
  }
  for (const Shape& shape : std::vector<Shape>{{1, 2, 3, 3}, {2, 3, 2, 4}, {1, 1, 4, 4}, {2, 2, 2, 2}, {1, 4, 3, 2}}) {
    auto x = s.rand(shape), g = s.rand({shape[1]}, 0.5, 1.5), b = s.rand({shape[1]});
    s.check("channel_norm", shape_str(shape), s.weighted([=] { return channel_norm(x, g, b); }), {x, g, b});
  }
  for (const Shape& shape : std::vector<Shape>{{4}, {3, 5}, {2, 2, 3}, {1, 9}, {5, 2}}) {
    auto x = s.rand(shape, -2, 2);
    s.check("softmax", shape_str(shape), s.weighted([=] { return softmax(x); }), {x});
  }
  for (const Shape& shape : std::vector<Shape>{{5}, {3, 4}, {2, 2, 2}, {10}, {1, 6}}) {
    auto x = s.rand(shape, -3, 3);
    s.check("gelu", shape_str(shape), s.weighted([=] { return gelu(x); }), {x});
  }
  for (auto [n, i, o] : std::vector<std::array<std::size_t, 3>>{{3, 4, 2}, {1, 1, 5}, {2, 6, 3}, {5, 2, 2}, {4, 3, 7}}) {
    auto x = s.rand({n, i}), w = s.rand({i, o}), b = s.rand({o});
    s.check("linear", shape_str({n, i}) + "->" + std::to_string(o), s.weighted([=] { return linear(x, w, b); }), {x, w, b});
  }
  for (const Shape& shape : std::vector<Shape>{{4}, {2, 3}, {1, 2, 2, 2}, {3, 1, 4}, {6}}) {
    auto a = s.rand(shape), b = s.rand(shape);
    s.check("mse_loss", shape_str(shape), [=] { return mse_loss(a, b); }, {a, b});
  }
  struct Rs { Shape x; std::size_t h, w; };
  for (const auto& c : std::vector<Rs>{{{1, 2, 5, 7}, 8, 3}, {{1, 1, 4, 4}, 6, 6}, {{2, 1, 6, 6}, 4, 4}, {{1, 3, 3, 5}, 5, 3}, {{1, 1, 2, 2}, 5, 7}}) {
    auto x = s.rand(c.x);
    s.check("resize_bilinear", shape_str(c.x) + "->" + std::to_string(c.h) + "x" + std::to_string(c.w),
            s.weighted([=] { return resize_bilinear(x, c.h, c.w); }), {x});
  }
}

void attention_cases(Suite& s) {
  struct Case { std::size_t b, lq, lk, c, heads; };
  for (const auto& c : std::vector<Case>{{1, 3, 4, 4, 1}, {2, 1, 5, 6, 2}, {1, 4, 4, 6, 3}, {2, 2, 3, 4, 2}, {1, 1, 7, 3, 1}}) {
    auto q = s.rand({c.b, c.lq, c.c}), k = s.rand({c.b, c.lk, c.c}), v = s.rand({c.b, c.lk, c.c});
    s.check("attention",
            "q" + shape_str({c.b, c.lq, c.c}) + " kv" + shape_str({c.b, c.lk, c.c}) + " h" + std::to_string(c.heads),
            s.weighted([=] { return multi_head_attention(q, k, v, c.heads).output; }), {q, k, v});
  }
  // The key bias of a self-attention block has a true zero gradient.
  struct Enc { std::size_t b, l, c, heads; };
  for (const auto& c : std::vector<Enc>{{2, 5, 8, 2}, {1, 3, 4, 1}, {1, 6, 6, 3}, {2, 2, 4, 2}, {1, 4, 6, 2}}) {
    Rng prng(s.rng()());
    auto params = EncoderBlockParams<T>::init(c.c, c.heads, prng);
    BranchState<T> state{s.rand({c.b, c.l, c.c})};
    std::vector<Tensor<T>> key_biases;
    auto inputs = collect_params(params, {state.tokens}, &key_biases);
    s.check_with_zero("encoder_block", shape_str({c.b, c.l, c.c}) + " h" + std::to_string(c.heads),
                      s.weighted([=] { return encoder_block(state, params).tokens; }), inputs, key_biases);
  }
}

void fusion_cases(Suite& s) {
  struct Case { std::size_t b, l_own, c_own, l_other, c_other, heads; };
  for (const auto& c : std::vector<Case>{{2, 4, 6, 5, 4, 2}, {1, 3, 4, 4, 6, 3}, {1, 5, 4, 2, 2, 1}, {2, 2, 6, 3, 6, 2}, {1, 4, 3, 6, 4, 2}}) {
    Rng prng(s.rng()());
    auto params = CrossFusionParams<T>::init(c.c_own, c.c_other, c.heads, prng);
    BranchState<T> own{s.rand({c.b, c.l_own, c.c_own})};
    BranchState<T> other{s.rand({c.b, c.l_other, c.c_other})};
    s.check("cross_fuse",
            "own" + shape_str(own.tokens.shape()) + " other" + shape_str(other.tokens.shape()) + " h" + std::to_string(c.heads),
            s.weighted([=] { return cross_fuse(own, other, params).state.tokens; }),
            collect_params(params, {own.tokens, other.tokens}));
  }
  struct Pe { std::size_t b, ch, size, patch, dim; };
  for (const auto& c : std::vector<Pe>{{1, 1, 8, 4, 3}, {2, 2, 6, 3, 4}, {1, 3, 4, 2, 2}, {1, 1, 6, 6, 5}, {2, 1, 4, 2, 3}}) {
    Rng prng(s.rng()());
    BranchConfig cfg{c.patch, c.dim, c.size, 1, 1};
    auto params = PatchEmbedParams<T>::init(cfg, c.ch, prng);
    auto img = s.rand({c.b, c.ch, c.size, c.size});
    s.check("patch_embed", shape_str(img.shape()) + " patch" + std::to_string(c.patch),
            s.weighted([=] { return patch_embed(img, cfg, params).tokens; }), collect_params(params, {img}));
  }
}

void nrca_cases(Suite& s) {
  struct Case { Shape shape; std::size_t channels; };
  for (const auto& c : std::vector<Case>{{{1, 1, 8, 8}, 3}, {{2, 1, 8, 8}, 3}, {{1, 2, 8, 12}, 3}, {{1, 1, 12, 8}, 2}, {{1, 3, 8, 8}, 4}}) {
    NrcaConfig cfg;
    cfg.image_channels = c.shape[1];
    cfg.encoder_channels = {c.channels};
    cfg.latent_channels = 2;
    Rng prng(s.rng()());
    auto params = NrcaParams<T>::init(cfg, prng);
    auto x = s.rand(c.shape);
    s.check("nrca", shape_str(c.shape) + " enc{" + std::to_string(c.channels) + "}",
            s.weighted([=] { return nrca_forward(x, params, cfg); }), collect_params(params, {x}));
  }
}

void head_cases(Suite& s) {
  struct Case { HeadKind kind; std::size_t b, cs, cl, hidden; };
  for (const auto& c : std::vector<Case>{{HeadKind::residual, 3, 4, 6, 0}, {HeadKind::mlp, 2, 4, 6, 5},
                                         {HeadKind::residual, 1, 2, 3, 4}, {HeadKind::mlp, 3, 3, 3, 0},
                                         {HeadKind::residual, 2, 3, 5, 6}}) {
    HeadConfig cfg{c.kind, c.hidden, 3};
    Rng prng(s.rng()());
    auto params = HeadParams<T>::init(cfg, c.cs + c.cl, prng);
    auto xs = s.rand({c.b, 1, c.cs}), xl = s.rand({c.b, 1, c.cl});
    s.check("head", to_string(c.kind) + " " + shape_str({c.b, c.cs + c.cl}),
            s.weighted([=] { return head_forward(xs, xl, cfg, params); }), collect_params(params, {xs, xl}));
  }
  for (auto [b, k] : std::vector<std::array<std::size_t, 2>>{{4, 3}, {1, 3}, {6, 2}, {3, 5}, {2, 4}}) {
    auto logits = s.rand({b, k}, -2, 2);
    std::vector<std::size_t> labels(b);
    for (std::size_t i = 0; i < b; ++i) labels[i] = std::uniform_int_distribution<std::size_t>(0, k - 1)(s.rng());
    s.check("cross_entropy", shape_str({b, k}), [=] { return cross_entropy(logits, labels).loss; }, {logits});
  }
}

}  // namespace

bool GradSuiteReport::pass() const {
  return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.pass; });
}

std::vector<std::string> GradSuiteReport::ops() const {
  std::vector<std::string> out;
  for (const auto& c : cases)
    if (std::find(out.begin(), out.end(), c.op) == out.end()) out.push_back(c.op);
  return out;
}

std::size_t GradSuiteReport::case_count(const std::string& op) const {
  return static_cast<std::size_t>(
      std::count_if(cases.begin(), cases.end(), [&](const auto& c) { return c.op == op; }));
}

double GradSuiteReport::worst_error(const std::string& op) const {
  double w = 0.0;
  for (const auto& c : cases)
    if (c.op == op) w = std::max(w, c.max_relative_error);
  return w;
}

GradSuiteReport run_gradient_suite(std::uint64_t seed, double tolerance,
                                   std::optional<double> epsilon) {
  const auto t0 = std::chrono::steady_clock::now();
  Suite s(seed, tolerance, epsilon);
  matmul_cases(s);
  conv_cases(s);
  pool_cases(s);
  elementwise_cases(s);
  attention_cases(s);
  fusion_cases(s);
  nrca_cases(s);
  head_cases(s);
  GradSuiteReport r = s.take();
  r.tolerance = tolerance;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace fcfl
