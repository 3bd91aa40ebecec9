#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "fcfl/gradcheck.hpp"
#include "fcfl/model.hpp"
#include "fcfl/ops.hpp"
#include "test_util.hpp"

using namespace fcfl;
using fcfl::testing::random_tensor;

namespace {

constexpr double kEps = 1e-5;

template <typename T>
void zero_all(ParamList<T>& params) {
  for (auto& p : params)
    for (auto& v : p.tensor.data()) v = T(0);
}

BranchConfig tiny_branch(std::size_t patch, std::size_t dim, std::size_t heads) {
  return BranchConfig{patch, dim, 12, 1, heads};
}

// Adding a constant to every key shifts each score row uniformly, which the
// softmax ignores, so the key bias has an exactly-zero gradient. Relative
// error is meaningless there; those tensors are checked for |grad| ~ 0 instead.
bool is_key_bias(const std::string& name) {
  return name.size() >= 11 && name.compare(name.size() - 11, 11, "attn.k.bias") == 0;
}

template <typename F>
void check_with_key_bias(const char* name, F f, std::vector<Tensor<double>> inputs,
                         const ParamList<double>& list, double tol) {
  std::vector<Tensor<double>> key_biases;
  for (const auto& p : list) {
    if (is_key_bias(p.name))
      key_biases.push_back(p.tensor);
    else
      inputs.push_back(p.tensor);
  }
  auto res = grad_check<double>(name, f, inputs, kEps, tol);
  CHECK_MESSAGE(res.pass, name << " rel err " << res.max_relative_error);

  for (auto& t : key_biases) t.set_requires_grad(true);
  for (auto& t : inputs) t.set_requires_grad(true);
  discard_tape<double>();
  backward(f());
  for (auto& t : key_biases) {
    REQUIRE(t.has_grad());
    for (double g : t.grad()) CHECK(std::abs(g) < 1e-12);
  }
  for (auto& t : key_biases) t.zero_grad();
  for (auto& t : inputs) t.zero_grad();
}

}  // namespace

TEST_CASE("nrca shape contract for the default config") {
  NrcaConfig cfg;
  Rng rng(1);
  auto params = NrcaParams<float>::init(cfg, rng);
  std::mt19937_64 g(2);
  auto x = random_tensor<float>({2, 3, 64, 64}, g);
  NoGradGuard no_grad;
  auto y = nrca_forward(x, params, cfg);
  CHECK(y.shape() == x.shape());
}

TEST_CASE("nrca rejects incompatible spatial sizes") {
  NrcaConfig cfg;
  Rng rng(1);
  auto params = NrcaParams<float>::init(cfg, rng);
  try {
    nrca_forward(Tensor<float>({1, 3, 20, 20}), params, cfg);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("divisible by 8") != std::string::npos);
  }
  NrcaConfig empty;
  empty.encoder_channels.clear();
  CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("nrca parameter count is a function of the config") {
  NrcaConfig cfg;
  cfg.image_channels = 3;
  cfg.encoder_channels = {4, 8};
  cfg.latent_channels = 6;
  Rng a(1), b(99);
  const auto n1 = NrcaParams<double>::init(cfg, a).parameter_count();
  const auto n2 = NrcaParams<double>::init(cfg, b).parameter_count();
  // enc: (4*3*9+4+4+4) + (8*4*9+8+8+8); latent 6*8+6; dec: 6*4*4+4, 4*3*4+3
  const std::size_t expected = (108 + 12) + (288 + 24) + (48 + 6) + (96 + 4) + (48 + 3);
  CHECK(n1 == expected);
  CHECK(n2 == expected);
}

TEST_CASE("nrca gradcheck through the full autoencoder") {
  // One pooling level keeps the normalised planes at 4x4 or larger; with two
  // levels an 8x8 input normalises 2x2 planes whose curvature makes central
  // differences drift past 1e-6, so that depth is checked at 1e-4 below.
  struct Case {
    Shape shape;
    std::size_t channels;
  };
  const std::vector<Case> cases{{{1, 1, 8, 8}, 3}, {{2, 1, 8, 8}, 3}, {{1, 2, 8, 12}, 3},
                                {{1, 1, 12, 8}, 2}, {{1, 3, 8, 8}, 4}};
  std::uint64_t seed = 3;
  for (const auto& c : cases) {
    NrcaConfig cfg;
    cfg.image_channels = c.shape[1];
    cfg.encoder_channels = {c.channels};
    cfg.latent_channels = 2;
    Rng rng(seed);
    auto params = NrcaParams<double>::init(cfg, rng);
    std::mt19937_64 g(++seed);
    auto x = random_tensor(c.shape, g);
    auto w = random_tensor(c.shape, g);
    ParamList<double> list;
    params.collect("", list);
    std::vector<Tensor<double>> inputs{x};
    for (auto& p : list) inputs.push_back(p.tensor);
    auto res = grad_check<double>(
        "nrca", [&] { return sum(mul(nrca_forward(x, params, cfg), w)); }, inputs, kEps, 1e-6);
    CHECK_MESSAGE(res.pass, shape_str(c.shape) << " rel err " << res.max_relative_error);
  }

  NrcaConfig deep;
  deep.image_channels = 1;
  deep.encoder_channels = {2, 3};
  deep.latent_channels = 2;
  Rng rng(3);
  auto params = NrcaParams<double>::init(deep, rng);
  std::mt19937_64 g(4);
  auto x = random_tensor({1, 1, 8, 8}, g);
  auto w = random_tensor({1, 1, 8, 8}, g);
  ParamList<double> list;
  params.collect("", list);
  std::vector<Tensor<double>> inputs{x};
  for (auto& p : list) inputs.push_back(p.tensor);
  auto res = grad_check<double>(
      "nrca", [&] { return sum(mul(nrca_forward(x, params, deep), w)); }, inputs, kEps, 1e-4);
  CHECK_MESSAGE(res.pass, "two-level rel err " << res.max_relative_error);
}

TEST_CASE("reconstruction loss") {
  std::mt19937_64 g(5);
  auto clean = random_tensor({2, 3, 4, 4}, g);
  CHECK(reconstruction_loss(clean, clean).item() == 0.0);
  auto shifted = add(clean, Tensor<double>({1}, 1.0));
  CHECK(reconstruction_loss(shifted, clean).item() == doctest::Approx(1.0).epsilon(1e-14));

  auto other = random_tensor({2, 3, 4, 4}, g);
  double acc = 0.0;
  for (std::size_t i = 0; i < clean.numel(); ++i) acc += (other[i] - clean[i]) * (other[i] - clean[i]);
  CHECK(std::abs(reconstruction_loss(other, clean).item() - acc / 96.0) < 1e-10);
  CHECK_THROWS_AS(reconstruction_loss(other, Tensor<double>({2, 3, 4, 5})), DimensionError);
}

TEST_CASE("patch_embed token counts") {
  Rng rng(6);
  std::mt19937_64 g(7);
  auto img = random_tensor<float>({2, 3, 48, 48}, g);
  BranchConfig small{12, 32, 48, 1, 2};
  BranchConfig large{16, 64, 48, 1, 4};
  NoGradGuard no_grad;
  auto s = patch_embed(img, small, PatchEmbedParams<float>::init(small, 3, rng));
  auto l = patch_embed(img, large, PatchEmbedParams<float>::init(large, 3, rng));
  CHECK(s.tokens.shape() == Shape{2, 17, 32});
  CHECK(l.tokens.shape() == Shape{2, 10, 64});

  BranchConfig full{12, 192, 240, 2, 3};
  CHECK(full.num_patches() == 400);

  BranchConfig odd{12, 32, 50, 1, 2};
  CHECK_THROWS_AS(odd.validate(), ConfigError);
  auto bad = random_tensor<float>({1, 3, 50, 50}, g);
  CHECK_THROWS_AS(patch_embed(bad, small, PatchEmbedParams<float>::init(small, 3, rng)),
                  ConfigError);
}

TEST_CASE("encoder block preserves shape and attention rows are distributions") {
  Rng rng(8);
  auto params = EncoderBlockParams<float>::init(192, 3, rng);
  std::mt19937_64 g(9);
  BranchState<float> state{random_tensor<float>({2, 17, 192}, g)};
  Tensor<float> weights;
  NoGradGuard no_grad;
  auto out = encoder_block(state, params, &weights);
  CHECK(out.tokens.shape() == Shape{2, 17, 192});
  REQUIRE(weights.shape() == Shape{6, 17, 17});
  for (std::size_t r = 0; r < 6 * 17; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 17; ++j) s += weights[r * 17 + j];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("encoder block gradcheck") {
  Rng rng(10);
  auto params = EncoderBlockParams<double>::init(8, 2, rng);
  std::mt19937_64 g(11);
  BranchState<double> state{random_tensor({2, 5, 8}, g)};
  auto w = random_tensor({2, 5, 8}, g);
  ParamList<double> list;
  params.collect("", list);
  check_with_key_bias(
      "encoder_block", [&] { return sum(mul(encoder_block(state, params).tokens, w)); },
      {state.tokens}, list, 1e-6);
}

TEST_CASE("cross_fuse attention map has a single query row") {
  Rng rng(12);
  std::mt19937_64 g(13);
  BranchState<float> small{random_tensor<float>({2, 17, 192}, g)};
  BranchState<float> large{random_tensor<float>({2, 10, 384}, g)};
  auto p = CrossFusionParams<float>::init(192, 384, 6, rng);
  NoGradGuard no_grad;
  auto out = cross_fuse(small, large, p);
  CHECK(out.weights.shape() == Shape{2 * 6, 1, 10});
  CHECK(out.state.tokens.shape() == small.tokens.shape());
  // Own patch tokens pass through unchanged.
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 192; i < 17 * 192; ++i)
      CHECK(out.state.tokens[b * 17 * 192 + i] == small.tokens[b * 17 * 192 + i]);

  auto back = CrossFusionParams<float>::init(384, 192, 3, rng);
  auto rev = cross_fuse(large, small, back);
  CHECK(rev.weights.shape() == Shape{2 * 3, 1, 17});
}

TEST_CASE("cross_fuse with all-zero parameters leaves the CLS token unchanged") {
  Rng rng(14);
  std::mt19937_64 g(15);
  BranchState<float> own{random_tensor<float>({3, 5, 16}, g)};
  BranchState<float> other{random_tensor<float>({3, 7, 24}, g)};
  auto p = CrossFusionParams<float>::init(16, 24, 4, rng);
  ParamList<float> list;
  p.collect("", list);
  zero_all(list);
  auto out = cross_fuse(own, other, p).state;
  for (std::size_t i = 0; i < own.tokens.numel(); ++i) CHECK(out.tokens[i] == own.tokens[i]);
}

TEST_CASE("cross_fuse matches a dense single-query attention oracle") {
  Rng rng(16);
  std::mt19937_64 g(17);
  const std::size_t b = 2, lo = 4, lt = 6, co = 6, ct = 8, heads = 2, d = ct / heads;
  BranchState<double> own{random_tensor({b, lo, co}, g)};
  BranchState<double> other{random_tensor({b, lt, ct}, g)};
  auto p = CrossFusionParams<double>::init(co, ct, heads, rng);
  for (auto* t : {&p.f_bias, &p.g_bias})
    for (auto& v : t->data()) v = 0.1;
  auto out = cross_fuse(own, other, p).state;

  for (std::size_t s = 0; s < b; ++s) {
    const double* cls = own.tokens.data().data() + s * lo * co;
    // projected CLS
    std::vector<double> proj(ct);
    for (std::size_t j = 0; j < ct; ++j) {
      proj[j] = p.f_bias[j];
      for (std::size_t i = 0; i < co; ++i) proj[j] += cls[i] * p.f_weight[i * ct + j];
    }
    // z = [proj; other patches]
    std::vector<std::vector<double>> z{proj};
    for (std::size_t t = 1; t < lt; ++t) {
      const double* row = other.tokens.data().data() + (s * lt + t) * ct;
      z.emplace_back(row, row + ct);
    }
    auto apply = [&](const std::vector<double>& v, const Tensor<double>& w) {
      std::vector<double> r(ct, 0.0);
      for (std::size_t j = 0; j < ct; ++j)
        for (std::size_t i = 0; i < ct; ++i) r[j] += v[i] * w[i * ct + j];
      return r;
    };
    auto q = apply(proj, p.w_x);
    std::vector<std::vector<double>> keys, vals;
    for (auto& row : z) {
      keys.push_back(apply(row, p.w_y));
      vals.push_back(apply(row, p.w_z));
    }
    std::vector<double> y(ct, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> sc(z.size());
      for (std::size_t t = 0; t < z.size(); ++t) {
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += q[h * d + j] * keys[t][h * d + j];
        sc[t] = dot / std::sqrt(static_cast<double>(d));
      }
      const double mx = *std::max_element(sc.begin(), sc.end());
      double zsum = 0;
      for (auto& v : sc) zsum += (v = std::exp(v - mx));
      for (std::size_t t = 0; t < z.size(); ++t)
        for (std::size_t j = 0; j < d; ++j) y[h * d + j] += sc[t] / zsum * vals[t][h * d + j];
    }
    for (std::size_t i = 0; i < co; ++i) {
      double fused = p.g_bias[i] + cls[i];
      for (std::size_t j = 0; j < ct; ++j) fused += (proj[j] + y[j]) * p.g_weight[j * co + i];
      CHECK(std::abs(out.tokens[s * lo * co + i] - fused) < 1e-10);
    }
  }
}

TEST_CASE("cross_fuse is invariant to the order of the other branch's patches") {
  Rng rng(18);
  std::mt19937_64 g(19);
  BranchState<float> own{random_tensor<float>({2, 5, 16}, g)};
  BranchState<float> other{random_tensor<float>({2, 9, 32}, g)};
  auto p = CrossFusionParams<float>::init(16, 32, 4, rng);

  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 1);
  std::shuffle(perm.begin(), perm.end(), g);
  Tensor<float> shuffled = other.tokens.clone();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 1; t < 9; ++t)
      for (std::size_t c = 0; c < 32; ++c)
        shuffled[(b * 9 + t) * 32 + c] = other.tokens[(b * 9 + perm[t - 1]) * 32 + c];

  NoGradGuard no_grad;
  auto a = cross_fuse(own, other, p).state.cls();
  auto b = cross_fuse(own, BranchState<float>{shuffled}, p).state.cls();
  // Reordering the keys changes summation order, so compare to float rounding.
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
}

TEST_CASE("cross_fuse gradcheck") {
  Rng rng(20);
  std::mt19937_64 g(21);
  BranchState<double> own{random_tensor({2, 4, 6}, g)};
  BranchState<double> other{random_tensor({2, 5, 4}, g)};
  auto p = CrossFusionParams<double>::init(6, 4, 2, rng);
  auto w = random_tensor({2, 4, 6}, g);
  ParamList<double> list;
  p.collect("", list);
  std::vector<Tensor<double>> inputs{own.tokens, other.tokens};
  for (auto& e : list) inputs.push_back(e.tensor);
  auto res = grad_check<double>(
      "cross_fuse", [&] { return sum(mul(cross_fuse(own, other, p).state.tokens, w)); }, inputs,
      kEps, 1e-6);
  CHECK_MESSAGE(res.pass, "rel err " << res.max_relative_error);
}

TEST_CASE("fusion stack output shapes") {
  BranchConfig small{12, 192, 48, 1, 3};
  BranchConfig large{16, 384, 48, 1, 6};
  Rng rng(22);
  auto params = FusionParams<float>::init(small, large, {1}, 3, rng);
  std::mt19937_64 g(23);
  auto img = random_tensor<float>({2, 3, 48, 48}, g);
  NoGradGuard no_grad;
  auto [cs, cl] = fusion_stack_forward(patch_embed(img, small, params.small_embed),
                                       patch_embed(img, large, params.large_embed), params);
  CHECK(cs.shape() == Shape{2, 1, 192});
  CHECK(cl.shape() == Shape{2, 1, 384});
}

TEST_CASE("fusion stack gradcheck at toy dims") {
  BranchConfig small = tiny_branch(4, 4, 2);
  BranchConfig large = tiny_branch(6, 6, 2);
  Rng rng(24);
  auto params = FusionParams<double>::init(small, large, {2}, 1, rng);
  std::mt19937_64 g(25);
  // At their 0.02-scale init the CLS rows have near-zero variance and layer
  // norm is too curved for finite differences; use O(1) tokens instead.
  for (auto* t : {&params.small_embed.cls_token, &params.small_embed.pos_embed,
                  &params.large_embed.cls_token, &params.large_embed.pos_embed}) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : t->data()) v = u(g);
  }
  auto img = random_tensor({1, 1, 12, 12}, g);
  auto ws = random_tensor({1, 1, 4}, g);
  auto wl = random_tensor({1, 1, 6}, g);
  ParamList<double> list;
  params.collect("", list);
  check_with_key_bias(
      "fusion_stack",
      [&] {
        auto [cs, cl] = fusion_stack_forward(patch_embed(img, small, params.small_embed),
                                             patch_embed(img, large, params.large_embed), params);
        return add(sum(mul(cs, ws)), sum(mul(cl, wl)));
      },
      {img}, list, 1e-6);
}

TEST_CASE("attention op counts") {
  // One query, 10 keys, 3 heads of 64: 10 * 3 * (64 + 1).
  CHECK(count_attention_ops(9, 192, 3) == 1950u);
  for (std::size_t l : {64u, 128u, 256u}) {
    const double lin = static_cast<double>(count_attention_ops(2 * l, 192, 3)) /
                       static_cast<double>(count_attention_ops(l, 192, 3));
    const double quad = static_cast<double>(count_self_attention_ops(2 * l, 192, 3)) /
                        static_cast<double>(count_self_attention_ops(l, 192, 3));
    CHECK(std::abs(lin - 2.0) < 0.1);
    CHECK(std::abs(quad - 4.0) < 0.2);
  }
  CHECK_THROWS_AS(count_attention_ops(0, 192, 3), ContractError);
}

TEST_CASE("the formula matches what cross_fuse actually multiplies") {
  Rng rng(26);
  std::mt19937_64 g(27);
  for (std::size_t l : {4u, 9u, 16u}) {
    BranchState<float> own{random_tensor<float>({1, 5, 32}, g)};
    BranchState<float> other{random_tensor<float>({1, 1 + l, 48}, g)};
    auto p = CrossFusionParams<float>::init(32, 48, 3, rng);
    NoGradGuard no_grad;
    reset_attention_multiply_count();
    cross_fuse(own, other, p);
    CHECK(attention_multiply_count() == count_attention_ops(l, 48, 3));
  }
}

TEST_CASE("head shapes and zero-parameter residual head") {
  HeadConfig cfg;
  Rng rng(28);
  auto params = HeadParams<float>::init(cfg, 192 + 384, rng);
  std::mt19937_64 g(29);
  auto cs = random_tensor<float>({2, 1, 192}, g);
  auto cl = random_tensor<float>({2, 1, 384}, g);
  NoGradGuard no_grad;
  CHECK(head_forward(cs, cl, cfg, params).shape() == Shape{2, 3});

  ParamList<float> list;
  params.collect("", list);
  zero_all(list);
  params.out_bias[0] = 0.25f;
  params.out_bias[1] = -1.5f;
  params.out_bias[2] = 3.0f;
  auto logits = head_forward(cs, cl, cfg, params);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 3; ++k) CHECK(logits[b * 3 + k] == params.out_bias[k]);

  HeadConfig mlp{HeadKind::mlp, 64, 3};
  auto mp = HeadParams<float>::init(mlp, 576, rng);
  CHECK(head_forward(cs, cl, mlp, mp).shape() == Shape{2, 3});
}

TEST_CASE("head gradcheck, residual and mlp") {
  std::mt19937_64 g(30);
  for (HeadKind kind : {HeadKind::residual, HeadKind::mlp}) {
    HeadConfig cfg{kind, 0, 3};
    Rng rng(31);
    auto params = HeadParams<double>::init(cfg, 10, rng);
    auto cs = random_tensor({3, 1, 4}, g);
    auto cl = random_tensor({3, 1, 6}, g);
    auto w = random_tensor({3, 3}, g);
    ParamList<double> list;
    params.collect("", list);
    std::vector<Tensor<double>> inputs{cs, cl};
    for (auto& e : list) inputs.push_back(e.tensor);
    auto res = grad_check<double>(
        "head", [&] { return sum(mul(head_forward(cs, cl, cfg, params), w)); }, inputs, kEps,
        1e-6);
    CHECK_MESSAGE(res.pass, to_string(kind) << " rel err " << res.max_relative_error);
  }
}

TEST_CASE("cross entropy anchors") {
  auto uniform = cross_entropy(Tensor<double>({2, 3}, 0.0), {0, 2});
  CHECK(std::abs(uniform.loss.item() - std::log(3.0)) < 1e-12);
  for (std::size_t i = 0; i < 6; ++i) CHECK(uniform.probs[i] == doctest::Approx(1.0 / 3.0));

  auto sure = cross_entropy(Tensor<double>({1, 3}, {50.0, 0.0, 0.0}), {0});
  CHECK(sure.loss.item() < 1e-20);
  CHECK(sure.loss.item() >= 0.0);

  CHECK_THROWS_AS(cross_entropy(Tensor<double>({1, 3}), {3}), ContractError);

  std::mt19937_64 g(32);
  auto logits = random_tensor({5, 4}, g, -4, 4);
  std::vector<std::size_t> labels{0, 3, 1, 1, 2};
  double oracle = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 4; ++j) z += std::exp(logits[i * 4 + j]);
    oracle += -std::log(std::exp(logits[i * 4 + labels[i]]) / z);
  }
  auto out = cross_entropy(logits, labels);
  CHECK(std::abs(out.loss.item() - oracle / 5.0) < 1e-10);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += out.probs[i * 4 + j];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("cross entropy gradient equals (q_s - q_d) / B") {
  std::mt19937_64 g(33);
  auto logits = random_tensor({4, 3}, g, -2, 2, true);
  std::vector<std::size_t> labels{2, 0, 1, 2};
  auto out = cross_entropy(logits, labels);
  backward(out.loss);
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(logits.grad()[i] ==
          doctest::Approx((out.probs[i] - out.target_dist[i]) / 4.0).epsilon(1e-14));
  logits.zero_grad();
  auto res = grad_check<double>(
      "cross_entropy", [&] { return cross_entropy(logits, labels).loss; }, {logits}, kEps, 1e-6);
  CHECK_MESSAGE(res.pass, "rel err " << res.max_relative_error);
}

TEST_CASE("full toy model: every parameter receives a gradient") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.seed = 34;
  Model<float> model(cfg);
  std::mt19937_64 g(35);
  auto x = random_tensor<float>({2, 3, 48, 48}, g);
  auto out = model.forward(x);
  CHECK(out.logits.shape() == Shape{2, 3});
  CHECK(out.reconstruction.shape() == x.shape());
  backward(cross_entropy(out.logits, {0, 2}).loss);
  for (const auto& p : model.parameters()) {
    REQUIRE_MESSAGE(p.tensor.has_grad(), p.name);
    bool nonzero = false;
    for (float v : p.tensor.grad()) nonzero = nonzero || v != 0.0f;
    CHECK_MESSAGE(nonzero, p.name);
  }
}

TEST_CASE("parameter paths are unique and stable") {
  Model<float> a(ModelConfig::toy());
  Model<float> b(ModelConfig::toy());
  REQUIRE(a.parameters().size() == b.parameters().size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].name == b.parameters()[i].name);
    names.insert(a.parameters()[i].name);
  }
  CHECK(names.size() == a.parameters().size());
}

TEST_CASE("nrca toggle removes the autoencoder parameters") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.nrca.enabled = false;
  Model<float> m(cfg);
  for (const auto& p : m.parameters()) CHECK(p.name.rfind("nrca.", 0) != 0);
  std::mt19937_64 g(36);
  NoGradGuard no_grad;
  auto out = m.forward(random_tensor<float>({1, 3, 48, 48}, g));
  CHECK_FALSE(out.reconstruction.defined());
}
