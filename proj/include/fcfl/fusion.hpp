#pragma once

// Dual-branch multi-scale transformer with CLS-token cross fusion.
//
// Each branch embeds non-overlapping patches, prepends a learnable CLS token
// and adds a learnable position embedding. A fusion round runs N (small) and
// M (large) pre-norm encoder blocks, exchanges information between the
// branches through cross_fuse in both directions, then runs one more encoder
// block per branch on the fused sequence. K rounds make up the stack.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fcfl/params.hpp"
#include "fcfl/tensor.hpp"

namespace fcfl {

struct BranchConfig {
  std::size_t patch_size = 12;
  std::size_t embed_dim = 192;
  std::size_t input_size = 240;
  std::size_t depth = 2;  // N or M
  std::size_t heads = 3;

  void validate() const;
  std::size_t grid() const { return input_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t head_dim() const { return embed_dim / heads; }
};

struct FusionStackConfig {
  std::size_t rounds = 3;  // K
  void validate() const;
};

// One branch's token sequence [B, 1 + L, C]; index 0 is the CLS token.
// Position embeddings are already added by patch_embed.
template <typename T>
struct BranchState {
  Tensor<T> tokens;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t token_count() const { return tokens.dim(1); }
  std::size_t embed_dim() const { return tokens.dim(2); }
  Tensor<T> cls() const;
  Tensor<T> patches() const;
};

template <typename T>
struct PatchEmbedParams {
  Tensor<T> proj_weight;  // [C, C_img, p, p]
  Tensor<T> proj_bias;    // [C]
  Tensor<T> cls_token;    // [1, 1, C]
  Tensor<T> pos_embed;    // [1, 1 + L, C]

  static PatchEmbedParams init(const BranchConfig& cfg, std::size_t image_channels, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct SelfAttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;  // all C -> C
  std::size_t heads = 1;

  static SelfAttentionParams init(std::size_t dim, std::size_t heads, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct EncoderBlockParams {
  Tensor<T> norm1_gamma, norm1_beta;
  SelfAttentionParams<T> attn;
  Tensor<T> norm2_gamma, norm2_beta;
  Tensor<T> fc1_weight, fc1_bias;  // C -> 4C
  Tensor<T> fc2_weight, fc2_bias;  // 4C -> C

  static EncoderBlockParams init(std::size_t dim, std::size_t heads, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Own branch (dim C_own) attends to the other branch (dim C_other).
template <typename T>
struct CrossFusionParams {
  Tensor<T> f_weight, f_bias;  // C_own -> C_other projection
  Tensor<T> w_x, w_y, w_z;     // C_other -> C_other query/key/value maps
  Tensor<T> g_weight, g_bias;  // C_other -> C_own back-projection
  std::size_t heads = 1;       // over C_other

  static CrossFusionParams init(std::size_t own_dim, std::size_t other_dim, std::size_t heads,
                                Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct FusionRoundParams {
  std::vector<EncoderBlockParams<T>> small_blocks;  // N
  std::vector<EncoderBlockParams<T>> large_blocks;  // M
  CrossFusionParams<T> small_from_large;            // small CLS queries large patches
  CrossFusionParams<T> large_from_small;
  EncoderBlockParams<T> small_post;
  EncoderBlockParams<T> large_post;
};

template <typename T>
struct FusionParams {
  PatchEmbedParams<T> small_embed;
  PatchEmbedParams<T> large_embed;
  std::vector<FusionRoundParams<T>> rounds;

  static FusionParams init(const BranchConfig& small, const BranchConfig& large,
                           const FusionStackConfig& stack, std::size_t image_channels, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct AttentionOutput {
  Tensor<T> output;   // [B, Lq, C]
  Tensor<T> weights;  // [B * heads, Lq, Lk], rows sum to 1
};

template <typename T>
BranchState<T> patch_embed(const Tensor<T>& image, const BranchConfig& cfg,
                           const PatchEmbedParams<T>& params);

// Scaled dot-product multi-head attention. `query` [B,Lq,C] and
// `context` [B,Lk,C] are already projected; scale is 1/sqrt(C/heads).
template <typename T>
AttentionOutput<T> multi_head_attention(const Tensor<T>& query, const Tensor<T>& key,
                                        const Tensor<T>& value, std::size_t heads);

// Pre-norm self-attention + residual, then pre-norm GELU MLP + residual.
// If `weights` is non-null it receives the attention map.
template <typename T>
BranchState<T> encoder_block(const BranchState<T>& state, const EncoderBlockParams<T>& params,
                             Tensor<T>* weights = nullptr);

template <typename T>
struct CrossFuseOutput {
  BranchState<T> state;
  Tensor<T> weights;  // [B * heads, 1, 1 + L_other]
};

// Replaces own CLS with g(f(cls) + y) + cls where y is the attention of the
// projected CLS (sole query) over [f(cls) || other patches]; own patch tokens
// pass through unchanged.
template <typename T>
CrossFuseOutput<T> cross_fuse(const BranchState<T>& own, const BranchState<T>& other,
                              const CrossFusionParams<T>& params);

template <typename T>
std::pair<Tensor<T>, Tensor<T>> fusion_stack_forward(BranchState<T> small, BranchState<T> large,
                                                      const FusionParams<T>& params);

// Scalar multiplies to build one sample's cross-attention map in cross_fuse:
// a single CLS query against 1 + L_other keys, per head d = C/h products plus
// one scaling, i.e. (1 + L_other) * (C + h). Linear in L_other.
std::uint64_t count_attention_ops(std::size_t l_other, std::size_t embed_dim, std::size_t heads);

// Same quantity for full self-attention over 1 + L tokens: (1 + L)^2 (C + h).
std::uint64_t count_self_attention_ops(std::size_t l, std::size_t embed_dim, std::size_t heads);

}  // namespace fcfl
