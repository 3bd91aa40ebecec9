#include "fcfl/fusion.hpp"

#include <cmath>

#include "fcfl/ops.hpp"

namespace fcfl {

void BranchConfig::validate() const {
  if (patch_size == 0 || embed_dim == 0 || heads == 0 || depth == 0 || input_size == 0)
    throw ConfigError("branch: patch_size, embed_dim, heads, depth and input_size must be > 0");
  if (input_size % patch_size != 0)
    throw ConfigError("branch: input_size " + std::to_string(input_size) +
                      " is not divisible by patch_size " + std::to_string(patch_size));
  if (embed_dim % heads != 0)
    throw ConfigError("branch: embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by heads " + std::to_string(heads));
}

void FusionStackConfig::validate() const {
  if (rounds == 0) throw ConfigError("fusion: rounds (K) must be >= 1");
}

template <typename T>
Tensor<T> BranchState<T>::cls() const {
  return slice(tokens, 1, 0, 1);
}

template <typename T>
Tensor<T> BranchState<T>::patches() const {
  return slice(tokens, 1, 1, tokens.dim(1));
}

template <typename T>
PatchEmbedParams<T> PatchEmbedParams<T>::init(const BranchConfig& cfg, std::size_t image_channels,
                                              Rng& rng) {
  cfg.validate();
  const std::size_t p = cfg.patch_size, c = cfg.embed_dim;
  const double fan_in = static_cast<double>(image_channels * p * p);
  PatchEmbedParams out;
  out.proj_weight = param_uniform<T>({c, image_channels, p, p},
                                     std::sqrt(6.0 / (fan_in + static_cast<double>(c))), rng);
  out.proj_bias = param_constant<T>({c}, T(0));
  out.cls_token = param_normal<T>({1, 1, c}, 0.02, rng);
  out.pos_embed = param_normal<T>({1, 1 + cfg.num_patches(), c}, 0.02, rng);
  return out;
}

template <typename T>
void PatchEmbedParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  append_params<T>(out, prefix,
                   {{"proj.weight", &proj_weight},
                    {"proj.bias", &proj_bias},
                    {"cls_token", &cls_token},
                    {"pos_embed", &pos_embed}});
}

template <typename T>
SelfAttentionParams<T> SelfAttentionParams<T>::init(std::size_t dim, std::size_t heads, Rng& rng) {
  SelfAttentionParams p;
  p.heads = heads;
  p.wq = linear_weight<T>(dim, dim, rng);
  p.bq = param_constant<T>({dim}, T(0));
  p.wk = linear_weight<T>(dim, dim, rng);
  p.bk = param_constant<T>({dim}, T(0));
  p.wv = linear_weight<T>(dim, dim, rng);
  p.bv = param_constant<T>({dim}, T(0));
  p.wo = linear_weight<T>(dim, dim, rng);
  p.bo = param_constant<T>({dim}, T(0));
  return p;
}

template <typename T>
void SelfAttentionParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  append_params<T>(out, prefix,
                   {{"q.weight", &wq},
                    {"q.bias", &bq},
                    {"k.weight", &wk},
                    {"k.bias", &bk},
                    {"v.weight", &wv},
                    {"v.bias", &bv},
                    {"out.weight", &wo},
                    {"out.bias", &bo}});
}

template <typename T>
EncoderBlockParams<T> EncoderBlockParams<T>::init(std::size_t dim, std::size_t heads, Rng& rng) {
  EncoderBlockParams p;
  p.norm1_gamma = param_constant<T>({dim}, T(1));
  p.norm1_beta = param_constant<T>({dim}, T(0));
  p.attn = SelfAttentionParams<T>::init(dim, heads, rng);
  p.norm2_gamma = param_constant<T>({dim}, T(1));
  p.norm2_beta = param_constant<T>({dim}, T(0));
  p.fc1_weight = linear_weight<T>(dim, 4 * dim, rng);
  p.fc1_bias = param_constant<T>({4 * dim}, T(0));
  p.fc2_weight = linear_weight<T>(4 * dim, dim, rng);
  p.fc2_bias = param_constant<T>({dim}, T(0));
  return p;
}

template <typename T>
void EncoderBlockParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  append_params<T>(out, prefix, {{"norm1.gamma", &norm1_gamma}, {"norm1.beta", &norm1_beta}});
  attn.collect(prefix + "attn.", out);
  append_params<T>(out, prefix,
                   {{"norm2.gamma", &norm2_gamma},
                    {"norm2.beta", &norm2_beta},
                    {"mlp.fc1.weight", &fc1_weight},
                    {"mlp.fc1.bias", &fc1_bias},
                    {"mlp.fc2.weight", &fc2_weight},
                    {"mlp.fc2.bias", &fc2_bias}});
}

template <typename T>
CrossFusionParams<T> CrossFusionParams<T>::init(std::size_t own_dim, std::size_t other_dim,
                                                std::size_t heads, Rng& rng) {
  CrossFusionParams p;
  p.heads = heads;
  p.f_weight = linear_weight<T>(own_dim, other_dim, rng);
  p.f_bias = param_constant<T>({other_dim}, T(0));
  p.w_x = linear_weight<T>(other_dim, other_dim, rng);
  p.w_y = linear_weight<T>(other_dim, other_dim, rng);
  p.w_z = linear_weight<T>(other_dim, other_dim, rng);
  p.g_weight = linear_weight<T>(other_dim, own_dim, rng);
  p.g_bias = param_constant<T>({own_dim}, T(0));
  return p;
}

template <typename T>
void CrossFusionParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  append_params<T>(out, prefix,
                   {{"f.weight", &f_weight},
                    {"f.bias", &f_bias},
                    {"w_x", &w_x},
                    {"w_y", &w_y},
                    {"w_z", &w_z},
                    {"g.weight", &g_weight},
                    {"g.bias", &g_bias}});
}

template <typename T>
FusionParams<T> FusionParams<T>::init(const BranchConfig& small, const BranchConfig& large,
                                      const FusionStackConfig& stack, std::size_t image_channels,
                                      Rng& rng) {
  stack.validate();
  FusionParams p;
  p.small_embed = PatchEmbedParams<T>::init(small, image_channels, rng);
  p.large_embed = PatchEmbedParams<T>::init(large, image_channels, rng);
  const std::size_t cs = small.embed_dim, cl = large.embed_dim;
  for (std::size_t k = 0; k < stack.rounds; ++k) {
    FusionRoundParams<T> r;
    for (std::size_t i = 0; i < small.depth; ++i)
      r.small_blocks.push_back(EncoderBlockParams<T>::init(cs, small.heads, rng));
    for (std::size_t i = 0; i < large.depth; ++i)
      r.large_blocks.push_back(EncoderBlockParams<T>::init(cl, large.heads, rng));
    r.small_from_large = CrossFusionParams<T>::init(cs, cl, large.heads, rng);
    r.large_from_small = CrossFusionParams<T>::init(cl, cs, small.heads, rng);
    r.small_post = EncoderBlockParams<T>::init(cs, small.heads, rng);
    r.large_post = EncoderBlockParams<T>::init(cl, large.heads, rng);
    p.rounds.push_back(std::move(r));
  }
  return p;
}

template <typename T>
void FusionParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  small_embed.collect(prefix + "small.embed.", out);
  large_embed.collect(prefix + "large.embed.", out);
  for (std::size_t k = 0; k < rounds.size(); ++k) {
    const std::string rp = prefix + "round." + std::to_string(k) + ".";
    const auto& r = rounds[k];
    for (std::size_t i = 0; i < r.small_blocks.size(); ++i)
      r.small_blocks[i].collect(rp + "small.block." + std::to_string(i) + ".", out);
    for (std::size_t i = 0; i < r.large_blocks.size(); ++i)
      r.large_blocks[i].collect(rp + "large.block." + std::to_string(i) + ".", out);
    r.small_from_large.collect(rp + "small.cross.", out);
    r.large_from_small.collect(rp + "large.cross.", out);
    r.small_post.collect(rp + "small.post.", out);
    r.large_post.collect(rp + "large.post.", out);
  }
}

template <typename T>
BranchState<T> patch_embed(const Tensor<T>& image, const BranchConfig& cfg,
                           const PatchEmbedParams<T>& params) {
  if (image.rank() != 4 || image.dim(2) != image.dim(3)) {
    throw DimensionError("patch_embed: expected square [B,C,S,S] image, got " +
                         shape_str(image.shape()));
  }
  const std::size_t s = image.dim(2);
  if (s % cfg.patch_size != 0) {
    throw ConfigError("patch_embed: image size " + std::to_string(s) +
                      " is not divisible by patch size " + std::to_string(cfg.patch_size));
  }
  if (s != cfg.input_size) {
    throw ConfigError("patch_embed: image size " + std::to_string(s) +
                      " does not match branch input_size " + std::to_string(cfg.input_size));
  }
  const std::size_t b = image.dim(0), c = cfg.embed_dim, l = cfg.num_patches();
  Tensor<T> grid = conv2d(image, params.proj_weight, params.proj_bias, cfg.patch_size, 0);
  Tensor<T> patches = permute(reshape(grid, {b, c, l}), {0, 2, 1});
  Tensor<T> tokens = concat<T>({expand_batch(params.cls_token, b), patches}, 1);
  return {add(tokens, params.pos_embed)};
}

namespace {

// [B, L, C] -> [B * h, L, C / h]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), l = x.dim(1), c = x.dim(2);
  return reshape(permute(reshape(x, {b, l, heads, c / heads}), {0, 2, 1, 3}),
                 {b * heads, l, c / heads});
}

// [B * h, L, d] -> [B, L, h * d]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0) / heads, l = x.dim(1), d = x.dim(2);
  return reshape(permute(reshape(x, {b, heads, l, d}), {0, 2, 1, 3}), {b, l, heads * d});
}

}  // namespace

template <typename T>
AttentionOutput<T> multi_head_attention(const Tensor<T>& query, const Tensor<T>& key,
                                        const Tensor<T>& value, std::size_t heads) {
  if (query.rank() != 3 || key.shape() != value.shape() || key.rank() != 3 ||
      query.dim(2) != key.dim(2) || query.dim(0) != key.dim(0) || query.dim(2) % heads != 0) {
    throw DimensionError("multi_head_attention: incompatible q " + shape_str(query.shape()) +
                         ", k " + shape_str(key.shape()) + ", v " + shape_str(value.shape()) +
                         " for " + std::to_string(heads) + " heads");
  }
  const std::size_t d = query.dim(2) / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(d));
  Tensor<T> weights =
      softmax(attention_scores(split_heads(query, heads), split_heads(key, heads), scale_factor));
  Tensor<T> mixed = bmm(weights, split_heads(value, heads));
  return {merge_heads(mixed, heads), weights};
}

template <typename T>
BranchState<T> encoder_block(const BranchState<T>& state, const EncoderBlockParams<T>& params,
                             Tensor<T>* weights) {
  const Tensor<T>& x = state.tokens;
  const auto& a = params.attn;
  Tensor<T> h = layer_norm(x, params.norm1_gamma, params.norm1_beta);
  AttentionOutput<T> att = multi_head_attention(linear(h, a.wq, a.bq), linear(h, a.wk, a.bk),
                                                linear(h, a.wv, a.bv), a.heads);
  if (weights != nullptr) *weights = att.weights;
  Tensor<T> y = add(x, linear(att.output, a.wo, a.bo));
  Tensor<T> m = layer_norm(y, params.norm2_gamma, params.norm2_beta);
  m = linear(gelu(linear(m, params.fc1_weight, params.fc1_bias)), params.fc2_weight,
             params.fc2_bias);
  return {add(y, m)};
}

template <typename T>
CrossFuseOutput<T> cross_fuse(const BranchState<T>& own, const BranchState<T>& other,
                              const CrossFusionParams<T>& params) {
  if (own.batch() != other.batch()) {
    throw DimensionError("cross_fuse: batch mismatch " + shape_str(own.tokens.shape()) + " vs " +
                         shape_str(other.tokens.shape()));
  }
  const Tensor<T> none;
  Tensor<T> own_cls = own.cls();
  Tensor<T> projected = linear(own_cls, params.f_weight, params.f_bias);       // [B,1,C_other]
  Tensor<T> z = concat<T>({projected, other.patches()}, 1);                    // [B,1+L,C_other]
  AttentionOutput<T> att =
      multi_head_attention(linear(projected, params.w_x, none), linear(z, params.w_y, none),
                           linear(z, params.w_z, none), params.heads);
  Tensor<T> fused = add(linear(add(projected, att.output), params.g_weight, params.g_bias), own_cls);
  return {{concat<T>({fused, own.patches()}, 1)}, att.weights};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> fusion_stack_forward(BranchState<T> small, BranchState<T> large,
                                                      const FusionParams<T>& params) {
  for (const auto& round : params.rounds) {
    for (const auto& block : round.small_blocks) small = encoder_block(small, block);
    for (const auto& block : round.large_blocks) large = encoder_block(large, block);
    BranchState<T> fused_small = cross_fuse(small, large, round.small_from_large).state;
    BranchState<T> fused_large = cross_fuse(large, small, round.large_from_small).state;
    small = encoder_block(fused_small, round.small_post);
    large = encoder_block(fused_large, round.large_post);
  }
  return {small.cls(), large.cls()};
}

std::uint64_t count_attention_ops(std::size_t l_other, std::size_t embed_dim, std::size_t heads) {
  if (l_other == 0) throw ContractError("count_attention_ops: L_other must be >= 1");
  const std::uint64_t keys = 1 + l_other;
  return keys * (embed_dim + heads);
}

std::uint64_t count_self_attention_ops(std::size_t l, std::size_t embed_dim, std::size_t heads) {
  if (l == 0) throw ContractError("count_self_attention_ops: L must be >= 1");
  const std::uint64_t tokens = 1 + l;
  return tokens * tokens * (embed_dim + heads);
}

#define FCFL_INSTANTIATE_FUSION(T)                                                              \
  template struct BranchState<T>;                                                               \
  template struct PatchEmbedParams<T>;                                                          \
  template struct SelfAttentionParams<T>;                                                       \
  template struct EncoderBlockParams<T>;                                                        \
  template struct CrossFusionParams<T>;                                                         \
  template struct FusionParams<T>;                                                              \
  template BranchState<T> patch_embed<T>(const Tensor<T>&, const BranchConfig&,                 \
                                         const PatchEmbedParams<T>&);                           \
  template AttentionOutput<T> multi_head_attention<T>(const Tensor<T>&, const Tensor<T>&,       \
                                                      const Tensor<T>&, std::size_t);           \
  template BranchState<T> encoder_block<T>(const BranchState<T>&, const EncoderBlockParams<T>&, \
                                           Tensor<T>*);                                         \
  template CrossFuseOutput<T> cross_fuse<T>(const BranchState<T>&, const BranchState<T>&,       \
                                            const CrossFusionParams<T>&);                       \
  template std::pair<Tensor<T>, Tensor<T>> fusion_stack_forward<T>(                             \
      BranchState<T>, BranchState<T>, const FusionParams<T>&);

FCFL_INSTANTIATE_FUSION(float)
FCFL_INSTANTIATE_FUSION(double)

#undef FCFL_INSTANTIATE_FUSION

}  // namespace fcfl
