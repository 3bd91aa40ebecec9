#include "fcfl/head.hpp"

#include <algorithm>
#include <cmath>

#include "fcfl/ops.hpp"

namespace fcfl {

std::string to_string(HeadKind kind) { return kind == HeadKind::residual ? "residual" : "mlp"; }

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "residual") return HeadKind::residual;
  if (name == "mlp") return HeadKind::mlp;
  throw ConfigError("unknown head kind '" + name + "' (expected residual or mlp)");
}

void HeadConfig::validate() const {
  if (num_classes < 2) throw ConfigError("head: num_classes must be >= 2");
}

template <typename T>
HeadParams<T> HeadParams<T>::init(const HeadConfig& cfg, std::size_t input_dim, Rng& rng) {
  cfg.validate();
  const std::size_t hidden = cfg.resolved_hidden(input_dim);
  HeadParams p;
  if (cfg.kind == HeadKind::residual) {
    for (int i = 0; i < 2; ++i) {
      p.blocks.push_back({linear_weight<T>(input_dim, hidden, rng),
                          param_constant<T>({hidden}, T(0)), param_constant<T>({hidden}, T(1)),
                          param_constant<T>({hidden}, T(0)),
                          linear_weight<T>(hidden, input_dim, rng),
                          param_constant<T>({input_dim}, T(0))});
    }
    p.out_weight = linear_weight<T>(input_dim, cfg.num_classes, rng);
    p.out_bias = param_constant<T>({cfg.num_classes}, T(0));
  } else {
    p.mlp_fc1_weight = linear_weight<T>(input_dim, hidden, rng);
    p.mlp_fc1_bias = param_constant<T>({hidden}, T(0));
    p.mlp_fc2_weight = linear_weight<T>(hidden, cfg.num_classes, rng);
    p.mlp_fc2_bias = param_constant<T>({cfg.num_classes}, T(0));
  }
  return p;
}

template <typename T>
void HeadParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    append_params<T>(out, prefix + "block." + std::to_string(i) + ".",
                     {{"fc1.weight", &b.fc1_weight},
                      {"fc1.bias", &b.fc1_bias},
                      {"norm.gamma", &b.norm_gamma},
                      {"norm.beta", &b.norm_beta},
                      {"fc2.weight", &b.fc2_weight},
                      {"fc2.bias", &b.fc2_bias}});
  }
  append_params<T>(out, prefix,
                   {{"mlp.fc1.weight", &mlp_fc1_weight},
                    {"mlp.fc1.bias", &mlp_fc1_bias},
                    {"mlp.fc2.weight", &mlp_fc2_weight},
                    {"mlp.fc2.bias", &mlp_fc2_bias},
                    {"out.weight", &out_weight},
                    {"out.bias", &out_bias}});
}

template <typename T>
Tensor<T> head_forward(const Tensor<T>& cls_small, const Tensor<T>& cls_large,
                       const HeadConfig& cfg, const HeadParams<T>& params) {
  if (cls_small.rank() != 3 || cls_large.rank() != 3 || cls_small.dim(1) != 1 ||
      cls_large.dim(1) != 1 || cls_small.dim(0) != cls_large.dim(0)) {
    throw DimensionError("head_forward: expected [B,1,C] CLS tokens, got " +
                         shape_str(cls_small.shape()) + " and " + shape_str(cls_large.shape()));
  }
  const std::size_t b = cls_small.dim(0);
  const std::size_t dim = cls_small.dim(2) + cls_large.dim(2);
  Tensor<T> x = reshape(concat<T>({cls_small, cls_large}, 2), {b, dim});
  if (cfg.kind == HeadKind::mlp) {
    Tensor<T> h = gelu(linear(x, params.mlp_fc1_weight, params.mlp_fc1_bias));
    return linear(h, params.mlp_fc2_weight, params.mlp_fc2_bias);
  }
  for (const auto& blk : params.blocks) {
    Tensor<T> h = linear(x, blk.fc1_weight, blk.fc1_bias);
    h = gelu(layer_norm(h, blk.norm_gamma, blk.norm_beta));
    x = add(x, linear(h, blk.fc2_weight, blk.fc2_bias));
  }
  return linear(x, params.out_weight, params.out_bias);
}

template <typename T>
LossOutput<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                          " out of range for " + std::to_string(k) + " classes");
    }
  }
  Tensor<T> probs(Shape{b, k});
  Tensor<T> target(Shape{b, k});
  T total = T(0);
  for (std::size_t i = 0; i < b; ++i) {
    const T* z = logits.data().data() + i * k;
    const T mx = *std::max_element(z, z + k);
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(z[j] - lse);
    target[i * k + labels[i]] = T(1);
    total += lse - z[labels[i]];
  }
  Tensor<T> loss = Tensor<T>::scalar(total / static_cast<T>(b));
  if (tracks_grad<T>({&logits})) {
    loss.set_requires_grad(true);
    Tape<T>::current().record(
        "cross_entropy", [li = loss.impl(), zi = logits.impl(), pi = probs.impl(),
                          ti = target.impl(), b]() {
          if (li->grad.empty()) return;
          const T g = li->grad[0] / static_cast<T>(b);
          auto& gz = zi->grad_buffer();
          for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += g * (pi->data[i] - ti->data[i]);
        });
  }
  return {loss, probs, target};
}

template struct HeadParams<float>;
template struct HeadParams<double>;
template Tensor<float> head_forward<float>(const Tensor<float>&, const Tensor<float>&,
                                           const HeadConfig&, const HeadParams<float>&);
template Tensor<double> head_forward<double>(const Tensor<double>&, const Tensor<double>&,
                                             const HeadConfig&, const HeadParams<double>&);
template LossOutput<float> cross_entropy<float>(const Tensor<float>&,
                                                const std::vector<std::size_t>&);
template LossOutput<double> cross_entropy<double>(const Tensor<double>&,
                                                  const std::vector<std::size_t>&);

}  // namespace fcfl
