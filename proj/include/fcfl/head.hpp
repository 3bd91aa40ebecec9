#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fcfl/params.hpp"
#include "fcfl/tensor.hpp"

namespace fcfl {

enum class HeadKind { residual, mlp };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

struct HeadConfig {
  HeadKind kind = HeadKind::residual;
  std::size_t hidden_dim = 0;  // 0 selects C_small + C_large
  std::size_t num_classes = 3;

  void validate() const;
  std::size_t resolved_hidden(std::size_t input_dim) const {
    return hidden_dim == 0 ? input_dim : hidden_dim;
  }
};

template <typename T>
struct HeadParams {
  // Residual head: x + fc2(GELU(LN(fc1(x)))) twice, then `out`.
  struct ResidualBlock {
    Tensor<T> fc1_weight, fc1_bias, norm_gamma, norm_beta, fc2_weight, fc2_bias;
  };
  std::vector<ResidualBlock> blocks;
  // MLP head: fc2(GELU(fc1(x))); `out` unused.
  Tensor<T> mlp_fc1_weight, mlp_fc1_bias, mlp_fc2_weight, mlp_fc2_bias;
  Tensor<T> out_weight, out_bias;

  static HeadParams init(const HeadConfig& cfg, std::size_t input_dim, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Concatenates both CLS tokens to [B, C_s + C_l] and returns raw logits.
template <typename T>
Tensor<T> head_forward(const Tensor<T>& cls_small, const Tensor<T>& cls_large,
                       const HeadConfig& cfg, const HeadParams<T>& params);

template <typename T>
struct LossOutput {
  Tensor<T> loss;         // scalar batch mean
  Tensor<T> probs;        // q_s, softmax of the logits
  Tensor<T> target_dist;  // q_d, one-hot rows
};

// Mean over the batch of -sum_i q_d log q_s, with log q_s computed by
// log-sum-exp. The gradient w.r.t. logits is (q_s - q_d) / B.
template <typename T>
LossOutput<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

}  // namespace fcfl
