#pragma once

#include <cstdint>
#include <string>

#include "fcfl/fusion.hpp"
#include "fcfl/head.hpp"
#include "fcfl/nrca_autoencoder.hpp"
#include "fcfl/params.hpp"

namespace fcfl {

struct ModelConfig {
  std::size_t image_size = 256;  // side of the (square) input fed to NRCA
  BranchConfig branch_small{12, 192, 240, 2, 3};
  BranchConfig branch_large{16, 384, 224, 2, 6};
  FusionStackConfig fusion{3};
  NrcaConfig nrca{};
  HeadConfig head{};
  std::uint64_t seed = 0;

  void validate() const;

  // Full-size architecture (patch 12/16, embed 192/384).
  static ModelConfig paper_default();
  // 48x48 inputs, embed 32/64, N = M = K = 1, small NRCA.
  static ModelConfig toy();
};

template <typename T>
struct ModelOutput {
  Tensor<T> logits;         // [B, num_classes]
  Tensor<T> reconstruction;  // NRCA output, undefined when NRCA is disabled
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  // `images` is a normalized [B, C, S, S] batch with S == image_size.
  ModelOutput<T> forward(const Tensor<T>& images) const;

  // Every trainable tensor keyed by a stable dotted path, in a fixed order.
  const ParamList<T>& parameters() const { return params_list_; }
  std::size_t parameter_count() const;

  NrcaParams<T>& nrca() { return nrca_; }
  FusionParams<T>& fusion() { return fusion_; }
  HeadParams<T>& head() { return head_; }

 private:
  ModelConfig config_;
  NrcaParams<T> nrca_;
  FusionParams<T> fusion_;
  HeadParams<T> head_;
  ParamList<T> params_list_;
};

}  // namespace fcfl
