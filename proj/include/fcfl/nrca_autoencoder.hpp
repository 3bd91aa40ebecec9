#pragma once

// Noise-reduction convolutional autoencoder: encoder blocks of
// conv -> GELU -> max-pool -> channel norm, a 1x1 latent conv, and a mirrored
// decoder of stride-`pool_window` transposed convolutions that restores the
// input resolution.

#include <cstddef>
#include <string>
#include <vector>

#include "fcfl/params.hpp"
#include "fcfl/tensor.hpp"

namespace fcfl {

struct NrcaConfig {
  bool enabled = true;
  std::size_t image_channels = 3;
  std::vector<std::size_t> encoder_channels{16, 32, 64};
  std::size_t kernel_size = 3;
  std::size_t pool_window = 2;
  std::size_t latent_channels = 64;

  // Throws ConfigError on an unusable combination.
  void validate() const;
  // H and W must be multiples of this.
  std::size_t required_divisor() const;
};

template <typename T>
struct NrcaParams {
  struct EncoderBlock {
    Tensor<T> conv_weight, conv_bias, norm_gamma, norm_beta;
  };
  struct DecoderBlock {
    Tensor<T> deconv_weight, deconv_bias;
  };

  std::vector<EncoderBlock> encoder;
  Tensor<T> latent_weight, latent_bias;
  std::vector<DecoderBlock> decoder;

  static NrcaParams init(const NrcaConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
  std::size_t parameter_count() const;
};

template <typename T>
Tensor<T> nrca_forward(const Tensor<T>& image, const NrcaParams<T>& params, const NrcaConfig& cfg);

// Mean squared error over all elements.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& output, const Tensor<T>& clean);

}  // namespace fcfl
