#include "fcfl/nrca_autoencoder.hpp"

#include <cmath>

#include "fcfl/ops.hpp"

namespace fcfl {

void NrcaConfig::validate() const {
  if (encoder_channels.empty()) throw ConfigError("nrca: encoder_channels must be nonempty");
  for (std::size_t c : encoder_channels)
    if (c == 0) throw ConfigError("nrca: encoder channel counts must be positive");
  if (image_channels == 0 || latent_channels == 0)
    throw ConfigError("nrca: image_channels and latent_channels must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0)
    throw ConfigError("nrca: kernel_size must be odd, got " + std::to_string(kernel_size));
  if (pool_window < 2) throw ConfigError("nrca: pool_window must be >= 2");
}

std::size_t NrcaConfig::required_divisor() const {
  std::size_t d = 1;
  for (std::size_t i = 0; i < encoder_channels.size(); ++i) d *= pool_window;
  return d;
}

template <typename T>
NrcaParams<T> NrcaParams<T>::init(const NrcaConfig& cfg, Rng& rng) {
  cfg.validate();
  NrcaParams p;
  const std::size_t k = cfg.kernel_size;
  std::size_t in = cfg.image_channels;
  for (std::size_t out : cfg.encoder_channels) {
    const double fan_in = static_cast<double>(in * k * k);
    p.encoder.push_back({param_normal<T>({out, in, k, k}, std::sqrt(2.0 / fan_in), rng),
                         param_constant<T>({out}, T(0)), param_constant<T>({out}, T(1)),
                         param_constant<T>({out}, T(0))});
    in = out;
  }
  p.latent_weight = param_normal<T>({cfg.latent_channels, in, 1, 1},
                                    std::sqrt(2.0 / static_cast<double>(in)), rng);
  p.latent_bias = param_constant<T>({cfg.latent_channels}, T(0));

  // Mirror: latent -> enc[n-2] -> ... -> enc[0] -> image channels.
  const std::size_t w = cfg.pool_window;
  std::size_t from = cfg.latent_channels;
  for (std::size_t i = cfg.encoder_channels.size(); i-- > 0;) {
    const std::size_t to = i == 0 ? cfg.image_channels : cfg.encoder_channels[i - 1];
    // Kernel == stride, so each output pixel sees exactly one tap per input channel.
    const double fan_in = static_cast<double>(from);
    p.decoder.push_back({param_normal<T>({from, to, w, w}, std::sqrt(2.0 / fan_in), rng),
                         param_constant<T>({to}, T(0))});
    from = to;
  }
  return p;
}

template <typename T>
void NrcaParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const auto& b = encoder[i];
    append_params<T>(out, prefix + "encoder." + std::to_string(i) + ".",
                     {{"conv.weight", &b.conv_weight},
                      {"conv.bias", &b.conv_bias},
                      {"norm.gamma", &b.norm_gamma},
                      {"norm.beta", &b.norm_beta}});
  }
  append_params<T>(out, prefix + "latent.", {{"weight", &latent_weight}, {"bias", &latent_bias}});
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const auto& b = decoder[i];
    append_params<T>(out, prefix + "decoder." + std::to_string(i) + ".",
                     {{"deconv.weight", &b.deconv_weight}, {"deconv.bias", &b.deconv_bias}});
  }
}

template <typename T>
std::size_t NrcaParams<T>::parameter_count() const {
  ParamList<T> all;
  collect("", all);
  std::size_t n = 0;
  for (const auto& p : all) n += p.tensor.numel();
  return n;
}

template <typename T>
Tensor<T> nrca_forward(const Tensor<T>& image, const NrcaParams<T>& params,
                       const NrcaConfig& cfg) {
  if (image.rank() != 4 || image.dim(1) != cfg.image_channels) {
    throw DimensionError("nrca_forward: expected [B," + std::to_string(cfg.image_channels) +
                         ",H,W], got " + shape_str(image.shape()));
  }
  const std::size_t div = cfg.required_divisor();
  if (image.dim(2) % div != 0 || image.dim(3) % div != 0) {
    throw ConfigError("nrca_forward: spatial size " + std::to_string(image.dim(2)) + "x" +
                      std::to_string(image.dim(3)) + " must be divisible by " +
                      std::to_string(div) + " (pool_window^" +
                      std::to_string(cfg.encoder_channels.size()) + ")");
  }
  const std::size_t pad = cfg.kernel_size / 2;
  Tensor<T> x = image;
  for (const auto& b : params.encoder) {
    x = conv2d(x, b.conv_weight, b.conv_bias, 1, pad);
    x = gelu(x);
    x = max_pool2d(x, cfg.pool_window, cfg.pool_window);
    x = channel_norm(x, b.norm_gamma, b.norm_beta);
  }
  x = gelu(conv2d(x, params.latent_weight, params.latent_bias, 1, 0));
  for (std::size_t i = 0; i < params.decoder.size(); ++i) {
    const auto& b = params.decoder[i];
    x = conv_transpose2d(x, b.deconv_weight, b.deconv_bias, cfg.pool_window, 0);
    if (i + 1 < params.decoder.size()) x = gelu(x);
  }
  return x;
}

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& output, const Tensor<T>& clean) {
  return mse_loss(output, clean);
}

template struct NrcaParams<float>;
template struct NrcaParams<double>;
template Tensor<float> nrca_forward<float>(const Tensor<float>&, const NrcaParams<float>&,
                                           const NrcaConfig&);
template Tensor<double> nrca_forward<double>(const Tensor<double>&, const NrcaParams<double>&,
                                             const NrcaConfig&);
template Tensor<float> reconstruction_loss<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> reconstruction_loss<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace fcfl
