#include "fcfl/model.hpp"

#include "fcfl/ops.hpp"

namespace fcfl {

void ModelConfig::validate() const {
  branch_small.validate();
  branch_large.validate();
  fusion.validate();
  head.validate();
  if (nrca.enabled) {
    nrca.validate();
    if (image_size % nrca.required_divisor() != 0)
      throw ConfigError("model: image_size " + std::to_string(image_size) +
                        " must be divisible by " + std::to_string(nrca.required_divisor()) +
                        " for the NRCA encoder depth");
  }
  if (image_size == 0) throw ConfigError("model: image_size must be > 0");
}

ModelConfig ModelConfig::paper_default() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.image_size = 48;
  c.branch_small = {12, 32, 48, 1, 2};
  c.branch_large = {16, 64, 48, 1, 4};
  c.fusion = {1};
  c.nrca.encoder_channels = {8, 16};
  c.nrca.latent_channels = 16;
  return c;
}

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  if (config_.nrca.enabled) nrca_ = NrcaParams<T>::init(config_.nrca, rng);
  fusion_ = FusionParams<T>::init(config_.branch_small, config_.branch_large, config_.fusion,
                                  config_.nrca.image_channels, rng);
  head_ = HeadParams<T>::init(config_.head,
                              config_.branch_small.embed_dim + config_.branch_large.embed_dim, rng);
  nrca_.collect("nrca.", params_list_);
  fusion_.collect("fusion.", params_list_);
  head_.collect("head.", params_list_);
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_list_) n += p.tensor.numel();
  return n;
}

template <typename T>
ModelOutput<T> Model<T>::forward(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.nrca.image_channels ||
      images.dim(2) != config_.image_size || images.dim(3) != config_.image_size) {
    throw ContractError("model: expected [B," + std::to_string(config_.nrca.image_channels) + "," +
                        std::to_string(config_.image_size) + "," +
                        std::to_string(config_.image_size) + "] batch, got " +
                        shape_str(images.shape()));
  }
  ModelOutput<T> out;
  Tensor<T> x = images;
  if (config_.nrca.enabled) {
    out.reconstruction = nrca_forward(images, nrca_, config_.nrca);
    x = out.reconstruction;
  }
  const auto branch_input = [&](const BranchConfig& b) {
    return b.input_size == config_.image_size ? x
                                              : resize_bilinear(x, b.input_size, b.input_size);
  };
  BranchState<T> small = patch_embed(branch_input(config_.branch_small), config_.branch_small,
                                     fusion_.small_embed);
  BranchState<T> large = patch_embed(branch_input(config_.branch_large), config_.branch_large,
                                     fusion_.large_embed);
  auto [cls_small, cls_large] = fusion_stack_forward(small, large, fusion_);
  out.logits = head_forward(cls_small, cls_large, config_.head, head_);
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace fcfl
