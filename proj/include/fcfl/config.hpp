#pragma once

// Run configuration: model architecture, training hyperparameters, split
// protocol and augmentation, read from and written to JSON. Unknown keys are
// rejected so that typos do not silently fall back to defaults.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "fcfl/data.hpp"
#include "fcfl/model.hpp"
#include "json.hpp"

namespace fcfl {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 500;
  double lr0 = 1e-4;
  double decay_factor = 0.5;
  std::size_t decay_every = 30;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double reconstruction_weight = 0.0;  // lambda on the NRCA reconstruction term
  double grad_clip_norm = 0.0;         // 0 disables clipping
  bool balance_classes = false;        // noise-based top-up of the train split
  bool augment = false;                // one geometric copy per train item
  std::uint64_t seed = 0;              // batch order and augmentation

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SplitSpec split;
  AugmentSpec augment;

  void validate() const;
  // Full-size defaults.
  static RunConfig paper_default();
  // Desk-scale toy: 48x48, embed 32/64, N = M = K = 1, batch 8.
  static RunConfig toy();
};

// Overlays `j` on `base`; throws ConfigError naming any unknown key.
RunConfig parse_run_config(const nlohmann::json& j, RunConfig base);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base);
nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const ModelConfig& config);
ModelConfig parse_model_config(const nlohmann::json& j, ModelConfig base);

// Short stable digest of the serialised config, for report metadata.
std::string config_hash(const RunConfig& config);

}  // namespace fcfl
