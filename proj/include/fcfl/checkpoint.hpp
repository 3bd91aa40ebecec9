#pragma once

// Checkpoint directory: manifest.json (schema version, run config, parameter
// names/shapes/offsets, blob checksum, training state) and params.bin, a
// little-endian float32 blob holding parameters, then first moments, then
// second moments. Both files are written to a temporary name and renamed.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fcfl/config.hpp"
#include "fcfl/data.hpp"
#include "fcfl/model.hpp"
#include "fcfl/optim.hpp"

namespace fcfl {

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  int schema_version = kCheckpointSchemaVersion;
  RunConfig config;
  ParamList<float> params;  // deep copies, model order
  AdamWState<float> optimizer;
  std::size_t epoch = 0;      // last completed epoch
  NormStats norm;
  std::string rng_state;      // textual engine state of the batch-order generator
  double best_val_accuracy = 0.0;
};

// Snapshot of a live model; parameters and moments are cloned.
Checkpoint make_checkpoint(const RunConfig& config, const Model<float>& model,
                           const AdamWState<float>& optimizer, std::size_t epoch,
                           const NormStats& norm, const std::string& rng_state,
                           double best_val_accuracy);

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Builds a model from the checkpoint's config and copies its parameters in.
Model<float> restore_model(const Checkpoint& ckpt);

// Writes `bytes` to path atomically (temporary file, then rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace fcfl
