#pragma once

// Joint training loop, evaluation, the three ablation harnesses and a
// reconstruction-only trainer for the noise-reduction autoencoder.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fcfl/checkpoint.hpp"
#include "fcfl/config.hpp"
#include "fcfl/data.hpp"
#include "fcfl/metrics.hpp"
#include "fcfl/model.hpp"

namespace fcfl {

struct EpochLog {
  std::size_t epoch = 0;  // zero-based; lr = lr_schedule(epoch)
  double lr = 0.0;
  double train_loss = 0.0;  // mean over the epoch's steps
  double train_accuracy = 0.0;  // running argmax accuracy during the epoch
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN without a val split
};

// Tab-separated epoch, lr, train_loss, val_acc.
std::string epoch_log_header();
std::string format_epoch_log(const EpochLog& log);

struct TrainOptions {
  // When set: train_log.tsv, checkpoints best/ and final/ are written here.
  std::filesystem::path out_dir;
  // Continue from a saved checkpoint (parameters, moments, rng, epoch).
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> log;
  Checkpoint final_checkpoint;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

// Applies the configured class balancing and augmentation to the train split
// in place. Test items are never touched.
void prepare_training_data(LabeledDataset& data, const RunConfig& config);

TrainResult train(const RunConfig& config, const LabeledDataset& data,
                  const TrainOptions& options = {});

// No-grad forward over a split; images must match the model's channels/size.
EvaluationReport evaluate(const Model<float>& model, const NormStats& norm,
                          const LabeledDataset& data, Split split, std::size_t batch_size = 32);
EvaluationReport evaluate(const Checkpoint& ckpt, const LabeledDataset& data, Split split);

enum class AblationKind { patch_size, nrca, head };
std::string to_string(AblationKind kind);
AblationKind ablation_kind_from_string(const std::string& name);

struct AblationVariant {
  std::string label;  // "(12,16)", "Yes", "No"
  ModelConfig model;
};

// Variant configs in table column order, derived from `base`.
std::vector<AblationVariant> ablation_variants(const ModelConfig& base, AblationKind which);

struct AblationRow {
  std::string label;
  ModelConfig model;
  EvaluationReport report;
};

struct AblationTable {
  AblationKind kind = AblationKind::patch_size;
  std::string header;  // table caption
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::string split;   // which split the accuracies come from
  std::vector<AblationRow> rows;
};

inline constexpr std::size_t kAblationEpochs = 100;

// Trains and evaluates each variant under the same seed and epoch budget.
AblationTable ablate(const RunConfig& base, AblationKind which, const LabeledDataset& data,
                     std::size_t epochs = kAblationEpochs);

nlohmann::json to_json(const AblationTable& table);
std::string ablation_tsv(const AblationTable& table);

struct DenoiseResult {
  NrcaParams<float> params;
  double identity_mse = 0.0;  // held-out MSE of the noisy input itself
  double model_mse = 0.0;     // held-out MSE of the reconstruction
  std::vector<double> loss_curve;
};

struct DenoiseSpec {
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  double lr = 1e-2;
  double noise_sigma = 0.25;
  std::size_t train_images = 64;
  std::size_t heldout_images = 32;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
};

// Smooth synthetic images in [0,1]: a sum of a few random low-frequency
// waves per channel.
Tensor<float> smooth_images(std::size_t count, std::size_t channels, std::size_t size, Rng& rng);

// Reconstruction-only training of the autoencoder on (noisy, clean) pairs.
DenoiseResult train_denoiser(const NrcaConfig& cfg, const DenoiseSpec& spec);

}  // namespace fcfl
