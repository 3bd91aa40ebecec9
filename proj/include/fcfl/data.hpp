#pragma once

// Dataset ingestion, tiling and split protocol, noise-based class balancing,
// geometric augmentation and a synthetic three-class texture set.
//
// Images are float tensors [C,H,W] with values in [0,1]; normalisation to
// zero mean / unit variance happens only when batches are assembled.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fcfl/params.hpp"
#include "fcfl/tensor.hpp"

namespace fcfl {

enum class Label : std::uint8_t { nontumor = 0, necrotic = 1, viable = 2 };
inline constexpr std::size_t kNumClasses = 3;

std::string to_string(Label label);
Label label_from_string(const std::string& name);
Label label_from_index(std::size_t index);

enum class Split : std::uint8_t { train, val, test };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct LabeledImage {
  Tensor<float> pixels;  // [C,H,W]
  Label label = Label::nontumor;
  std::string source_id;
  Split split = Split::train;
  bool augmented = false;
};

struct LabeledDataset {
  std::vector<LabeledImage> items;

  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }
  std::array<std::size_t, kNumClasses> class_counts(Split split) const;
  // Throws DataError if any augmented item sits in the test split or an
  // image has non-finite pixels.
  void check_invariants() const;
};

struct SplitSpec {
  std::size_t test_count = 750;
  double train_val_ratio = 0.8;
  std::uint64_t seed = 0;
  // Keep every tile of one source image in the same split. The group key is
  // the source_id up to the first '#'.
  bool group_by_source = false;

  void validate() const;
};

enum class FillMode { reflect, nearest, constant };
std::string to_string(FillMode mode);
FillMode fill_mode_from_string(const std::string& name);

struct AugmentSpec {
  bool rotation = true;             // random multiple of 90 degrees
  double translate_fraction = 0.1;  // max shift as a fraction of width/height
  double shear_radians = 0.2;       // max counterclockwise shear angle
  FillMode fill_mode = FillMode::reflect;
  float fill_value = 0.0f;
  double gaussian_sigma = 0.02;
  double shot_noise_scale = 255.0;  // 0 disables shot noise
  std::uint64_t seed = 0;

  void validate() const;
  static AugmentSpec none();
};

// Independent generator for one item, so results do not depend on which
// worker handles it or in what order.
Rng item_rng(std::uint64_t seed, std::uint64_t index);

// Fisher-Yates driven directly by the engine, so the permutation does not
// depend on the standard library's distribution implementations.
void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng);

// Partition [C,H,W] into a grid x grid set of tiles, row-major.
std::vector<Tensor<float>> tile_image(const Tensor<float>& image, std::size_t grid = 4);
Tensor<float> untile_image(const std::vector<Tensor<float>>& tiles, std::size_t grid = 4);

LabeledDataset make_splits(std::vector<LabeledImage> images, const SplitSpec& spec);

// Shot noise (Poisson of pixel*scale, divided by scale) then additive
// Gaussian noise, clamped back to [0,1].
Tensor<float> add_noise(const Tensor<float>& pixels, double gaussian_sigma,
                        double shot_noise_scale, Rng& rng);

// Tops up every minority class with noisy copies of its own images (cycled
// in input order) until all classes match the majority count.
std::vector<LabeledImage> balance_classes(const std::vector<LabeledImage>& train,
                                          const AugmentSpec& spec);

struct AffineParams {
  std::size_t quarter_turns = 0;  // counterclockwise
  double shift_x = 0.0;           // pixels, positive moves content right
  double shift_y = 0.0;           // pixels, positive moves content down
  double shear = 0.0;             // radians
};

Tensor<float> rotate90(const Tensor<float>& pixels, std::size_t quarter_turns = 1);
Tensor<float> affine_transform(const Tensor<float>& pixels, const AffineParams& params,
                               FillMode fill, float fill_value = 0.0f);
AffineParams sample_affine(const AugmentSpec& spec, std::size_t height, std::size_t width,
                           Rng& rng);
LabeledImage augment(const LabeledImage& image, const AugmentSpec& spec, Rng& rng);

// Appends one augmented copy per train item; item i uses item_rng(seed, i).
void augment_train_split(LabeledDataset& data, const AugmentSpec& spec);

// Three classes of oriented stripe textures with a class-specific tint and
// additive noise.
LabeledDataset synth_dataset(std::size_t num_per_class, std::size_t image_size,
                             std::uint64_t seed, std::size_t channels = 3);

// <root>/<label>/<file>, files in binary PGM (P5) or PPM (P6), 8-bit.
std::vector<LabeledImage> load_image_dir(const std::filesystem::path& root);
Tensor<float> read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Tensor<float>& pixels);
// Writes the images under root in the layout load_image_dir reads.
void write_image_dir(const std::filesystem::path& root, const std::vector<LabeledImage>& images);

// Tab-separated (source_id, label, split), one line per item.
void write_split_manifest(const std::filesystem::path& path, const LabeledDataset& data);
std::vector<std::array<std::string, 3>> read_split_manifest(const std::filesystem::path& path);
// Re-applies a manifest to images matched by source_id.
LabeledDataset apply_split_manifest(std::vector<LabeledImage> images,
                                    const std::filesystem::path& path);

struct NormStats {
  std::vector<float> mean;
  std::vector<float> stddev;

  bool empty() const { return mean.empty(); }
};

// Per-channel statistics over the train split.
NormStats compute_norm_stats(const LabeledDataset& data);

struct Batch {
  Tensor<float> images;  // [B,C,H,W], normalised
  std::vector<std::size_t> labels;
};

Batch make_batch(const LabeledDataset& data, const std::vector<std::size_t>& indices,
                 const NormStats& stats);

}  // namespace fcfl
