#include "fcfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "fcfl/errors.hpp"

namespace fcfl {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, kNumClasses> kLabelNames{"nontumor", "necrotic", "viable"};

// Unbiased draw in [0, n) straight from the engine, so shuffles do not depend
// on the standard library's distribution implementations.
std::uint64_t bounded(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - Rng::max() % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) std::iter_swap(first + (i - 1), first + bounded(rng, i));
}

void require_chw(const Tensor<float>& t, const char* op) {
  if (t.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected [C,H,W], got " + shape_str(t.shape()));
  }
}

std::string group_key(const std::string& source_id) {
  return source_id.substr(0, source_id.find('#'));
}

long map_index(long i, long n, FillMode mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case FillMode::nearest:
      return std::clamp(i, 0L, n - 1);
    case FillMode::reflect: {
      // Half-sample symmetric: ... c b a | a b c | c b a ...
      const long period = 2 * n;
      long m = i % period;
      if (m < 0) m += period;
      return m < n ? m : period - 1 - m;
    }
    case FillMode::constant:
      return -1;
  }
  return -1;
}

}  // namespace

std::string to_string(Label label) {
  const auto i = static_cast<std::size_t>(label);
  if (i >= kNumClasses) throw ContractError("invalid label " + std::to_string(i));
  return kLabelNames[i];
}

Label label_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (name == kLabelNames[i]) return static_cast<Label>(i);
  throw DataError("unknown label '" + name + "' (expected nontumor, necrotic or viable)");
}

Label label_from_index(std::size_t index) {
  if (index >= kNumClasses) throw ContractError("label index out of range: " + std::to_string(index));
  return static_cast<Label>(index);
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  throw ContractError("invalid split");
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + name + "'");
}

std::string to_string(FillMode mode) {
  switch (mode) {
    case FillMode::reflect:
      return "reflect";
    case FillMode::nearest:
      return "nearest";
    case FillMode::constant:
      return "constant";
  }
  throw ContractError("invalid fill mode");
}

FillMode fill_mode_from_string(const std::string& name) {
  if (name == "reflect") return FillMode::reflect;
  if (name == "nearest") return FillMode::nearest;
  if (name == "constant") return FillMode::constant;
  throw ConfigError("unknown fill mode '" + name + "'");
}

std::vector<std::size_t> LabeledDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].split == split) out.push_back(i);
  return out;
}

std::array<std::size_t, kNumClasses> LabeledDataset::class_counts(Split split) const {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& item : items)
    if (item.split == split) ++counts[static_cast<std::size_t>(item.label)];
  return counts;
}

void LabeledDataset::check_invariants() const {
  for (const auto& item : items) {
    if (item.augmented && item.split == Split::test)
      throw DataError("augmented image '" + item.source_id + "' is in the test split");
    for (float v : item.pixels.data())
      if (!std::isfinite(v)) throw DataError("non-finite pixel in '" + item.source_id + "'");
  }
}

void SplitSpec::validate() const {
  if (!(train_val_ratio > 0.0 && train_val_ratio < 1.0))
    throw ConfigError("train_val_ratio must be in (0,1), got " + std::to_string(train_val_ratio));
}

void AugmentSpec::validate() const {
  if (!(translate_fraction >= 0.0 && translate_fraction < 1.0))
    throw ConfigError("translate_fraction must be in [0,1)");
  if (!std::isfinite(shear_radians) || std::abs(std::cos(shear_radians)) < 1e-6)
    throw ConfigError("shear_radians must be finite and away from +-pi/2");
  if (!(gaussian_sigma >= 0.0) || !(shot_noise_scale >= 0.0))
    throw ConfigError("noise parameters must be non-negative");
}

AugmentSpec AugmentSpec::none() {
  AugmentSpec s;
  s.rotation = false;
  s.translate_fraction = 0.0;
  s.shear_radians = 0.0;
  s.gaussian_sigma = 0.0;
  s.shot_noise_scale = 0.0;
  return s;
}

void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng) {
  shuffle(indices.begin(), indices.end(), rng);
}

Rng item_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

std::vector<Tensor<float>> tile_image(const Tensor<float>& image, std::size_t grid) {
  require_chw(image, "tile_image");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (grid == 0 || h % grid != 0 || w % grid != 0) {
    throw DimensionError("tile_image: " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible into a " + std::to_string(grid) + "x" +
                         std::to_string(grid) + " grid");
  }
  const std::size_t th = h / grid, tw = w / grid;
  const auto src = image.data();
  std::vector<Tensor<float>> tiles;
  for (std::size_t r = 0; r < grid; ++r) {
    for (std::size_t q = 0; q < grid; ++q) {
      Tensor<float> tile(Shape{c, th, tw});
      auto dst = tile.data();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < th; ++y)
          std::copy_n(src.begin() + ((ch * h + r * th + y) * w + q * tw), tw,
                      dst.begin() + (ch * th + y) * tw);
      tiles.push_back(std::move(tile));
    }
  }
  return tiles;
}

Tensor<float> untile_image(const std::vector<Tensor<float>>& tiles, std::size_t grid) {
  if (grid == 0 || tiles.size() != grid * grid)
    throw DimensionError("untile_image: expected " + std::to_string(grid * grid) + " tiles, got " +
                         std::to_string(tiles.size()));
  const Shape ts = tiles.front().shape();
  if (ts.size() != 3) throw DimensionError("untile_image: tiles must be [C,H,W]");
  const std::size_t c = ts[0], th = ts[1], tw = ts[2], h = th * grid, w = tw * grid;
  Tensor<float> out(Shape{c, h, w});
  auto dst = out.data();
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].shape() != ts) throw DimensionError("untile_image: tiles differ in shape");
    const std::size_t r = i / grid, q = i % grid;
    const auto src = tiles[i].data();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < th; ++y)
        std::copy_n(src.begin() + (ch * th + y) * tw, tw,
                    dst.begin() + ((ch * h + r * th + y) * w + q * tw));
  }
  return out;
}

LabeledDataset make_splits(std::vector<LabeledImage> images, const SplitSpec& spec) {
  spec.validate();
  const std::size_t total = images.size();
  if (spec.test_count >= total) {
    throw ConfigError("test_count " + std::to_string(spec.test_count) +
                      " must be smaller than the number of images (" + std::to_string(total) +
                      ")");
  }
  Rng rng(spec.seed);

  // Units are single items, or whole source groups in grouped mode.
  std::vector<std::vector<std::size_t>> units;
  if (spec.group_by_source) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < total; ++i) groups[group_key(images[i].source_id)].push_back(i);
    for (auto& [key, members] : groups) units.push_back(std::move(members));
  } else {
    for (std::size_t i = 0; i < total; ++i) units.push_back({i});
  }
  shuffle(units.begin(), units.end(), rng);

  std::size_t u = 0, assigned = 0;
  for (; u < units.size() && assigned < spec.test_count; ++u) {
    for (std::size_t i : units[u]) images[i].split = Split::test;
    assigned += units[u].size();
  }
  const std::size_t rest = total - assigned;
  const auto train_target =
      static_cast<std::size_t>(std::floor(spec.train_val_ratio * static_cast<double>(rest)));
  std::size_t train = 0;
  for (; u < units.size(); ++u) {
    const Split s = train < train_target ? Split::train : Split::val;
    for (std::size_t i : units[u]) images[i].split = s;
    if (s == Split::train) train += units[u].size();
  }

  LabeledDataset out{std::move(images)};
  out.check_invariants();
  return out;
}

Tensor<float> add_noise(const Tensor<float>& pixels, double gaussian_sigma,
                        double shot_noise_scale, Rng& rng) {
  Tensor<float> out = pixels.clone();
  out.set_requires_grad(false);
  std::normal_distribution<double> gauss(0.0, gaussian_sigma > 0 ? gaussian_sigma : 1.0);
  for (auto& v : out.data()) {
    double x = std::clamp(static_cast<double>(v), 0.0, 1.0);
    if (shot_noise_scale > 0.0) {
      const double lambda = x * shot_noise_scale;
      if (lambda > 0.0) {
        std::poisson_distribution<long> shot(lambda);
        x = static_cast<double>(shot(rng)) / shot_noise_scale;
      }
    }
    if (gaussian_sigma > 0.0) x += gauss(rng);
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

std::vector<LabeledImage> balance_classes(const std::vector<LabeledImage>& train,
                                          const AugmentSpec& spec) {
  spec.validate();
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < train.size(); ++i)
    by_class[static_cast<std::size_t>(train[i].label)].push_back(i);
  std::size_t majority = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (by_class[c].empty())
      throw DataError("balance_classes: class '" + to_string(label_from_index(c)) +
                      "' has no images");
    majority = std::max(majority, by_class[c].size());
  }

  std::vector<LabeledImage> out = train;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& members = by_class[c];
    for (std::size_t k = 0; members.size() + k < majority; ++k) {
      const LabeledImage& src = train[members[k % members.size()]];
      Rng rng = item_rng(spec.seed, (static_cast<std::uint64_t>(c) << 32) | k);
      LabeledImage copy = src;
      copy.pixels = add_noise(src.pixels, spec.gaussian_sigma, spec.shot_noise_scale, rng);
      copy.source_id = src.source_id + "~noise" + std::to_string(k);
      copy.augmented = true;
      out.push_back(std::move(copy));
    }
  }
  return out;
}

Tensor<float> rotate90(const Tensor<float>& pixels, std::size_t quarter_turns) {
  require_chw(pixels, "rotate90");
  Tensor<float> cur = pixels.clone();
  cur.set_requires_grad(false);
  for (std::size_t t = 0; t < quarter_turns % 4; ++t) {
    const std::size_t c = cur.dim(0), h = cur.dim(1), w = cur.dim(2);
    Tensor<float> next(Shape{c, w, h});
    const auto src = cur.data();
    auto dst = next.data();
    // Counterclockwise: out[i][j] = in[j][w-1-i].
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < h; ++j)
          dst[(ch * w + i) * h + j] = src[(ch * h + j) * w + (w - 1 - i)];
    cur = next;
  }
  return cur;
}

Tensor<float> affine_transform(const Tensor<float>& pixels, const AffineParams& params,
                               FillMode fill, float fill_value) {
  Tensor<float> rotated = rotate90(pixels, params.quarter_turns);
  if (params.shift_x == 0.0 && params.shift_y == 0.0 && params.shear == 0.0) return rotated;

  const std::size_t c = rotated.dim(0), h = rotated.dim(1), w = rotated.dim(2);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double sin_s = std::sin(params.shear), cos_s = std::cos(params.shear);
  Tensor<float> out(Shape{c, h, w});
  const auto src = rotated.data();
  auto dst = out.data();
  // Forward map about the centre: x' = x - sin(s) y + tx, y' = cos(s) y + ty.
  // Each output pixel pulls from the nearest source pixel of the inverse map.
  for (std::size_t y = 0; y < h; ++y) {
    const double ys = (static_cast<double>(y) - cy - params.shift_y) / cos_s;
    const long sy = map_index(static_cast<long>(std::floor(ys + cy + 0.5)), static_cast<long>(h),
                              fill);
    for (std::size_t x = 0; x < w; ++x) {
      const double xs = static_cast<double>(x) - cx - params.shift_x + sin_s * ys;
      const long sx = map_index(static_cast<long>(std::floor(xs + cx + 0.5)),
                                static_cast<long>(w), fill);
      for (std::size_t ch = 0; ch < c; ++ch) {
        dst[(ch * h + y) * w + x] =
            (sx < 0 || sy < 0) ? fill_value
                               : src[(ch * h + static_cast<std::size_t>(sy)) * w +
                                     static_cast<std::size_t>(sx)];
      }
    }
  }
  return out;
}

AffineParams sample_affine(const AugmentSpec& spec, std::size_t height, std::size_t width,
                           Rng& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  AffineParams p;
  if (spec.rotation) p.quarter_turns = static_cast<std::size_t>(bounded(rng, 4));
  p.shift_x = std::round(unit(rng) * spec.translate_fraction * static_cast<double>(width));
  p.shift_y = std::round(unit(rng) * spec.translate_fraction * static_cast<double>(height));
  p.shear = unit(rng) * spec.shear_radians;
  return p;
}

LabeledImage augment(const LabeledImage& image, const AugmentSpec& spec, Rng& rng) {
  require_chw(image.pixels, "augment");
  const AffineParams p = sample_affine(spec, image.pixels.dim(1), image.pixels.dim(2), rng);
  LabeledImage out = image;
  out.pixels = affine_transform(image.pixels, p, spec.fill_mode, spec.fill_value);
  out.augmented = out.augmented || p.quarter_turns != 0 || p.shift_x != 0.0 ||
                  p.shift_y != 0.0 || p.shear != 0.0;
  return out;
}

void augment_train_split(LabeledDataset& data, const AugmentSpec& spec) {
  spec.validate();
  const auto train = data.indices(Split::train);
  std::vector<LabeledImage> extra(train.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < train.size(); ++i) {
    Rng rng = item_rng(spec.seed, i);
    extra[i] = augment(data.items[train[i]], spec, rng);
    extra[i].source_id += "~aug";
    extra[i].augmented = true;
  }
  for (auto& e : extra) data.items.push_back(std::move(e));
  data.check_invariants();
}

LabeledDataset synth_dataset(std::size_t num_per_class, std::size_t image_size,
                             std::uint64_t seed, std::size_t channels) {
  if (image_size == 0 || channels == 0) throw ConfigError("synth_dataset: empty image size");
  constexpr double kPeriod = 8.0;
  constexpr double kTint = 0.12;
  constexpr double kNoise = 0.05;
  LabeledDataset out;
  // Interleaved by class so any prefix of 3k items is balanced.
  for (std::size_t i = 0; i < num_per_class; ++i) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      Rng rng = item_rng(seed, i * kNumClasses + c);
      std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
      std::normal_distribution<double> noise(0.0, kNoise);
      const double phase = phase_dist(rng);
      Tensor<float> px(Shape{channels, image_size, image_size});
      auto d = px.data();
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const double tint = channels >= kNumClasses ? (ch == c ? kTint : -kTint / 2.0)
                                                    : kTint * (static_cast<double>(c) - 1.0);
        for (std::size_t y = 0; y < image_size; ++y) {
          for (std::size_t x = 0; x < image_size; ++x) {
            const double u = c == 0 ? static_cast<double>(y)
                             : c == 1 ? static_cast<double>(x)
                                      : static_cast<double>(x + y) / std::numbers::sqrt2;
            const double v = 0.5 + 0.25 * std::sin(2.0 * std::numbers::pi * u / kPeriod + phase) +
                             tint + noise(rng);
            d[(ch * image_size + y) * image_size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      LabeledImage item;
      item.pixels = px;
      item.label = label_from_index(c);
      item.source_id = "synth/" + to_string(item.label) + "/" + std::to_string(i);
      out.items.push_back(std::move(item));
    }
  }
  return out;
}

namespace {

std::string next_token(std::istream& in, const fs::path& path) {
  std::string tok;
  while (in >> std::ws) {
    if (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      continue;
    }
    in >> tok;
    return tok;
  }
  throw DataError("truncated image header in " + path.string());
}

}  // namespace

Tensor<float> read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::size_t w = 0, h = 0, maxval = 0, c = 0;
  try {
    const std::string magic = next_token(in, path);
    if (magic == "P5")
      c = 1;
    else if (magic == "P6")
      c = 3;
    else
      throw DataError("unsupported image format in " + path.string() + " (need P5 or P6)");
    w = std::stoul(next_token(in, path));
    h = std::stoul(next_token(in, path));
    maxval = std::stoul(next_token(in, path));
  } catch (const std::invalid_argument&) {
    throw DataError("malformed image header in " + path.string());
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255)
    throw DataError("unsupported image geometry or depth in " + path.string());
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> raw(w * h * c);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw DataError("truncated raster in " + path.string());

  Tensor<float> out(Shape{c, h, w});
  auto d = out.data();
  const float scale = static_cast<float>(maxval);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        d[(ch * h + y) * w + x] = static_cast<float>(raw[(y * w + x) * c + ch]) / scale;
  return out;
}

void write_pnm(const fs::path& path, const Tensor<float>& pixels) {
  require_chw(pixels, "write_pnm");
  const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  if (c != 1 && c != 3) throw DimensionError("write_pnm: need 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(w * h * c);
  const auto d = pixels.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = std::clamp(d[(ch * h + y) * w + x], 0.0f, 1.0f);
        raw[(y * w + x) * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

std::vector<LabeledImage> load_image_dir(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("not a directory: " + root.string());
  std::vector<fs::path> label_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) label_dirs.push_back(entry.path());
  }
  std::sort(label_dirs.begin(), label_dirs.end());

  std::vector<LabeledImage> out;
  for (const auto& dir : label_dirs) {
    const Label label = label_from_string(dir.filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      LabeledImage item;
      item.pixels = read_pnm(f);
      item.label = label;
      item.source_id = fs::relative(f, root).generic_string();
      out.push_back(std::move(item));
    }
  }
  return out;
}

void write_image_dir(const fs::path& root, const std::vector<LabeledImage>& images) {
  for (std::size_t c = 0; c < kNumClasses; ++c) fs::create_directories(root / kLabelNames[c]);
  std::map<Label, std::size_t> next;
  for (const auto& item : images) {
    const std::string ext = item.pixels.dim(0) == 1 ? ".pgm" : ".ppm";
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu", next[item.label]++);
    write_pnm(root / to_string(item.label) / (std::string(name) + ext), item.pixels);
  }
}

void write_split_manifest(const fs::path& path, const LabeledDataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split manifest " + path.string());
  for (const auto& item : data.items) {
    if (item.source_id.find_first_of("\t\n") != std::string::npos)
      throw DataError("source_id contains a tab or newline: " + item.source_id);
    out << item.source_id << '\t' << to_string(item.label) << '\t' << to_string(item.split) << '\n';
  }
}

std::vector<std::array<std::string, 3>> read_split_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path.string());
  std::vector<std::array<std::string, 3>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<std::string, 3> row;
    std::istringstream ss(line);
    std::size_t n = 0;
    std::string field;
    while (std::getline(ss, field, '\t')) {
      if (n < 3) row[n] = field;
      ++n;
    }
    if (n != 3)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    label_from_string(row[1]);
    split_from_string(row[2]);
    rows.push_back(std::move(row));
  }
  return rows;
}

LabeledDataset apply_split_manifest(std::vector<LabeledImage> images, const fs::path& path) {
  std::map<std::string, std::pair<Label, Split>> table;
  for (const auto& row : read_split_manifest(path))
    table[row[0]] = {label_from_string(row[1]), split_from_string(row[2])};
  for (auto& item : images) {
    auto it = table.find(item.source_id);
    if (it == table.end()) throw DataError("'" + item.source_id + "' missing from split manifest");
    if (it->second.first != item.label)
      throw DataError("label of '" + item.source_id + "' disagrees with the split manifest");
    item.split = it->second.second;
  }
  LabeledDataset out{std::move(images)};
  out.check_invariants();
  return out;
}

NormStats compute_norm_stats(const LabeledDataset& data) {
  const auto train = data.indices(Split::train);
  if (train.empty()) throw DataError("compute_norm_stats: empty train split");
  const std::size_t c = data.items[train.front()].pixels.dim(0);
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  double count = 0.0;
  for (std::size_t i : train) {
    const auto& px = data.items[i].pixels;
    if (px.dim(0) != c) throw DimensionError("compute_norm_stats: channel count differs");
    const std::size_t plane = px.dim(1) * px.dim(2);
    const auto d = px.data();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = d[ch * plane + p];
        sum[ch] += v;
        sq[ch] += v * v;
      }
    count += static_cast<double>(plane);
  }
  NormStats s;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = sum[ch] / count;
    const double var = std::max(0.0, sq[ch] / count - mean * mean);
    const double sd = std::sqrt(var);
    s.mean.push_back(static_cast<float>(mean));
    s.stddev.push_back(static_cast<float>(sd > 1e-6 ? sd : 1.0));
  }
  return s;
}

Batch make_batch(const LabeledDataset& data, const std::vector<std::size_t>& indices,
                 const NormStats& stats) {
  if (indices.empty()) throw ContractError("make_batch: empty index list");
  const Shape item_shape = data.items.at(indices.front()).pixels.shape();
  if (item_shape.size() != 3) throw DimensionError("make_batch: items must be [C,H,W]");
  const std::size_t c = item_shape[0], plane = item_shape[1] * item_shape[2];
  if (!stats.empty() && stats.mean.size() != c)
    throw DimensionError("make_batch: normalisation stats have " +
                         std::to_string(stats.mean.size()) + " channels, images have " +
                         std::to_string(c));
  Batch b;
  b.images = Tensor<float>(Shape{indices.size(), c, item_shape[1], item_shape[2]});
  auto dst = b.images.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& item = data.items.at(indices[k]);
    if (item.pixels.shape() != item_shape)
      throw DimensionError("make_batch: '" + item.source_id + "' has shape " +
                           shape_str(item.pixels.shape()) + ", expected " + shape_str(item_shape));
    const auto src = item.pixels.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float mean = stats.empty() ? 0.0f : stats.mean[ch];
      const float sd = stats.empty() ? 1.0f : stats.stddev[ch];
      for (std::size_t p = 0; p < plane; ++p)
        dst[(k * c + ch) * plane + p] = (src[ch * plane + p] - mean) / sd;
    }
    b.labels.push_back(static_cast<std::size_t>(item.label));
  }
  return b;
}

}  // namespace fcfl
