#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fcfl/data.hpp"
#include "fcfl/errors.hpp"

using namespace fcfl;
namespace fs = std::filesystem;

namespace {

Tensor<float> ramp(std::size_t c, std::size_t h, std::size_t w) {
  Tensor<float> t(Shape{c, h, w});
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(i % 9973) / 9973.0f;
  return t;
}

std::vector<LabeledImage> make_items(std::size_t n) {
  std::vector<LabeledImage> items;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledImage it;
    it.pixels = Tensor<float>(Shape{1, 2, 2}, 0.5f);
    it.label = label_from_index(i % 3);
    it.source_id = "img" + std::to_string(i);
    items.push_back(std::move(it));
  }
  return items;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("fcfl_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("tiling a 1024x1024 image into 16 tiles reassembles bitwise") {
  auto img = ramp(3, 1024, 1024);
  auto tiles = tile_image(img);
  REQUIRE(tiles.size() == 16);
  for (const auto& t : tiles) CHECK(t.shape() == Shape{3, 256, 256});

  // Tile (row 2, col 3) is input[512:768, 768:1024].
  const auto& t = tiles[2 * 4 + 3];
  bool same = true;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 256; ++y)
      for (std::size_t x = 0; x < 256; ++x)
        same = same && t[(c * 256 + y) * 256 + x] == img[(c * 1024 + 512 + y) * 1024 + 768 + x];
  CHECK(same);

  auto back = untile_image(tiles);
  REQUIRE(back.shape() == img.shape());
  CHECK(std::equal(back.data().begin(), back.data().end(), img.data().begin()));

  CHECK_THROWS_AS(tile_image(ramp(1, 1022, 1024)), DimensionError);
  CHECK(tile_image(ramp(1, 48, 48)).size() == 16);
}

TEST_CASE("make_splits arithmetic, determinism and partition") {
  auto items = make_items(18304);
  SplitSpec spec{750, 0.8, 7};
  auto a = make_splits(items, spec);
  CHECK(a.count(Split::test) == 750);
  CHECK(a.count(Split::train) == 14043);
  CHECK(a.count(Split::val) == 3511);

  auto b = make_splits(items, spec);
  for (std::size_t i = 0; i < items.size(); ++i) CHECK(a.items[i].split == b.items[i].split);

  spec.seed = 8;
  auto c = make_splits(items, spec);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < items.size(); ++i) moved += a.items[i].split != c.items[i].split;
  CHECK(moved > 0);

  CHECK_THROWS_AS(make_splits(make_items(10), SplitSpec{10, 0.8, 1}), ConfigError);
  CHECK_THROWS_AS(make_splits(make_items(10), SplitSpec{2, 1.0, 1}), ConfigError);
}

TEST_CASE("grouped splits keep a source's tiles together") {
  std::vector<LabeledImage> items;
  for (std::size_t s = 0; s < 40; ++s)
    for (std::size_t t = 0; t < 16; ++t) {
      LabeledImage it;
      it.pixels = Tensor<float>(Shape{1, 1, 1}, 0.0f);
      it.source_id = "slide" + std::to_string(s) + "#" + std::to_string(t);
      items.push_back(it);
    }
  SplitSpec spec{100, 0.8, 3, true};
  auto d = make_splits(items, spec);
  std::map<std::string, std::set<Split>> seen;
  for (const auto& it : d.items) seen[it.source_id.substr(0, it.source_id.find('#'))].insert(it.split);
  for (const auto& [k, s] : seen) CHECK(s.size() == 1);
  CHECK(d.count(Split::test) >= 100);
  CHECK(d.count(Split::test) + d.count(Split::train) + d.count(Split::val) == items.size());
}

TEST_CASE("balance_classes equalises {536, 263, 345}") {
  std::vector<LabeledImage> train;
  const std::array<std::size_t, 3> counts{536, 263, 345};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      LabeledImage it;
      it.pixels = Tensor<float>(Shape{1, 4, 4}, 0.5f);
      it.label = label_from_index(c);
      it.source_id = std::to_string(c) + "/" + std::to_string(i);
      train.push_back(it);
    }
  AugmentSpec spec;
  auto out = balance_classes(train, spec);
  std::array<std::size_t, 3> got{};
  std::size_t aug = 0;
  for (const auto& it : out) {
    ++got[static_cast<std::size_t>(it.label)];
    aug += it.augmented;
  }
  CHECK(got == std::array<std::size_t, 3>{536, 536, 536});
  CHECK(aug == (536 - 263) + (536 - 345));
  // Originals retained in order.
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(out[i].source_id == train[i].source_id);

  auto balanced = std::vector<LabeledImage>(out.begin(), out.end());
  for (auto& it : balanced) it.augmented = false;
  auto again = balance_classes(balanced, spec);
  CHECK(again.size() == balanced.size());

  std::vector<LabeledImage> missing(train.begin(), train.begin() + 536);
  CHECK_THROWS_AS(balance_classes(missing, spec), DataError);
}

TEST_CASE("noisy copies differ but keep the mean") {
  const std::size_t n = 64 * 64;
  Tensor<float> px(Shape{1, 64, 64}, 0.5f);
  const double sigma = 0.05;
  Rng rng = item_rng(1, 2);
  auto g = add_noise(px, sigma, 0.0, rng);
  double diff = 0.0;
  bool differs = false;
  for (std::size_t i = 0; i < n; ++i) {
    diff += g[i] - 0.5;
    differs = differs || g[i] != 0.5f;
  }
  CHECK(differs);
  CHECK(std::abs(diff / n) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));

  // Shot noise alone at scale 255 has variance p/255.
  auto s = add_noise(px, 0.0, 255.0, rng);
  double sm = 0.0;
  for (std::size_t i = 0; i < n; ++i) sm += s[i] - 0.5;
  CHECK(std::abs(sm / n) < 3.0 * std::sqrt(0.5 / 255.0) / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("augment: null spec, rotation group, translation oracle") {
  LabeledImage img;
  img.pixels = ramp(2, 10, 10);
  img.label = Label::viable;
  Rng rng(5);
  auto same = augment(img, AugmentSpec::none(), rng);
  CHECK(std::equal(same.pixels.data().begin(), same.pixels.data().end(), img.pixels.data().begin()));
  CHECK_FALSE(same.augmented);

  auto r = img.pixels;
  for (int i = 0; i < 4; ++i) r = rotate90(r);
  CHECK(std::equal(r.data().begin(), r.data().end(), img.pixels.data().begin()));

  // One quarter turn counterclockwise moves the top-right corner to top-left.
  auto q = rotate90(ramp(1, 3, 4));
  CHECK(q.shape() == Shape{1, 4, 3});
  CHECK(q[0] == ramp(1, 3, 4)[3]);

  // Shift right by 0.1 W with constant fill: the left 10% of columns are fill.
  auto shifted = affine_transform(img.pixels, {0, 1.0, 0.0, 0.0}, FillMode::constant, -7.0f);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 10; ++y) {
      CHECK(shifted[(c * 10 + y) * 10] == -7.0f);
      for (std::size_t x = 1; x < 10; ++x)
        CHECK(shifted[(c * 10 + y) * 10 + x] == img.pixels[(c * 10 + y) * 10 + x - 1]);
    }

  // Reflect and nearest never invent values outside the source.
  for (FillMode m : {FillMode::reflect, FillMode::nearest}) {
    auto t = affine_transform(img.pixels, {1, -3.0, 2.0, 0.2}, m);
    std::set<float> src(img.pixels.data().begin(), img.pixels.data().end());
    for (float v : t.data()) CHECK(src.count(v) == 1);
  }

  AugmentSpec spec;
  Rng a(9), b(9);
  auto x = augment(img, spec, a), y = augment(img, spec, b);
  CHECK(std::equal(x.pixels.data().begin(), x.pixels.data().end(), y.pixels.data().begin()));
  CHECK(x.label == Label::viable);
}

TEST_CASE("augment_train_split never touches test items") {
  auto d = make_splits(make_items(60), SplitSpec{10, 0.8, 1});
  const std::size_t train = d.count(Split::train);
  augment_train_split(d, AugmentSpec{});
  CHECK(d.items.size() == 60 + train);
  for (const auto& it : d.items)
    if (it.augmented) CHECK(it.split == Split::train);
  d.items[0].split = Split::test;
  d.items[0].augmented = true;
  CHECK_THROWS_AS(d.check_invariants(), DataError);
}

TEST_CASE("synth_dataset is balanced, seeded and nearest-centroid separable") {
  auto d = synth_dataset(20, 48, 11);
  CHECK(d.items.size() == 60);
  CHECK(d.class_counts(Split::train) == std::array<std::size_t, 3>{20, 20, 20});
  auto e = synth_dataset(20, 48, 11);
  for (std::size_t i = 0; i < 60; ++i)
    CHECK(std::equal(d.items[i].pixels.data().begin(), d.items[i].pixels.data().end(),
                     e.items[i].pixels.data().begin()));

  // Centroids from one half, classify the other half.
  const std::size_t n = d.items[0].pixels.numel();
  std::vector<std::vector<double>> centroid(3, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < 30; ++i) {
    const auto& it = d.items[i];
    for (std::size_t p = 0; p < n; ++p) centroid[static_cast<std::size_t>(it.label)][p] += it.pixels[p] / 10.0;
  }
  std::size_t correct = 0;
  for (std::size_t i = 30; i < 60; ++i) {
    const auto& it = d.items[i];
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < 3; ++c) {
      double dist = 0;
      for (std::size_t p = 0; p < n; ++p) dist += (it.pixels[p] - centroid[c][p]) * (it.pixels[p] - centroid[c][p]);
      if (dist < best_d) best_d = dist, best = c;
    }
    correct += best == static_cast<std::size_t>(it.label);
  }
  CHECK(static_cast<double>(correct) / 30.0 > 0.8);
}

TEST_CASE("image directory round trip and layout contract") {
  auto root = scratch("dir");
  CHECK(load_image_dir(root).empty());

  auto d = synth_dataset(2, 8, 3);
  write_image_dir(root, d.items);
  auto loaded = load_image_dir(root);
  REQUIRE(loaded.size() == 6);
  std::size_t necrotic = 0;
  for (const auto& it : loaded) {
    if (it.source_id.rfind("necrotic/", 0) == 0) {
      CHECK(it.label == Label::necrotic);
      ++necrotic;
    }
    CHECK(it.pixels.shape() == Shape{3, 8, 8});
  }
  CHECK(necrotic == 2);

  {
    std::ofstream f(root / "nontumor" / "white.pgm", std::ios::binary);
    f << "P5\n# comment\n2 1\n255\n" << static_cast<char>(255) << static_cast<char>(0);
  }
  auto white = read_pnm(root / "nontumor" / "white.pgm");
  CHECK(white[0] == 1.0f);
  CHECK(white[1] == 0.0f);

  {
    std::ofstream f(root / "viable" / "broken.pgm");
    f << "P5\n4 4\n255\nxx";
  }
  try {
    load_image_dir(root);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("broken.pgm") != std::string::npos);
  }
  fs::remove(root / "viable" / "broken.pgm");

  fs::create_directories(root / "stroma");
  CHECK_THROWS_AS(load_image_dir(root), DataError);
  fs::remove_all(root);
}

TEST_CASE("split manifest round trip") {
  auto root = scratch("manifest");
  auto images = make_items(30);
  auto d = make_splits(images, SplitSpec{6, 0.8, 2});
  write_split_manifest(root / "splits.tsv", d);
  auto rows = read_split_manifest(root / "splits.tsv");
  REQUIRE(rows.size() == 30);
  CHECK(rows[0][0] == "img0");
  auto again = apply_split_manifest(images, root / "splits.tsv");
  for (std::size_t i = 0; i < 30; ++i) CHECK(again.items[i].split == d.items[i].split);
  images.push_back(make_items(31).back());
  CHECK_THROWS_AS(apply_split_manifest(images, root / "splits.tsv"), DataError);
  fs::remove_all(root);
}

TEST_CASE("normalisation statistics come from the train split only") {
  LabeledDataset d;
  for (float v : {0.2f, 0.4f}) {
    LabeledImage it;
    it.pixels = Tensor<float>(Shape{2, 2, 2}, v);
    d.items.push_back(it);
  }
  LabeledImage test;
  test.pixels = Tensor<float>(Shape{2, 2, 2}, 100.0f);
  test.split = Split::test;
  d.items.push_back(test);
  auto s = compute_norm_stats(d);
  CHECK(s.mean[0] == doctest::Approx(0.3));
  CHECK(s.stddev[1] == doctest::Approx(0.1));
  auto b = make_batch(d, {0, 1}, s);
  CHECK(b.images.shape() == Shape{2, 2, 2, 2});
  CHECK(b.images[0] == doctest::Approx(-1.0));
  CHECK(b.images[8] == doctest::Approx(1.0));
}
