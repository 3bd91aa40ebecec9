#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fcfl/checkpoint.hpp"
#include "fcfl/config.hpp"
#include "fcfl/data.hpp"
#include "fcfl/errors.hpp"
#include "fcfl/gradient_suite.hpp"
#include "fcfl/train.hpp"

using namespace fcfl;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> class_names() {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < kNumClasses; ++c) out.push_back(to_string(label_from_index(c)));
  return out;
}

struct DataOptions {
  std::string dir;
  std::size_t tile_grid = 0;
  std::size_t synth_per_class = 32;
  std::uint64_t synth_seed = 0;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--data", dir, "image directory <root>/<label>/<file>.pgm|ppm (synthetic data if omitted)");
    cmd.add_option("--tile", tile_grid, "split every image into a grid x grid set of tiles first");
    cmd.add_option("--synth-per-class", synth_per_class, "synthetic images per class when --data is omitted")
        ->check(CLI::PositiveNumber);
    cmd.add_option("--synth-seed", synth_seed, "seed of the synthetic data");
  }

  std::vector<LabeledImage> load(std::size_t image_size, std::size_t channels) const {
    // Synthetic images are generated at the pre-tiling size.
    const std::size_t synth_size = image_size * std::max<std::size_t>(tile_grid, 1);
    std::vector<LabeledImage> images =
        dir.empty() ? synth_dataset(synth_per_class, synth_size, synth_seed, channels).items
                    : load_image_dir(dir);
    if (tile_grid == 0) return images;
    std::vector<LabeledImage> tiles;
    for (const auto& img : images) {
      const auto parts = tile_image(img.pixels, tile_grid);
      for (std::size_t t = 0; t < parts.size(); ++t) {
        LabeledImage tile = img;
        tile.pixels = parts[t];
        tile.source_id = img.source_id + "#" + std::to_string(t);
        tiles.push_back(std::move(tile));
      }
    }
    return tiles;
  }
};

RunConfig resolve_config(const std::string& path, bool toy) {
  const RunConfig base = toy ? RunConfig::toy() : RunConfig::paper_default();
  return path.empty() ? base : load_run_config(path, base);
}

void apply_seed(RunConfig& cfg, std::optional<std::uint64_t> seed) {
  if (!seed) return;
  cfg.model.seed = *seed;
  cfg.train.seed = *seed;
  cfg.split.seed = *seed;
  cfg.augment.seed = *seed;
}

void print_summary(const EvaluationReport& r, std::ostream& out) {
  const auto m = scalar_metrics(r);
  for (const char* key : {"accuracy", "macro.precision", "macro.recall", "macro.f1", "auc.macro", "auc.micro"}) {
    const auto it = m.find(key);
    if (it != m.end()) out << key << "\t" << it->second << "\n";
  }
}

Split report_split(const LabeledDataset& data) {
  if (data.count(Split::test) > 0) return Split::test;
  if (data.count(Split::val) > 0) return Split::val;
  return Split::train;
}

int run_train(const std::string& config_path, bool toy, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> epochs, const std::string& out, const std::string& resume,
              const DataOptions& data_opts) {
  RunConfig cfg = resolve_config(config_path, toy);
  apply_seed(cfg, seed);
  if (epochs) cfg.train.epochs = *epochs;
  cfg.validate();

  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "config.json", to_json(cfg).dump(2) + "\n");

  LabeledDataset data =
      make_splits(data_opts.load(cfg.model.image_size, cfg.model.nrca.image_channels), cfg.split);
  write_split_manifest(out_dir / "splits.tsv", data);
  prepare_training_data(data, cfg);
  data.check_invariants();
  std::cerr << "train " << data.count(Split::train) << ", val " << data.count(Split::val) << ", test "
            << data.count(Split::test) << " images; config " << config_hash(cfg) << "\n";

  TrainOptions opts;
  opts.out_dir = out_dir;
  if (!resume.empty()) opts.resume_from = fs::path(resume);
  std::cout << epoch_log_header() << "\n";
  opts.on_epoch = [](const EpochLog& e) { std::cout << format_epoch_log(e) << std::endl; };
  const TrainResult result = train(cfg, data, opts);

  const Split split = report_split(data);
  const EvaluationReport report = evaluate(result.final_checkpoint, data, split);
  write_report(out_dir / "report", report, class_names());
  std::cout << "final model on " << to_string(split) << " split:\n";
  print_summary(report, std::cout);
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& manifest, const std::string& split_name,
             const std::string& out, const DataOptions& data_opts) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Split split = split_from_string(split_name);
  auto images = data_opts.load(ck.config.model.image_size, ck.config.model.nrca.image_channels);
  LabeledDataset data;
  if (manifest.empty()) {
    for (auto& img : images) img.split = split;
    data.items = std::move(images);
  } else {
    data = apply_split_manifest(std::move(images), manifest);
  }
  const EvaluationReport report = evaluate(ck, data, split);
  if (!out.empty()) write_report(out, report, class_names());
  std::cout << "checkpoint epoch " << ck.epoch << ", " << report.cm.total() << " images on "
            << to_string(split) << " split:\n";
  print_summary(report, std::cout);
  return 0;
}

int run_ablate(const std::string& config_path, bool toy, std::optional<std::uint64_t> seed,
               const std::string& which, std::size_t epochs, const std::string& out,
               const DataOptions& data_opts) {
  RunConfig cfg = resolve_config(config_path, toy);
  apply_seed(cfg, seed);
  cfg.validate();
  LabeledDataset data =
      make_splits(data_opts.load(cfg.model.image_size, cfg.model.nrca.image_channels), cfg.split);
  prepare_training_data(data, cfg);

  std::vector<AblationKind> kinds;
  if (which == "all")
    kinds = {AblationKind::patch_size, AblationKind::nrca, AblationKind::head};
  else
    kinds = {ablation_kind_from_string(which)};

  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  for (AblationKind kind : kinds) {
    std::cerr << "ablation " << to_string(kind) << ": training each variant for " << epochs << " epochs\n";
    const AblationTable table = ablate(cfg, kind, data, epochs);
    const std::string stem = "ablation_" + to_string(kind);
    write_file_atomic(out_dir / (stem + ".json"), to_json(table).dump(2) + "\n");
    const std::string tsv = ablation_tsv(table);
    write_file_atomic(out_dir / (stem + ".tsv"), tsv);
    std::cout << tsv << "\n";
  }
  return 0;
}

int run_synth(const std::string& out, std::size_t per_class, std::size_t size, std::uint64_t seed,
              std::size_t channels) {
  const LabeledDataset d = synth_dataset(per_class, size, seed, channels);
  write_image_dir(out, d.items);
  std::cout << "wrote " << d.items.size() << " images to " << out << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed, double tolerance, std::optional<double> epsilon) {
  const GradSuiteReport r = run_gradient_suite(seed, tolerance, epsilon);
  std::printf("%-18s %6s %14s  %s\n", "op", "cases", "worst rel err", "status");
  for (const auto& op : r.ops()) {
    bool ok = true;
    for (const auto& c : r.cases)
      if (c.op == op) ok = ok && c.pass;
    std::printf("%-18s %6zu %14.3e  %s\n", op.c_str(), r.case_count(op), r.worst_error(op),
                ok ? "ok" : "FAIL");
  }
  for (const auto& c : r.cases)
    if (!c.pass)
      std::printf("  failed: %s %s (eps %.0e) rel err %.3e at %s\n", c.op.c_str(), c.shape.c_str(),
                  c.epsilon, c.max_relative_error, c.worst_at.c_str());
  std::printf("%zu cases, tolerance %.0e, %.2f s, %s\n", r.cases.size(), r.tolerance, r.seconds,
              r.pass() ? "all passed" : "FAILURES");
  return r.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale cross-fusion transformer classifier with a noise-reduction autoencoder"};
  app.require_subcommand(1);

  std::string config_path, out, resume, checkpoint, manifest, split_name = "test", which = "all";
  bool toy = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::size_t ablate_epochs = kAblationEpochs;
  DataOptions train_data, eval_data, ablate_data;

  auto* train_cmd = app.add_subcommand("train", "train a model and write the log, checkpoints and a report");
  train_cmd->add_option("--config", config_path, "JSON config overlaid on the defaults")->check(CLI::ExistingFile);
  train_cmd->add_flag("--toy", toy, "start from the small 48x48 configuration");
  train_cmd->add_option("--seed", seed, "seed for weights, batching, splits and augmentation");
  train_cmd->add_option("--epochs", epochs, "override train.epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", out, "output directory")->required();
  train_cmd->add_option("--resume", resume, "checkpoint directory to continue from")->check(CLI::ExistingDirectory);
  train_data.add_to(*train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--manifest", manifest, "split manifest written by train (all images are used otherwise)")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split_name, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--out", out, "write report.json and ROC curves here");
  eval_data.add_to(*eval_cmd);

  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate the ablation variants");
  ablate_cmd->add_option("--config", config_path, "JSON config overlaid on the defaults")->check(CLI::ExistingFile);
  ablate_cmd->add_flag("--toy", toy, "start from the small 48x48 configuration");
  ablate_cmd->add_option("--seed", seed, "seed shared by every variant");
  ablate_cmd->add_option("--which", which, "patch_size, nrca, head or all")
      ->check(CLI::IsMember({"patch_size", "nrca", "head", "all"}));
  ablate_cmd->add_option("--epochs", ablate_epochs, "epoch budget per variant")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--out", out, "output directory")->required();
  ablate_data.add_to(*ablate_cmd);

  std::size_t per_class = 32, size = 48, channels = 3;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth-data", "write a synthetic three-class image directory");
  synth_cmd->add_option("--out", out, "output directory")->required();
  synth_cmd->add_option("--per-class", per_class, "images per class")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", size, "image side in pixels")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--channels", channels, "1 (PGM) or 3 (PPM)")->check(CLI::IsMember({1, 3}));
  synth_cmd->add_option("--seed", synth_seed, "generator seed");

  std::uint64_t gc_seed = 0;
  double tolerance = 1e-6;
  std::optional<double> epsilon;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gc_cmd->add_option("--seed", gc_seed, "seed for shapes and values");
  gc_cmd->add_option("--tolerance", tolerance, "maximum relative error")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--epsilon", epsilon, "use one finite-difference step for every op")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(config_path, toy, seed, epochs, out, resume, train_data);
    if (*eval_cmd) return run_eval(checkpoint, manifest, split_name, out, eval_data);
    if (*ablate_cmd) return run_ablate(config_path, toy, seed, which, ablate_epochs, out, ablate_data);
    if (*synth_cmd) return run_synth(out, per_class, size, synth_seed, channels);
    if (*gc_cmd) return run_gradcheck(gc_seed, tolerance, epsilon);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
