#include "fcfl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "fcfl/errors.hpp"
#include "fcfl/ops.hpp"
#include "fcfl/optim.hpp"

namespace fcfl {

namespace {

std::size_t argmax_row(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

void check_compatible(const ModelConfig& model, const LabeledDataset& data, Split split) {
  for (std::size_t i : data.indices(split)) {
    const Shape& s = data.items[i].pixels.shape();
    const Shape want{model.nrca.image_channels, model.image_size, model.image_size};
    if (s != want)
      throw ContractError("image '" + data.items[i].source_id + "' has shape " + shape_str(s) +
                          " but the model expects " + shape_str(want));
    return;  // make_batch enforces that the rest agree
  }
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw CheckpointError("checkpoint rng state is unreadable");
  return rng;
}

void copy_into(const ParamList<float>& dst, const ParamList<float>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    Tensor<float> d = dst[i].tensor;
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), d.data().begin());
  }
}

std::vector<std::string> class_names() {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < kNumClasses; ++c) out.push_back(to_string(label_from_index(c)));
  return out;
}

std::string fmt(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

std::string epoch_log_header() { return "epoch\tlr\ttrain_loss\tval_acc"; }

std::string format_epoch_log(const EpochLog& log) {
  return std::to_string(log.epoch) + "\t" + fmt(log.lr) + "\t" + fmt(log.train_loss) + "\t" +
         (std::isnan(log.val_accuracy) ? std::string("nan") : fmt(log.val_accuracy));
}

void prepare_training_data(LabeledDataset& data, const RunConfig& config) {
  if (!config.train.balance_classes && !config.train.augment) return;
  std::vector<LabeledImage> train, rest;
  for (auto& item : data.items) (item.split == Split::train ? train : rest).push_back(std::move(item));
  if (config.train.balance_classes) train = balance_classes(train, config.augment);
  data.items = std::move(rest);
  data.items.insert(data.items.end(), std::make_move_iterator(train.begin()),
                    std::make_move_iterator(train.end()));
  if (config.train.augment) augment_train_split(data, config.augment);
  data.check_invariants();
}

TrainResult train(const RunConfig& config, const LabeledDataset& data, const TrainOptions& options) {
  config.validate();
  const auto train_idx = data.indices(Split::train);
  if (train_idx.empty()) throw ContractError("train: the train split is empty");
  check_compatible(config.model, data, Split::train);
  const bool has_val = data.count(Split::val) > 0;
  if (has_val) check_compatible(config.model, data, Split::val);

  const TrainConfig& tc = config.train;
  Model<float> model(config.model);
  const ParamList<float>& params = model.parameters();
  AdamWState<float> opt = AdamWState<float>::zeros(params);
  NormStats norm = compute_norm_stats(data);
  Rng rng(tc.seed);
  std::size_t start_epoch = 0;
  TrainResult result;
  result.best_val_accuracy = -1.0;

  if (options.resume_from) {
    Checkpoint ck = load_checkpoint(*options.resume_from);
    if (to_json(ck.config.model) != to_json(config.model))
      throw ContractError("train: checkpoint model config differs from the requested one");
    copy_into(params, ck.params);
    opt = ck.optimizer;
    norm = ck.norm;
    rng = rng_from_string(ck.rng_state);
    start_epoch = ck.epoch + 1;
    result.best_val_accuracy = ck.best_val_accuracy;
    result.best_epoch = ck.epoch;
  }

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "train_log.tsv";
    const bool append = options.resume_from.has_value() && std::filesystem::exists(log_path);
    log_file.open(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log_file) throw TrainingError("cannot write " + log_path.string());
    if (!append) log_file << epoch_log_header() << "\n";
  }

  const AdamWHyper hyper = AdamWHyper::from(tc);
  const bool with_recon = config.model.nrca.enabled && tc.reconstruction_weight > 0.0;
  auto snapshot = [&](std::size_t epoch) {
    return make_checkpoint(config, model, opt, epoch, norm, rng_to_string(rng),
                           result.best_val_accuracy);
  };

  for (std::size_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tc);
    std::vector<std::size_t> order = train_idx;
    shuffle_indices(order, rng);

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size, ++step) {
      const std::vector<std::size_t> idx(order.begin() + begin,
                                         order.begin() + std::min(order.size(), begin + tc.batch_size));
      const Batch batch = make_batch(data, idx, norm);
      zero_grads(params);
      const ModelOutput<float> out = model.forward(batch.images);
      const LossOutput<float> ce = cross_entropy(out.logits, batch.labels);
      Tensor<float> loss = ce.loss;
      if (with_recon)
        loss = add(loss, scale(mse_loss(out.reconstruction, batch.images),
                               static_cast<float>(tc.reconstruction_weight)));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        discard_tape<float>();
        throw TrainingError("non-finite loss " + fmt(value) + " at epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(step));
      }
      backward(loss);
      if (tc.grad_clip_norm > 0.0) clip_grad_norm(params, tc.grad_clip_norm);
      adamw_step(params, opt, lr, hyper);

      loss_sum += value * static_cast<double>(idx.size());
      const std::size_t k = ce.probs.dim(1);
      for (std::size_t r = 0; r < idx.size(); ++r)
        correct += argmax_row(ce.probs.data().subspan(r * k, k)) == batch.labels[r];
      seen += idx.size();
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(seen);
    entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (has_val) entry.val_accuracy = evaluate(model, norm, data, Split::val).scores.accuracy.value;
    result.log.push_back(entry);

    const double score = has_val ? entry.val_accuracy : 0.0;
    const bool improved = !has_val || score > result.best_val_accuracy;
    if (improved) {
      result.best_val_accuracy = score;
      result.best_epoch = epoch;
      if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "best", snapshot(epoch));
    }
    if (log_file.is_open()) log_file << format_epoch_log(entry) << "\n" << std::flush;
    if (options.on_epoch) options.on_epoch(entry);
  }

  if (result.best_val_accuracy < 0.0) result.best_val_accuracy = 0.0;
  result.final_checkpoint = snapshot(tc.epochs == 0 ? 0 : tc.epochs - 1);
  if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "final", result.final_checkpoint);
  return result;
}

EvaluationReport evaluate(const Model<float>& model, const NormStats& norm,
                          const LabeledDataset& data, Split split, std::size_t batch_size) {
  const auto idx = data.indices(split);
  if (idx.empty()) throw ContractError("evaluate: the " + to_string(split) + " split is empty");
  if (batch_size == 0) throw ContractError("evaluate: batch_size must be > 0");
  check_compatible(model.config(), data, split);

  NoGradGuard no_grad;
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> truth;
  for (std::size_t begin = 0; begin < idx.size(); begin += batch_size) {
    const std::vector<std::size_t> part(idx.begin() + begin,
                                        idx.begin() + std::min(idx.size(), begin + batch_size));
    const Batch batch = make_batch(data, part, norm);
    const Tensor<float> p = softmax(model.forward(batch.images).logits);
    const std::size_t k = p.dim(1);
    for (std::size_t r = 0; r < part.size(); ++r) {
      const auto row = p.data().subspan(r * k, k);
      probs.emplace_back(row.begin(), row.end());
      truth.push_back(batch.labels[r]);
    }
  }
  EvaluationReport report = make_report(probs, truth, model.config().head.num_classes);
  report.metadata["split"] = to_string(split);
  report.metadata["items"] = std::to_string(idx.size());
  return report;
}

EvaluationReport evaluate(const Checkpoint& ckpt, const LabeledDataset& data, Split split) {
  const Model<float> model = restore_model(ckpt);
  EvaluationReport report = evaluate(model, ckpt.norm, data, split, ckpt.config.train.batch_size);
  report.metadata["epoch"] = std::to_string(ckpt.epoch);
  report.metadata["config_hash"] = config_hash(ckpt.config);
  report.metadata["model_seed"] = std::to_string(ckpt.config.model.seed);
  return report;
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::patch_size: return "patch_size";
    case AblationKind::nrca: return "nrca";
    case AblationKind::head: return "head";
  }
  return "?";
}

AblationKind ablation_kind_from_string(const std::string& name) {
  if (name == "patch_size" || name == "patch") return AblationKind::patch_size;
  if (name == "nrca") return AblationKind::nrca;
  if (name == "head" || name == "residual") return AblationKind::head;
  throw ConfigError("unknown ablation '" + name + "' (expected patch_size, nrca or head)");
}

std::vector<AblationVariant> ablation_variants(const ModelConfig& base, AblationKind which) {
  std::vector<AblationVariant> out;
  switch (which) {
    case AblationKind::patch_size: {
      // A branch whose input is not a multiple of the new patch size uses the
      // largest multiple that fits.
      auto with_patch = [](BranchConfig b, std::size_t patch) {
        b.patch_size = patch;
        b.input_size = std::max(patch, b.input_size / patch * patch);
        return b;
      };
      for (auto [ps, pl] : {std::pair{12u, 12u}, {12u, 16u}, {16u, 16u}}) {
        ModelConfig m = base;
        m.branch_small = with_patch(base.branch_small, ps);
        m.branch_large = with_patch(base.branch_large, pl);
        out.push_back({"(" + std::to_string(ps) + "," + std::to_string(pl) + ")", m});
      }
      break;
    }
    case AblationKind::nrca: {
      ModelConfig yes = base, no = base;
      yes.nrca.enabled = true;
      no.nrca.enabled = false;
      out.push_back({"Yes", yes});
      out.push_back({"No", no});
      break;
    }
    case AblationKind::head: {
      ModelConfig yes = base, no = base;
      yes.head.kind = HeadKind::residual;
      no.head.kind = HeadKind::mlp;
      out.push_back({"Yes", yes});
      out.push_back({"No", no});
      break;
    }
  }
  return out;
}

AblationTable ablate(const RunConfig& base, AblationKind which, const LabeledDataset& data,
                     std::size_t epochs) {
  AblationTable table;
  table.kind = which;
  table.header = which == AblationKind::patch_size ? "Patch size"
                 : which == AblationKind::nrca     ? "NRCA"
                                                   : "Residual neural network";
  table.seed = base.train.seed;
  table.epochs = epochs;
  const Split split = data.count(Split::test) > 0  ? Split::test
                      : data.count(Split::val) > 0 ? Split::val
                                                   : Split::train;
  table.split = to_string(split);

  for (const auto& variant : ablation_variants(base.model, which)) {
    RunConfig rc = base;
    rc.model = variant.model;
    rc.train.epochs = epochs;
    const TrainResult trained = train(rc, data);
    AblationRow row{variant.label, variant.model, evaluate(trained.final_checkpoint, data, split)};
    row.report.metadata["seed"] = std::to_string(table.seed);
    row.report.metadata["epochs"] = std::to_string(epochs);
    row.report.metadata["variant"] = variant.label;
    table.rows.push_back(std::move(row));
  }
  return table;
}

nlohmann::json to_json(const AblationTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"label", r.label},
                    {"accuracy", r.report.scores.accuracy.value},
                    {"macro_precision", r.report.scores.macro.precision.value},
                    {"macro_recall", r.report.scores.macro.recall.value},
                    {"macro_f1", r.report.scores.macro.f1.value},
                    {"auc_macro", r.report.roc.macro_auc},
                    {"auc_micro", r.report.roc.micro.auc},
                    {"seed", table.seed},
                    {"epochs", table.epochs},
                    {"model", to_json(r.model)},
                    {"report", to_json(r.report, class_names())}});
  }
  return {{"schema_version", kReportSchemaVersion},
          {"ablation", to_string(table.kind)},
          {"header", table.header},
          {"seed", table.seed},
          {"epochs", table.epochs},
          {"split", table.split},
          {"rows", rows}};
}

std::string ablation_tsv(const AblationTable& table) {
  std::string out = table.header + "\taccuracy\tmacro_precision\tmacro_recall\tmacro_f1\tseed\tepochs\n";
  for (const auto& r : table.rows) {
    out += r.label + "\t" + fmt(r.report.scores.accuracy.value) + "\t" +
           fmt(r.report.scores.macro.precision.value) + "\t" +
           fmt(r.report.scores.macro.recall.value) + "\t" + fmt(r.report.scores.macro.f1.value) +
           "\t" + std::to_string(table.seed) + "\t" + std::to_string(table.epochs) + "\n";
  }
  return out;
}

Tensor<float> smooth_images(std::size_t count, std::size_t channels, std::size_t size, Rng& rng) {
  std::uniform_int_distribution<int> freq(0, 2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.05, 0.2);
  Tensor<float> out(Shape{count, channels, size, size});
  auto d = out.data();
  for (std::size_t n = 0; n < count; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      struct Wave { double fx, fy, ph, a; };
      std::vector<Wave> waves;
      for (int w = 0; w < 3; ++w) waves.push_back({double(freq(rng)), double(freq(rng)), phase(rng), amp(rng)});
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          double v = 0.5;
          for (const auto& w : waves)
            v += w.a * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / double(size) + w.ph);
          d[((n * channels + c) * size + y) * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
  return out;
}

DenoiseResult train_denoiser(const NrcaConfig& cfg, const DenoiseSpec& spec) {
  NrcaConfig nc = cfg;
  nc.enabled = true;
  nc.validate();
  if (spec.image_size % nc.required_divisor() != 0)
    throw ConfigError("train_denoiser: image_size must be divisible by " +
                      std::to_string(nc.required_divisor()));
  if (spec.batch_size == 0 || spec.batch_size > spec.train_images)
    throw ConfigError("train_denoiser: batch_size must be in [1, train_images]");

  Rng rng(spec.seed);
  DenoiseResult result;
  result.params = NrcaParams<float>::init(nc, rng);
  ParamList<float> params;
  result.params.collect("nrca.", params);
  AdamWState<float> opt = AdamWState<float>::zeros(params);
  const AdamWHyper hyper{0.9, 0.999, 1e-8, 0.0};

  const std::size_t c = nc.image_channels, s = spec.image_size, plane = c * s * s;
  const Tensor<float> clean = smooth_images(spec.train_images, c, s, rng);
  const Tensor<float> held_clean = smooth_images(spec.heldout_images, c, s, rng);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  auto noisy_copy = [&](const Tensor<float>& x) {
    Tensor<float> y = x.clone();
    for (auto& v : y.data()) v += static_cast<float>(noise(rng));
    return y;
  };
  const Tensor<float> held_noisy = noisy_copy(held_clean);

  std::vector<std::size_t> order(spec.train_images);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < spec.steps; ++step) {
    if (cursor + spec.batch_size > order.size()) {
      shuffle_indices(order, rng);
      cursor = 0;
    }
    Tensor<float> target(Shape{spec.batch_size, c, s, s});
    for (std::size_t b = 0; b < spec.batch_size; ++b)
      std::copy_n(clean.data().begin() + order[cursor + b] * plane, plane,
                  target.data().begin() + b * plane);
    cursor += spec.batch_size;
    const Tensor<float> input = noisy_copy(target);

    zero_grads(params);
    const Tensor<float> loss = reconstruction_loss(nrca_forward(input, result.params, nc), target);
    result.loss_curve.push_back(loss.item());
    backward(loss);
    adamw_step(params, opt, spec.lr, hyper);
  }

  NoGradGuard no_grad;
  result.identity_mse = mse_loss(held_noisy, held_clean).item();
  result.model_mse = reconstruction_loss(nrca_forward(held_noisy, result.params, nc), held_clean).item();
  return result;
}

}  // namespace fcfl
