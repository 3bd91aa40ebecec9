#include "fcfl/config.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

#include "fcfl/errors.hpp"

namespace fcfl {

using nlohmann::json;

namespace {

using Handlers = std::map<std::string, std::function<void(const json&)>>;

void apply(const json& j, const std::string& where, const Handlers& handlers) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown config key '" + where + "." + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + where + "." + key + "': " + e.what());
    }
  }
}

template <typename T>
std::function<void(const json&)> set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

void parse_branch(const json& j, const std::string& where, BranchConfig& b) {
  apply(j, where, {{"patch_size", set(b.patch_size)},
                   {"embed_dim", set(b.embed_dim)},
                   {"input_size", set(b.input_size)},
                   {"depth", set(b.depth)},
                   {"heads", set(b.heads)}});
}

json branch_json(const BranchConfig& b) {
  return {{"patch_size", b.patch_size},
          {"embed_dim", b.embed_dim},
          {"input_size", b.input_size},
          {"depth", b.depth},
          {"heads", b.heads}};
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be > 0");
  if (decay_every == 0) throw ConfigError("train.decay_every must be > 0");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train.lr0 must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0))
    throw ConfigError("train.decay_factor must be in (0,1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train: adam betas must be in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(reconstruction_weight >= 0.0) || !std::isfinite(reconstruction_weight))
    throw ConfigError("train.reconstruction_weight must be finite and >= 0");
  if (!(grad_clip_norm >= 0.0)) throw ConfigError("train.grad_clip_norm must be >= 0");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  split.validate();
  augment.validate();
}

RunConfig RunConfig::paper_default() {
  RunConfig c;
  c.model = ModelConfig::paper_default();
  return c;
}

RunConfig RunConfig::toy() {
  RunConfig c;
  c.model = ModelConfig::toy();
  c.train.batch_size = 8;
  c.train.epochs = 200;
  c.train.lr0 = 1e-3;
  c.split.test_count = 0;
  return c;
}

ModelConfig parse_model_config(const json& j, ModelConfig m) {
  apply(j, "model",
        {{"image_size", set(m.image_size)},
         {"branch_small", [&](const json& v) { parse_branch(v, "model.branch_small", m.branch_small); }},
         {"branch_large", [&](const json& v) { parse_branch(v, "model.branch_large", m.branch_large); }},
         {"fusion",
          [&](const json& v) { apply(v, "model.fusion", {{"rounds", set(m.fusion.rounds)}}); }},
         {"nrca",
          [&](const json& v) {
            apply(v, "model.nrca",
                  {{"enabled", set(m.nrca.enabled)},
                   {"image_channels", set(m.nrca.image_channels)},
                   {"encoder_channels", set(m.nrca.encoder_channels)},
                   {"kernel_size", set(m.nrca.kernel_size)},
                   {"pool_window", set(m.nrca.pool_window)},
                   {"latent_channels", set(m.nrca.latent_channels)}});
          }},
         {"head",
          [&](const json& v) {
            apply(v, "model.head",
                  {{"kind", [&](const json& k) { m.head.kind = head_kind_from_string(k.get<std::string>()); }},
                   {"hidden_dim", set(m.head.hidden_dim)},
                   {"num_classes", set(m.head.num_classes)}});
          }},
         {"seed", set(m.seed)}});
  return m;
}

RunConfig parse_run_config(const json& j, RunConfig c) {
  apply(j, "config",
        {{"model", [&](const json& v) { c.model = parse_model_config(v, c.model); }},
         {"train",
          [&](const json& v) {
            auto& t = c.train;
            apply(v, "train",
                  {{"batch_size", set(t.batch_size)},
                   {"epochs", set(t.epochs)},
                   {"lr0", set(t.lr0)},
                   {"decay_factor", set(t.decay_factor)},
                   {"decay_every", set(t.decay_every)},
                   {"weight_decay", set(t.weight_decay)},
                   {"beta1", set(t.beta1)},
                   {"beta2", set(t.beta2)},
                   {"adam_eps", set(t.adam_eps)},
                   {"reconstruction_weight", set(t.reconstruction_weight)},
                   {"grad_clip_norm", set(t.grad_clip_norm)},
                   {"balance_classes", set(t.balance_classes)},
                   {"augment", set(t.augment)},
                   {"seed", set(t.seed)}});
          }},
         {"split",
          [&](const json& v) {
            auto& s = c.split;
            apply(v, "split",
                  {{"test_count", set(s.test_count)},
                   {"train_val_ratio", set(s.train_val_ratio)},
                   {"seed", set(s.seed)},
                   {"group_by_source", set(s.group_by_source)}});
          }},
         {"augment", [&](const json& v) {
            auto& a = c.augment;
            apply(v, "augment",
                  {{"rotation", set(a.rotation)},
                   {"translate_fraction", set(a.translate_fraction)},
                   {"shear_radians", set(a.shear_radians)},
                   {"fill_mode",
                    [&](const json& f) { a.fill_mode = fill_mode_from_string(f.get<std::string>()); }},
                   {"fill_value", set(a.fill_value)},
                   {"gaussian_sigma", set(a.gaussian_sigma)},
                   {"shot_noise_scale", set(a.shot_noise_scale)},
                   {"seed", set(a.seed)}});
          }}});
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return parse_run_config(j, std::move(base));
}

json to_json(const ModelConfig& m) {
  return {{"image_size", m.image_size},
          {"branch_small", branch_json(m.branch_small)},
          {"branch_large", branch_json(m.branch_large)},
          {"fusion", {{"rounds", m.fusion.rounds}}},
          {"nrca",
           {{"enabled", m.nrca.enabled},
            {"image_channels", m.nrca.image_channels},
            {"encoder_channels", m.nrca.encoder_channels},
            {"kernel_size", m.nrca.kernel_size},
            {"pool_window", m.nrca.pool_window},
            {"latent_channels", m.nrca.latent_channels}}},
          {"head",
           {{"kind", to_string(m.head.kind)},
            {"hidden_dim", m.head.hidden_dim},
            {"num_classes", m.head.num_classes}}},
          {"seed", m.seed}};
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& s = c.split;
  const auto& a = c.augment;
  return {{"model", to_json(c.model)},
          {"train",
           {{"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"lr0", t.lr0},
            {"decay_factor", t.decay_factor},
            {"decay_every", t.decay_every},
            {"weight_decay", t.weight_decay},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"adam_eps", t.adam_eps},
            {"reconstruction_weight", t.reconstruction_weight},
            {"grad_clip_norm", t.grad_clip_norm},
            {"balance_classes", t.balance_classes},
            {"augment", t.augment},
            {"seed", t.seed}}},
          {"split",
           {{"test_count", s.test_count},
            {"train_val_ratio", s.train_val_ratio},
            {"seed", s.seed},
            {"group_by_source", s.group_by_source}}},
          {"augment",
           {{"rotation", a.rotation},
            {"translate_fraction", a.translate_fraction},
            {"shear_radians", a.shear_radians},
            {"fill_mode", to_string(a.fill_mode)},
            {"fill_value", a.fill_value},
            {"gaussian_sigma", a.gaussian_sigma},
            {"shot_noise_scale", a.shot_noise_scale},
            {"seed", a.seed}}}};
}

std::string config_hash(const RunConfig& config) {
  const std::string s = to_json(config).dump();
  const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size()));
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace fcfl
