#include "fcfl/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fcfl/errors.hpp"

namespace fcfl {

using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "params.bin";

std::uint32_t checksum(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), static_cast<uInt>(chunk));
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void append_le(std::string& out, const std::vector<float>& values) {
  for (float f : values) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
  }
}

float read_le(const std::string& in, std::size_t element) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[element * 4 + b])) << (8 * b);
  return std::bit_cast<float>(bits);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<float> to_vector(std::span<const float> s) { return {s.begin(), s.end()}; }

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint make_checkpoint(const RunConfig& config, const Model<float>& model,
                           const AdamWState<float>& optimizer, std::size_t epoch,
                           const NormStats& norm, const std::string& rng_state,
                           double best_val_accuracy) {
  Checkpoint c;
  c.config = config;
  c.config.model = model.config();
  for (const auto& p : model.parameters()) c.params.push_back({p.name, p.tensor.clone()});
  c.optimizer = optimizer;
  if (c.optimizer.m.empty()) c.optimizer = AdamWState<float>::zeros(c.params);
  c.epoch = epoch;
  c.norm = norm;
  c.rng_state = rng_state;
  c.best_val_accuracy = best_val_accuracy;
  return c;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  if (ckpt.optimizer.m.size() != ckpt.params.size() || ckpt.optimizer.v.size() != ckpt.params.size())
    throw ContractError("save_checkpoint: optimizer state does not match parameter list");
  std::filesystem::create_directories(dir);

  std::string blob;
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& p : ckpt.params) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    append_le(blob, to_vector(p.tensor.data()));
    offset += p.tensor.numel();
  }
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    if (ckpt.optimizer.m[i].size() != ckpt.params[i].tensor.numel())
      throw ContractError("save_checkpoint: moment size mismatch for '" + ckpt.params[i].name + "'");
    append_le(blob, ckpt.optimizer.m[i]);
  }
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    if (ckpt.optimizer.v[i].size() != ckpt.params[i].tensor.numel())
      throw ContractError("save_checkpoint: moment size mismatch for '" + ckpt.params[i].name + "'");
    append_le(blob, ckpt.optimizer.v[i]);
  }

  json manifest = {
      {"schema_version", ckpt.schema_version},
      {"config", to_json(ckpt.config)},
      {"tensors", tensors},
      {"parameter_elements", offset},
      {"blob", {{"file", kBlob}, {"bytes", blob.size()}, {"crc32", checksum(blob)}}},
      {"optimizer_step", ckpt.optimizer.step},
      {"epoch", ckpt.epoch},
      {"norm", {{"mean", ckpt.norm.mean}, {"stddev", ckpt.norm.stddev}}},
      {"rng_state", ckpt.rng_state},
      {"best_val_accuracy", ckpt.best_val_accuracy},
  };
  // The manifest goes last: it is the commit point that references the blob.
  write_file_atomic(dir / kBlob, blob);
  write_file_atomic(dir / kManifest, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / kManifest));
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt manifest in " + dir.string() + ": " + e.what());
  }

  Checkpoint c;
  try {
    const int version = manifest.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion)
      throw CheckpointError("checkpoint schema version " + std::to_string(version) +
                            " is not supported (expected version " +
                            std::to_string(kCheckpointSchemaVersion) + ")");
    c.schema_version = version;
    c.config = parse_run_config(manifest.at("config"), RunConfig{});

    const std::string blob = read_file(dir / manifest.at("blob").at("file").get<std::string>());
    const std::size_t expected_bytes = manifest.at("blob").at("bytes").get<std::size_t>();
    if (blob.size() != expected_bytes)
      throw CheckpointError("checkpoint blob in " + dir.string() + " is truncated or padded: " +
                            std::to_string(blob.size()) + " bytes, manifest says " +
                            std::to_string(expected_bytes));
    const std::uint32_t crc = checksum(blob);
    const std::uint32_t expected_crc = manifest.at("blob").at("crc32").get<std::uint32_t>();
    if (crc != expected_crc)
      throw CheckpointError("checkpoint blob in " + dir.string() + " failed its checksum");

    const std::size_t n = manifest.at("parameter_elements").get<std::size_t>();
    if (expected_bytes != 3 * n * 4)
      throw CheckpointError("checkpoint blob size does not hold parameters and both moments");

    std::size_t offset = 0;
    for (const auto& t : manifest.at("tensors")) {
      const Shape shape = t.at("shape").get<Shape>();
      const std::size_t at = t.at("offset").get<std::size_t>();
      const std::size_t numel = shape_numel(shape);
      if (at != offset || at + numel > n)
        throw CheckpointError("checkpoint tensor '" + t.at("name").get<std::string>() +
                              "' has an inconsistent offset");
      std::vector<float> values(numel);
      for (std::size_t j = 0; j < numel; ++j) values[j] = read_le(blob, at + j);
      c.params.push_back({t.at("name").get<std::string>(), Tensor<float>(shape, std::move(values))});
      std::vector<float> m(numel), v(numel);
      for (std::size_t j = 0; j < numel; ++j) {
        m[j] = read_le(blob, n + at + j);
        v[j] = read_le(blob, 2 * n + at + j);
      }
      c.optimizer.m.push_back(std::move(m));
      c.optimizer.v.push_back(std::move(v));
      offset += numel;
    }
    if (offset != n) throw CheckpointError("checkpoint tensors do not cover the blob");

    c.optimizer.step = manifest.at("optimizer_step").get<std::size_t>();
    c.epoch = manifest.at("epoch").get<std::size_t>();
    c.norm.mean = manifest.at("norm").at("mean").get<std::vector<float>>();
    c.norm.stddev = manifest.at("norm").at("stddev").get<std::vector<float>>();
    c.rng_state = manifest.at("rng_state").get<std::string>();
    c.best_val_accuracy = manifest.at("best_val_accuracy").get<double>();
  } catch (const json::exception& e) {
    throw CheckpointError("malformed manifest in " + dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError("invalid config in checkpoint " + dir.string() + ": " + e.what());
  }
  return c;
}

Model<float> restore_model(const Checkpoint& ckpt) {
  Model<float> model(ckpt.config.model);
  const auto& live = model.parameters();
  if (live.size() != ckpt.params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                          " tensors, model expects " + std::to_string(live.size()));
  for (std::size_t i = 0; i < live.size(); ++i) {
    const auto& saved = ckpt.params[i];
    if (live[i].name != saved.name || live[i].tensor.shape() != saved.tensor.shape())
      throw CheckpointError("checkpoint tensor '" + saved.name + "' " +
                            shape_str(saved.tensor.shape()) + " does not match model tensor '" +
                            live[i].name + "' " + shape_str(live[i].tensor.shape()));
    Tensor<float> dst = live[i].tensor;
    std::memcpy(dst.data().data(), saved.tensor.data().data(), saved.tensor.numel() * sizeof(float));
  }
  return model;
}

}  // namespace fcfl
