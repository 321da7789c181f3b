#pragma once

// Checkpoint archive: manifest.json (schema-versioned) + weights.bin
// (little-endian float32 blobs concatenated in manifest order). Loading
// validates names, shapes and blob length before any parameter is touched;
// a corrupt archive never yields a partial model.

#include <string>

#include "json.hpp"
#include "salm2/archive.hpp"
#include "salm2/model.hpp"

namespace salm2 {

inline constexpr int kCheckpointFormatVersion = 1;

template <typename T>
void save_checkpoint(const SalM2<T>& model, const std::string& path,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["kind"] = "salm2_checkpoint";
  manifest["config"] = model.config().to_json();
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();

  std::vector<float> blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : model.named_params()) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = blob.size();
    tensors.push_back(entry);
    for (T v : t.values()) blob.push_back(static_cast<float>(v));
  }
  manifest["tensors"] = tensors;

  write_archive(path, {{"manifest.json", manifest.dump(2)},
                       {"weights.bin", floats_to_le_bytes(blob)}});
}

struct LoadedCheckpoint {
  SalM2<float> model;
  nlohmann::json manifest;
};

// clip_weights: required when the stored config selects the clip provider.
inline LoadedCheckpoint load_checkpoint(const std::string& path, const std::string& clip_weights = "") {
  auto members = read_archive(path);
  if (!members.count("manifest.json") || !members.count("weights.bin"))
    throw CheckpointError(path + " lacks manifest.json/weights.bin");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(members.at("manifest.json"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("manifest.json is not valid JSON: ") + e.what());
  }
  if (!manifest.contains("format_version") ||
      manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw CheckpointError("unsupported checkpoint format_version (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(manifest.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad config in manifest: ") + e.what());
  }
  if (!clip_weights.empty()) cfg.clip_weights = clip_weights;

  SalM2<float> model(cfg);
  auto params = model.named_params();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size())
    throw CheckpointError("tensor count mismatch: manifest has " + std::to_string(tensors.size()) +
                          ", model needs " + std::to_string(params.size()));
  std::vector<float> blob = le_bytes_to_floats(members.at("weights.bin"));
  int64_t expected = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& entry = tensors.at(i);
    if (entry.at("name").get<std::string>() != params[i].first)
      throw CheckpointError("tensor " + std::to_string(i) + " is '" +
                            entry.at("name").get<std::string>() + "', expected '" +
                            params[i].first + "'");
    if (entry.at("shape").get<Shape>() != params[i].second.shape())
      throw CheckpointError("tensor " + params[i].first + " has incompatible shape");
    if (entry.at("offset").get<int64_t>() != expected)
      throw CheckpointError("tensor " + params[i].first + " has unexpected blob offset");
    expected += params[i].second.numel();
  }
  if (expected != static_cast<int64_t>(blob.size()))
    throw CheckpointError("weights.bin holds " + std::to_string(blob.size()) + " floats, manifest declares " +
                          std::to_string(expected));
  int64_t off = 0;
  for (auto& [name, t] : params) {
    std::copy(blob.begin() + off, blob.begin() + off + t.numel(), t.values().begin());
    off += t.numel();
  }
  return {std::move(model), std::move(manifest)};
}

}  // namespace salm2
