#include "salm2/semantic.hpp"

namespace salm2 {

void write_random_adapter(const std::string& path, uint64_t seed, int64_t embed_dim) {
  Rng rng(seed);
  std::vector<float> blob;
  nlohmann::json tensors = nlohmann::json::array();
  auto push = [&](const std::string& name, Shape shape, int64_t fan_in) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = shape;
    e["offset"] = blob.size();
    tensors.push_back(e);
    auto v = fan_in_uniform<float>(rng, static_cast<size_t>(shape_numel(shape)), fan_in);
    blob.insert(blob.end(), v.begin(), v.end());
  };
  push("conv1.weight", {16, 3, 8, 8}, 3 * 64);
  push("conv1.bias", {16}, 16);
  push("conv2.weight", {32, 16, 8, 8}, 16 * 64);
  push("conv2.bias", {32}, 32);
  push("proj.weight", {embed_dim, 32}, 32);
  push("proj.bias", {embed_dim}, 32);

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["kind"] = "semantic_encoder";
  manifest["embed_dim"] = embed_dim;
  manifest["tensors"] = tensors;
  write_archive(path, {{"manifest.json", manifest.dump(2)},
                       {"weights.bin", floats_to_le_bytes(blob)}});
}

}  // namespace salm2
