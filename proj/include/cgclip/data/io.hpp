#pragma once

// On-disk dataset format:
//   <dir>/manifest.json            identities, attributes, tracklets, captions
//   <dir>/tracklets/tNNNNNN.bin    one tensor file per tracklet
//
// Tensor file layout (little-endian):
//   magic "CGTF" | u32 version | u32 dtype (1 = f32) | u32 rank |
//   u64 dims[rank] | row-major payload

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgclip/data/synthetic.hpp"

namespace cgclip::data {

inline constexpr int kManifestVersion = 1;

struct TensorFile {
  std::vector<std::uint64_t> shape;
  std::vector<float> values;
};

void write_tensor_file(const std::filesystem::path& path, const std::vector<std::uint64_t>& shape,
                       const std::vector<float>& values);
TensorFile read_tensor_file(const std::filesystem::path& path);

nlohmann::json config_to_json(const DatasetConfig& cfg);
DatasetConfig config_from_json(const nlohmann::json& j);

// Checks the manifest structure; throws InputError naming the first problem.
void validate_manifest(const nlohmann::json& manifest);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace cgclip::data
