#pragma once

// Checkpoint file layout (little-endian):
//   magic "CGCK" | u32 version | u64 header_bytes | header JSON | f32 payload
// The header holds caller metadata (config echo, seed, ...) under "meta" and a
// tensor index {name, shape, offset} into the payload, sorted by name.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgclip/numerics/nn.hpp"
#include "cgclip/numerics/tensor.hpp"

namespace cgclip::model {

struct StoredTensor {
  num::Shape shape;
  std::vector<float> values;
};

class Checkpoint {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const num::Tensor<float>& t);
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  num::Tensor<float> get(const std::string& name, bool requires_grad = false) const;

  void store(const num::ParamList<float>& params);
  // Copies stored values into existing tensors; shapes must match exactly.
  void load_into(const num::ParamList<float>& params) const;

  const std::map<std::string, StoredTensor>& tensors() const { return tensors_; }

 private:
  std::map<std::string, StoredTensor> tensors_;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace cgclip::model
