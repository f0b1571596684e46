#include "cgclip/model/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <fstream>

#include "cgclip/error.hpp"

namespace cgclip::model {
namespace {

constexpr std::array<char, 4> kMagic{'C', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void Checkpoint::put(const std::string& name, const num::Tensor<float>& t) {
  tensors_[name] = {t.shape(), {t.data().begin(), t.data().end()}};
}

num::Tensor<float> Checkpoint::get(const std::string& name, bool requires_grad) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw InputError("checkpoint has no tensor '" + name + "'");
  return num::Tensor<float>::from_data(it->second.shape, it->second.values, requires_grad);
}

void Checkpoint::store(const num::ParamList<float>& params) {
  for (const auto& e : params.entries()) put(e.name, *e.tensor);
}

void Checkpoint::load_into(const num::ParamList<float>& params) const {
  for (const auto& e : params.entries()) {
    const auto it = tensors_.find(e.name);
    if (it == tensors_.end()) throw InputError("checkpoint has no tensor '" + e.name + "'");
    if (it->second.shape != e.tensor->shape())
      throw InputError("checkpoint tensor '" + e.name + "' has shape " +
                       num::shape_string(it->second.shape) + ", model expects " +
                       num::shape_string(e.tensor->shape()));
    auto dst = e.tensor->mutable_data();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors()) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.values.size();
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write checkpoint " + path.string());
  os.write(kMagic.data(), kMagic.size());
  os.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  const std::uint64_t n = text.size();
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ckpt.tensors())
    os.write(reinterpret_cast<const char*>(t.values.data()),
             static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  if (!os) throw InputError("write failed for checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  std::uint32_t version = 0;
  std::uint64_t n = 0;
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw InputError(path.string() + " is not a checkpoint file");
  if (!is.read(reinterpret_cast<char*>(&version), sizeof version) || version != kVersion)
    throw InputError("unsupported checkpoint version in " + path.string());
  if (!is.read(reinterpret_cast<char*>(&n), sizeof n)) throw InputError("truncated checkpoint");
  std::string text(n, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(n))) throw InputError("truncated checkpoint");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<num::Shape>();
    std::vector<float> values(num::shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(float))))
      throw InputError("truncated checkpoint payload");
    ckpt.put(entry.at("name").get<std::string>(),
             num::Tensor<float>::from_data(shape, std::move(values)));
  }
  return ckpt;
}

}  // namespace cgclip::model
