#include "cgclip/data/io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cgclip/error.hpp"

namespace cgclip::data {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::array<char, 4> kMagic{'C', 'G', 'T', 'F'};
constexpr std::uint32_t kTensorVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const fs::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw InputError("truncated tensor file " + path.string());
  return v;
}

std::string tracklet_file(int id) {
  std::ostringstream os;
  os << "tracklets/t" << std::setw(6) << std::setfill('0') << id << ".bin";
  return os.str();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InputError("manifest: " + what);
}

}  // namespace

void write_tensor_file(const fs::path& path, const std::vector<std::uint64_t>& shape,
                       const std::vector<float>& values) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  if (n != values.size()) throw ContractError("tensor file shape does not match payload");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kTensorVersion);
  put<std::uint32_t>(os, kDtypeF32);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!os) throw InputError("write failed for " + path.string());
}

TensorFile read_tensor_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw InputError("bad magic in " + path.string());
  if (get<std::uint32_t>(is, path) != kTensorVersion)
    throw InputError("unsupported tensor file version in " + path.string());
  if (get<std::uint32_t>(is, path) != kDtypeF32)
    throw InputError("unsupported dtype in " + path.string());
  const auto rank = get<std::uint32_t>(is, path);
  TensorFile out;
  std::uint64_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    out.shape.push_back(get<std::uint64_t>(is, path));
    n *= out.shape.back();
  }
  out.values.resize(n);
  if (!is.read(reinterpret_cast<char*>(out.values.data()),
               static_cast<std::streamsize>(n * sizeof(float))))
    throw InputError("truncated payload in " + path.string());
  if (is.peek() != std::char_traits<char>::eof())
    throw InputError("trailing bytes in " + path.string());
  return out;
}

json config_to_json(const DatasetConfig& cfg) {
  json j{{"identities", cfg.identities},
         {"tracklets_per_id", cfg.tracklets_per_id},
         {"frames_per_tracklet", cfg.frames_per_tracklet},
         {"hard_split", cfg.hard_split},
         {"noise", cfg.noise},
         {"seed", cfg.seed},
         {"captions_per_id", cfg.captions_per_id},
         {"max_tracklet_len", cfg.max_tracklet_len},
         {"height", cfg.height},
         {"width", cfg.width}};
  j["render_seed"] = cfg.render_seed ? json(*cfg.render_seed) : json(nullptr);
  return j;
}

DatasetConfig config_from_json(const json& j) {
  DatasetConfig cfg;
  try {
    cfg.identities = j.value("identities", cfg.identities);
    cfg.tracklets_per_id = j.value("tracklets_per_id", cfg.tracklets_per_id);
    cfg.frames_per_tracklet = j.value("frames_per_tracklet", cfg.frames_per_tracklet);
    cfg.hard_split = j.value("hard_split", cfg.hard_split);
    cfg.noise = j.value("noise", cfg.noise);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.captions_per_id = j.value("captions_per_id", cfg.captions_per_id);
    cfg.max_tracklet_len = j.value("max_tracklet_len", cfg.max_tracklet_len);
    cfg.height = j.value("height", cfg.height);
    cfg.width = j.value("width", cfg.width);
    if (j.contains("render_seed") && !j["render_seed"].is_null())
      cfg.render_seed = j["render_seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("data config: ") + e.what());
  }
  return cfg;
}

void validate_manifest(const json& m) {
  require(m.is_object(), "root must be an object");
  for (const char* key : {"version", "config", "identities", "tracklets", "captions"})
    require(m.contains(key), std::string("missing field '") + key + "'");
  require(m["version"].is_number_integer() && m["version"].get<int>() == kManifestVersion,
          "unsupported version");
  require(m["config"].is_object(), "config must be an object");
  require(m["identities"].is_array() && m["tracklets"].is_array() && m["captions"].is_array(),
          "identities, tracklets and captions must be arrays");
  const auto y = static_cast<int>(m["identities"].size());
  for (std::size_t i = 0; i < m["identities"].size(); ++i) {
    const auto& e = m["identities"][i];
    require(e.is_object() && e.contains("label") && e.contains("attributes"),
            "identity " + std::to_string(i) + " needs label and attributes");
    require(e["label"].is_number_integer() && e["label"].get<int>() == static_cast<int>(i),
            "identity labels must be 0..Y-1 in order");
    const auto& a = e["attributes"];
    require(a.is_object(), "identity attributes must be an object");
    for (std::size_t k = 0; k < kAttributeCount; ++k) {
      require(a.contains(kAttributeNames[k]) && a[kAttributeNames[k]].is_number_integer(),
              std::string("identity attribute '") + kAttributeNames[k] + "' missing");
      const int v = a[kAttributeNames[k]].get<int>();
      require(v >= 0 && v < kAttributeCardinality[k], "attribute value out of range");
    }
  }
  for (const auto& t : m["tracklets"]) {
    for (const char* key : {"id", "label", "camera", "length", "height", "width", "file"})
      require(t.contains(key), std::string("tracklet missing field '") + key + "'");
    require(t["file"].is_string(), "tracklet file must be a string");
    const int label = t["label"].get<int>();
    require(label >= 0 && label < y, "tracklet label out of range");
    require(t["length"].get<int>() >= 1, "tracklet length must be positive");
  }
  for (const auto& c : m["captions"]) {
    require(c.contains("label") && c.contains("tokens") && c["tokens"].is_array(),
            "caption needs label and tokens");
    const int label = c["label"].get<int>();
    require(label >= 0 && label < y, "caption label out of range");
    int eos = 0;
    for (const auto& tok : c["tokens"]) eos += tok.get<int>() == vocab::kEos;
    require(eos == 1, "caption must contain exactly one EOS");
  }
}

void write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir / "tracklets");
  json m;
  m["version"] = kManifestVersion;
  m["config"] = config_to_json(ds.config);
  m["identities"] = json::array();
  for (const auto& ident : ds.identities) {
    json attrs;
    for (std::size_t k = 0; k < kAttributeCount; ++k)
      attrs[kAttributeNames[k]] = ident.attributes.values[k];
    m["identities"].push_back({{"label", ident.label}, {"attributes", attrs}});
  }
  m["tracklets"] = json::array();
  for (const auto& t : ds.tracklets) {
    const std::string file = tracklet_file(t.id);
    m["tracklets"].push_back({{"id", t.id},
                              {"label", t.label},
                              {"camera", t.camera},
                              {"length", t.length},
                              {"height", t.height},
                              {"width", t.width},
                              {"file", file}});
    write_tensor_file(dir / file,
                      {static_cast<std::uint64_t>(t.length), static_cast<std::uint64_t>(t.height),
                       static_cast<std::uint64_t>(t.width), 3},
                      t.frames);
  }
  m["captions"] = json::array();
  for (const auto& c : ds.captions) m["captions"].push_back({{"label", c.label}, {"tokens", c.tokens}});
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw InputError("cannot write manifest in " + dir.string());
  os << m.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw InputError("no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    throw InputError(std::string("manifest parse error: ") + e.what());
  }
  validate_manifest(m);
  Dataset ds;
  ds.config = config_from_json(m["config"]);
  for (const auto& e : m["identities"]) {
    Identity ident;
    ident.label = e["label"].get<int>();
    for (std::size_t k = 0; k < kAttributeCount; ++k)
      ident.attributes.values[k] = e["attributes"][kAttributeNames[k]].get<int>();
    ds.identities.push_back(ident);
  }
  for (const auto& e : m["tracklets"]) {
    Tracklet t;
    t.id = e["id"].get<int>();
    t.label = e["label"].get<int>();
    t.camera = e["camera"].get<int>();
    t.length = e["length"].get<int>();
    t.height = e["height"].get<int>();
    t.width = e["width"].get<int>();
    auto tf = read_tensor_file(dir / e["file"].get<std::string>());
    const std::vector<std::uint64_t> want{static_cast<std::uint64_t>(t.length),
                                          static_cast<std::uint64_t>(t.height),
                                          static_cast<std::uint64_t>(t.width), 3};
    if (tf.shape != want)
      throw InputError("tracklet " + std::to_string(t.id) + " tensor shape disagrees with manifest");
    t.frames = std::move(tf.values);
    ds.tracklets.push_back(std::move(t));
  }
  for (const auto& e : m["captions"])
    ds.captions.push_back({e["label"].get<int>(), e["tokens"].get<std::vector<int>>()});
  return ds;
}

}  // namespace cgclip::data
