#include "cgclip/data/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "cgclip/data/sampling.hpp"
#include "cgclip/error.hpp"

namespace cgclip::data {
namespace {

using Rgb = std::array<float, 3>;

constexpr int kBaseHeight = 32;
constexpr int kBaseWidth = 16;

constexpr std::array<Rgb, 4> kUniformColors{{{0.80f, 0.10f, 0.10f},
                                             {0.10f, 0.20f, 0.80f},
                                             {0.10f, 0.60f, 0.20f},
                                             {0.90f, 0.80f, 0.10f}}};
constexpr std::array<Rgb, 2> kTeamColors{{{1.0f, 1.0f, 1.0f}, {0.0f, 0.0f, 0.0f}}};
constexpr std::array<Rgb, 4> kHairColors{{{0.05f, 0.05f, 0.05f},
                                          {0.40f, 0.25f, 0.10f},
                                          {0.95f, 0.85f, 0.40f},
                                          {0.70f, 0.20f, 0.05f}}};
constexpr std::array<Rgb, 4> kShoeColors{{{0.95f, 0.95f, 0.95f},
                                          {0.10f, 0.10f, 0.10f},
                                          {0.90f, 0.30f, 0.30f},
                                          {0.20f, 0.80f, 0.80f}}};
constexpr std::array<Rgb, 4> kSockColors{{{0.95f, 0.95f, 0.95f},
                                          {0.10f, 0.10f, 0.10f},
                                          {1.00f, 0.50f, 0.00f},
                                          {0.50f, 0.10f, 0.60f}}};
constexpr Rgb kBackground{0.5f, 0.5f, 0.5f};
constexpr Rgb kSkin{0.90f, 0.75f, 0.60f};
constexpr Rgb kLegs{0.20f, 0.20f, 0.20f};
constexpr Rgb kGlyphInk{0.98f, 0.98f, 0.98f};

// 4x4 glyph bitmaps, row-major, MSB first.
constexpr std::array<std::uint16_t, 4> kGlyphs{
    0b0010'0110'0010'0111,  // "1"
    0b1111'0001'0010'0100,  // "7"
    0b1111'1001'1001'1111,  // "0"
    0b1001'0110'0110'1001,  // "x"
};

// Layout on the 32x16 base grid.
constexpr Region kHair{1, 5, 5, 11};
constexpr Region kFace{5, 8, 6, 10};
constexpr Region kTorso{8, 20, 3, 13};
constexpr Region kTeamStripe{8, 10, 3, 13};
constexpr Region kNumber{12, 16, 6, 10};
constexpr Region kLegRegion{20, 26, 4, 12};
constexpr Region kSockRegion{26, 29, 4, 12};
constexpr Region kShoeRegion{29, 31, 4, 12};

struct Canvas {
  int height, width, sy, sx;
  std::vector<float>& pixels;

  void fill(const Region& r, const Rgb& c, int dy, int dx) {
    for (int y = r.row0 * sy; y < r.row1 * sy; ++y)
      for (int x = r.col0 * sx; x < r.col1 * sx; ++x) put(y + dy, x + dx, c);
  }
  void put(int y, int x, const Rgb& c) {
    if (y < 0 || y >= height || x < 0 || x >= width) return;
    float* p = pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    std::copy(c.begin(), c.end(), p);
  }
};

Attributes random_attributes(std::mt19937_64& gen) {
  Attributes a;
  for (std::size_t i = 0; i < kAttributeCount; ++i)
    a.values[i] = std::uniform_int_distribution<int>(0, kAttributeCardinality[i] - 1)(gen);
  return a;
}

std::vector<Attributes> draw_identities(const DatasetConfig& cfg, std::mt19937_64& gen) {
  const auto space = attribute_space_size();
  if (static_cast<std::size_t>(cfg.identities) > space)
    throw ConfigError("attribute space holds " + std::to_string(space) +
                      " unique identities, requested " + std::to_string(cfg.identities));
  std::set<Attributes> used;
  std::vector<Attributes> out;
  if (!cfg.hard_split) {
    while (static_cast<int>(out.size()) < cfg.identities) {
      Attributes a = random_attributes(gen);
      if (used.insert(a).second) out.push_back(a);
    }
    return out;
  }
  if (cfg.identities % 2 != 0)
    throw ConfigError("hard split needs an even identity count, got " +
                      std::to_string(cfg.identities));
  constexpr std::array<Attribute, 4> kFine{Attribute::kNumber, Attribute::kHair,
                                           Attribute::kShoes, Attribute::kSocks};
  int pair = 0;
  int attempts = 0;
  while (static_cast<int>(out.size()) < cfg.identities) {
    if (++attempts > 100000) throw ConfigError("could not draw enough hard-split pairs");
    Attributes base = random_attributes(gen);
    const Attribute f = kFine[static_cast<std::size_t>(pair) % kFine.size()];
    const int card = kAttributeCardinality[static_cast<std::size_t>(f)];
    Attributes twin = base;
    twin[f] = (base[f] + 1 + std::uniform_int_distribution<int>(0, card - 2)(gen)) % card;
    if (used.count(base) || used.count(twin)) continue;
    used.insert(base);
    used.insert(twin);
    out.push_back(base);
    out.push_back(twin);
    ++pair;
  }
  return out;
}

std::vector<std::vector<int>> caption_orders(int count, std::mt19937_64& gen) {
  std::vector<int> order(kAttributeCount);
  std::iota(order.begin(), order.end(), 0);
  std::size_t distinct = 1;
  for (std::size_t i = 2; i <= kAttributeCount; ++i) distinct *= i;
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(count), distinct);
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> out;
  // The first paraphrase is the canonical order.
  seen.insert(order);
  out.push_back(order);
  while (out.size() < want) {
    std::shuffle(order.begin(), order.end(), gen);
    if (seen.insert(order).second) out.push_back(order);
  }
  return out;
}

}  // namespace

bool is_fine(Attribute a) {
  return a == Attribute::kNumber || a == Attribute::kHair || a == Attribute::kShoes ||
         a == Attribute::kSocks;
}

std::size_t attribute_space_size() {
  std::size_t n = 1;
  for (int c : kAttributeCardinality) n *= static_cast<std::size_t>(c);
  return n;
}

namespace vocab {

int attribute_token(Attribute a, int value) {
  const auto idx = static_cast<std::size_t>(a);
  if (value < 0 || value >= kAttributeCardinality[idx])
    throw InputError("attribute value out of range");
  int offset = kFirstAttribute;
  for (std::size_t i = 0; i < idx; ++i) offset += kAttributeCardinality[i];
  return offset + value;
}

int first_id_token() {
  int t = kFirstAttribute;
  for (int c : kAttributeCardinality) t += c;
  return t;
}

int id_token(int label) { return first_id_token() + label; }

int vocab_size(int identity_count) { return first_id_token() + identity_count; }

}  // namespace vocab

std::size_t Dataset::frame_count() const {
  std::size_t n = 0;
  for (const auto& t : tracklets) n += static_cast<std::size_t>(t.length);
  return n;
}

std::vector<Region> attribute_regions(Attribute a) {
  switch (a) {
    case Attribute::kUniform: return {kTorso};
    case Attribute::kTeam: return {kTeamStripe};
    case Attribute::kNumber: return {kNumber};
    case Attribute::kHair: return {kHair};
    case Attribute::kShoes: return {kShoeRegion};
    case Attribute::kSocks: return {kSockRegion};
  }
  return {};
}

std::vector<float> render_identity(const Attributes& attrs, int height, int width, int dy,
                                   int dx) {
  if (height % kBaseHeight != 0 || width % kBaseWidth != 0)
    throw ConfigError("image size must be a multiple of 32x16, got " + std::to_string(height) +
                      "x" + std::to_string(width));
  std::vector<float> pixels(static_cast<std::size_t>(height) * width * 3);
  for (std::size_t i = 0; i < pixels.size(); i += 3)
    std::copy(kBackground.begin(), kBackground.end(), pixels.begin() + static_cast<long>(i));
  Canvas c{height, width, height / kBaseHeight, width / kBaseWidth, pixels};
  c.fill(kHair, kHairColors[static_cast<std::size_t>(attrs[Attribute::kHair])], dy, dx);
  c.fill(kFace, kSkin, dy, dx);
  c.fill(kTorso, kUniformColors[static_cast<std::size_t>(attrs[Attribute::kUniform])], dy, dx);
  c.fill(kTeamStripe, kTeamColors[static_cast<std::size_t>(attrs[Attribute::kTeam])], dy, dx);
  const std::uint16_t glyph = kGlyphs[static_cast<std::size_t>(attrs[Attribute::kNumber])];
  for (int gy = 0; gy < 4; ++gy)
    for (int gx = 0; gx < 4; ++gx)
      if (glyph & (1u << (15 - (gy * 4 + gx))))
        c.fill({kNumber.row0 + gy, kNumber.row0 + gy + 1, kNumber.col0 + gx, kNumber.col0 + gx + 1},
               kGlyphInk, dy, dx);
  c.fill(kLegRegion, kLegs, dy, dx);
  c.fill(kSockRegion, kSockColors[static_cast<std::size_t>(attrs[Attribute::kSocks])], dy, dx);
  c.fill(kShoeRegion, kShoeColors[static_cast<std::size_t>(attrs[Attribute::kShoes])], dy, dx);
  return pixels;
}

Attributes decode_caption(std::span<const int> tokens) {
  Attributes out;
  std::array<bool, kAttributeCount> seen{};
  for (int t : tokens) {
    if (t < vocab::kFirstAttribute || t >= vocab::first_id_token()) continue;
    int offset = t - vocab::kFirstAttribute;
    for (std::size_t i = 0; i < kAttributeCount; ++i) {
      if (offset < kAttributeCardinality[i]) {
        out.values[i] = offset;
        seen[i] = true;
        break;
      }
      offset -= kAttributeCardinality[i];
    }
  }
  for (bool s : seen)
    if (!s) throw InputError("caption does not mention every attribute");
  return out;
}

Dataset generate_synthetic(const DatasetConfig& cfg) {
  if (cfg.identities < 2) throw ConfigError("need at least 2 identities");
  if (cfg.tracklets_per_id < 2) throw ConfigError("need at least 2 tracklets per identity");
  if (cfg.frames_per_tracklet < 1) throw ConfigError("frames_per_tracklet must be positive");
  if (cfg.captions_per_id < 1) throw ConfigError("captions_per_id must be positive");
  if (cfg.noise < 0) throw ConfigError("noise must be non-negative");

  Dataset ds;
  ds.config = cfg;
  std::mt19937_64 id_gen(cfg.seed);
  const auto tuples = draw_identities(cfg, id_gen);
  for (int y = 0; y < cfg.identities; ++y)
    ds.identities.push_back({y, tuples[static_cast<std::size_t>(y)]});

  std::mt19937_64 caption_gen(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& ident : ds.identities) {
    for (const auto& order : caption_orders(cfg.captions_per_id, caption_gen)) {
      CaptionRecord cap;
      cap.label = ident.label;
      cap.tokens.push_back(vocab::kSos);
      for (int a : order)
        cap.tokens.push_back(vocab::attribute_token(static_cast<Attribute>(a),
                                                    ident.attributes.values[static_cast<std::size_t>(a)]));
      cap.tokens.push_back(vocab::kEos);
      ds.captions.push_back(std::move(cap));
    }
  }

  std::mt19937_64 render_gen(cfg.render_seed.value_or(cfg.seed) ^ 0xc2b2ae3d27d4eb4fULL);
  std::uniform_int_distribution<int> jitter(-1, 1);
  std::uniform_real_distribution<float> noise(-static_cast<float>(cfg.noise),
                                              static_cast<float>(cfg.noise));
  int next_id = 0;
  for (const auto& ident : ds.identities) {
    for (int seq = 0; seq < cfg.tracklets_per_id; ++seq) {
      // One continuous sequence per (identity, camera pass), cut into tracklets.
      std::vector<float> stream;
      for (int f = 0; f < cfg.frames_per_tracklet; ++f) {
        const int dy = jitter(render_gen);
        const int dx = jitter(render_gen);
        auto img = render_identity(ident.attributes, cfg.height, cfg.width, dy, dx);
        if (cfg.noise > 0)
          for (float& p : img) p += noise(render_gen);
        stream.insert(stream.end(), img.begin(), img.end());
      }
      const std::size_t fsize = static_cast<std::size_t>(cfg.height) * cfg.width * 3;
      for (const auto& chunk : split_tracklets(static_cast<std::size_t>(cfg.frames_per_tracklet),
                                               static_cast<std::size_t>(cfg.max_tracklet_len))) {
        Tracklet t;
        t.id = next_id++;
        t.label = ident.label;
        t.camera = seq % 2;
        t.length = static_cast<int>(chunk.length);
        t.height = cfg.height;
        t.width = cfg.width;
        t.frames.assign(stream.begin() + static_cast<long>(chunk.offset * fsize),
                        stream.begin() + static_cast<long>((chunk.offset + chunk.length) * fsize));
        ds.tracklets.push_back(std::move(t));
      }
    }
  }
  return ds;
}

}  // namespace cgclip::data
