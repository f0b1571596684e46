#pragma once

// Synthetic attribute-identity corpus: every identity is a tuple of coarse
// (uniform, team) and fine (number glyph, hair, shoes, socks) attributes,
// rendered as colored blocks, plus closed-vocabulary captions listing the
// attribute tokens.

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cgclip::data {

enum class Attribute : int { kUniform = 0, kTeam, kNumber, kHair, kShoes, kSocks };

inline constexpr std::size_t kAttributeCount = 6;
inline constexpr std::array<int, kAttributeCount> kAttributeCardinality{4, 2, 4, 4, 4, 4};
inline constexpr std::array<const char*, kAttributeCount> kAttributeNames{
    "uniform", "team", "number", "hair", "shoes", "socks"};

bool is_fine(Attribute a);

struct Attributes {
  std::array<int, kAttributeCount> values{};

  int& operator[](Attribute a) { return values[static_cast<std::size_t>(a)]; }
  int operator[](Attribute a) const { return values[static_cast<std::size_t>(a)]; }
  auto operator<=>(const Attributes&) const = default;
};

std::size_t attribute_space_size();

// Closed caption vocabulary.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kSos = 1;
inline constexpr int kEos = 2;
inline constexpr int kIdIs = 3;  // "the person's ID is"
inline constexpr int kFirstAttribute = 4;
int attribute_token(Attribute a, int value);
int first_id_token();
int id_token(int label);
int vocab_size(int identity_count);
}  // namespace vocab

struct Identity {
  int label = 0;
  Attributes attributes;
};

struct Tracklet {
  int id = 0;
  int label = 0;
  int camera = 0;
  int length = 0;
  int height = 0;
  int width = 0;
  std::vector<float> frames;  // [length, height, width, 3], row-major

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * 3; }
  std::span<const float> frame(int l) const {
    return std::span<const float>(frames).subspan(static_cast<std::size_t>(l) * frame_size(),
                                                  frame_size());
  }
};

struct CaptionRecord {
  int label = 0;
  std::vector<int> tokens;  // SOS, attribute tokens, EOS
};

struct DatasetConfig {
  int identities = 16;
  int tracklets_per_id = 8;
  int frames_per_tracklet = 4;
  bool hard_split = false;
  double noise = 0.05;
  std::uint64_t seed = 0;
  // Seeds per-frame jitter and noise; defaults to `seed`. A different render
  // seed yields fresh tracklets of the same identities.
  std::optional<std::uint64_t> render_seed;
  int captions_per_id = 10;
  int max_tracklet_len = 50;
  int height = 32;
  int width = 16;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Identity> identities;
  std::vector<Tracklet> tracklets;
  std::vector<CaptionRecord> captions;

  int identity_count() const { return static_cast<int>(identities.size()); }
  std::size_t frame_count() const;
};

Dataset generate_synthetic(const DatasetConfig& config);

// Draws one frame of an identity with the figure shifted by (dy, dx) pixels.
// Noise is added by the caller.
std::vector<float> render_identity(const Attributes& attrs, int height, int width, int dy, int dx);

// Pixel rectangle [row0, row1) x [col0, col1) occupied by an attribute at zero
// offset. Used by tests to check that hard-split pairs differ locally.
struct Region {
  int row0, row1, col0, col1;
};
std::vector<Region> attribute_regions(Attribute a);

// Recovers the attribute tuple from a caption's tokens.
Attributes decode_caption(std::span<const int> tokens);

}  // namespace cgclip::data
