#pragma once

// Shared domain types. All are plain values; none hold mutable shared state.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "v2e/errors.hpp"

namespace v2e {

enum class CameraPlatform { Aerial, CCTV, Wearable };

inline constexpr std::array<CameraPlatform, 3> kAllPlatforms{
    CameraPlatform::Aerial, CameraPlatform::CCTV, CameraPlatform::Wearable};

char platform_code(CameraPlatform p);
std::string_view platform_name(CameraPlatform p);
// Accepts the single-letter code (A, C, W) or the full name, case-insensitive.
std::optional<CameraPlatform> parse_platform(std::string_view text);

using Direction = std::pair<CameraPlatform, CameraPlatform>;  // query, gallery
std::string direction_tag(const Direction& d);                // e.g. "A->C"
Direction parse_direction(std::string_view tag);

// The four cross-platform evaluation directions, in reporting order.
inline constexpr std::array<Direction, 4> kProtocolDirections{
    Direction{CameraPlatform::Aerial, CameraPlatform::CCTV},
    Direction{CameraPlatform::Aerial, CameraPlatform::Wearable},
    Direction{CameraPlatform::CCTV, CameraPlatform::Aerial},
    Direction{CameraPlatform::Wearable, CameraPlatform::Aerial}};

// H x W x 3 image, interleaved RGB, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  bool empty() const { return pixels.empty(); }
  float at(int y, int x, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
  bool operator==(const Image&) const = default;
};

struct ImageRecord {
  int person_id = 0;
  CameraPlatform platform = CameraPlatform::Aerial;
  int sequence = 0;
  Image image;              // empty until pixels are loaded
  std::string source_path;  // empty for purely in-memory records

  bool operator==(const ImageRecord&) const = default;
};

// Builds the canonical `PID_CAMID_SEQ` stem, e.g. "0012_A_0003".
std::string record_stem(int person_id, CameraPlatform p, int sequence);

struct FeatureMap {
  int64_t channels = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> data;  // channel-major

  static FeatureMap make(int64_t c, int64_t h, int64_t w, std::vector<double> data);
  double at(int64_t c, int64_t y, int64_t x) const {
    return data[static_cast<size_t>((c * height + y) * width + x)];
  }
  bool operator==(const FeatureMap&) const = default;
};

struct FeatureVector {
  std::vector<double> data;
  bool normalized = false;

  static FeatureVector make(std::vector<double> data, bool normalized);
  size_t size() const { return data.size(); }
  bool operator==(const FeatureVector&) const = default;
};

struct AffineParams {
  double scale_x = 1.0;
  double scale_y = 1.0;
  double shift_x = 0.0;
  double shift_y = 0.0;

  static constexpr double kMinScale = 0.05;

  // Scales into [kMinScale, 1], then each shift into [-(1-s), 1-s] so the
  // sampled window stays inside the source extent.
  AffineParams clamped() const;
  bool within_source(double tol = 1e-9) const;
  bool operator==(const AffineParams&) const = default;
};

struct DistanceDecomposition {
  double total = 0.0;
  std::vector<double> per_attribute;
  double reconstructed = 0.0;

  // reconstructed is always the sum of per_attribute.
  static DistanceDecomposition make(double total, std::vector<double> per_attribute);
  bool operator==(const DistanceDecomposition&) const = default;
};

struct ProtocolResult {
  Direction direction{CameraPlatform::Aerial, CameraPlatform::CCTV};
  double mean_ap = 0.0;
  std::map<int, double> cmc;  // rank -> matching rate
  int query_count = 0;
  int gallery_count = 0;
  int skipped_queries = 0;  // queries without a relevant gallery item

  bool operator==(const ProtocolResult&) const = default;
};

void to_json(nlohmann::json& j, const Image& v);
void from_json(const nlohmann::json& j, Image& v);
void to_json(nlohmann::json& j, const ImageRecord& v);
void from_json(const nlohmann::json& j, ImageRecord& v);
void to_json(nlohmann::json& j, const FeatureMap& v);
void from_json(const nlohmann::json& j, FeatureMap& v);
void to_json(nlohmann::json& j, const FeatureVector& v);
void from_json(const nlohmann::json& j, FeatureVector& v);
void to_json(nlohmann::json& j, const AffineParams& v);
void from_json(const nlohmann::json& j, AffineParams& v);
void to_json(nlohmann::json& j, const DistanceDecomposition& v);
void from_json(const nlohmann::json& j, DistanceDecomposition& v);
void to_json(nlohmann::json& j, const ProtocolResult& v);
void from_json(const nlohmann::json& j, ProtocolResult& v);

}  // namespace v2e
