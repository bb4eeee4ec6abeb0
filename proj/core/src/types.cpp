#include "v2e/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

namespace v2e {

char platform_code(CameraPlatform p) {
  switch (p) {
    case CameraPlatform::Aerial: return 'A';
    case CameraPlatform::CCTV: return 'C';
    case CameraPlatform::Wearable: return 'W';
  }
  return '?';
}

std::string_view platform_name(CameraPlatform p) {
  switch (p) {
    case CameraPlatform::Aerial: return "Aerial";
    case CameraPlatform::CCTV: return "CCTV";
    case CameraPlatform::Wearable: return "Wearable";
  }
  return "?";
}

std::optional<CameraPlatform> parse_platform(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "a" || lower == "aerial") return CameraPlatform::Aerial;
  if (lower == "c" || lower == "cctv") return CameraPlatform::CCTV;
  if (lower == "w" || lower == "wearable") return CameraPlatform::Wearable;
  return std::nullopt;
}

std::string direction_tag(const Direction& d) {
  return std::string(1, platform_code(d.first)) + "->" + platform_code(d.second);
}

Direction parse_direction(std::string_view tag) {
  const auto arrow = tag.find("->");
  if (arrow == std::string_view::npos) throw ConfigError("bad direction tag '" + std::string(tag) + "'");
  auto q = parse_platform(tag.substr(0, arrow));
  auto g = parse_platform(tag.substr(arrow + 2));
  if (!q || !g) throw ConfigError("bad direction tag '" + std::string(tag) + "'");
  if (*q == *g) throw ConfigError("direction must join two distinct platforms: '" + std::string(tag) + "'");
  return {*q, *g};
}

std::string record_stem(int person_id, CameraPlatform p, int sequence) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d_%c_%04d", person_id, platform_code(p), sequence);
  return buf;
}

FeatureMap FeatureMap::make(int64_t c, int64_t h, int64_t w, std::vector<double> data) {
  if (c <= 0 || h <= 0 || w <= 0) throw ConfigError("FeatureMap dimensions must be positive");
  if (static_cast<int64_t>(data.size()) != c * h * w) throw ConfigError("FeatureMap data size mismatch");
  for (double v : data)
    if (!std::isfinite(v)) throw ConfigError("FeatureMap holds a non-finite value");
  return FeatureMap{c, h, w, std::move(data)};
}

FeatureVector FeatureVector::make(std::vector<double> data, bool normalized) {
  double sq = 0;
  for (double v : data) {
    if (!std::isfinite(v)) throw ConfigError("FeatureVector holds a non-finite value");
    sq += v * v;
  }
  if (normalized && std::fabs(std::sqrt(sq) - 1.0) > 1e-6) {
    throw ConfigError("FeatureVector flagged normalized but has norm " + std::to_string(std::sqrt(sq)));
  }
  return FeatureVector{std::move(data), normalized};
}

AffineParams AffineParams::clamped() const {
  AffineParams r;
  r.scale_x = std::clamp(scale_x, kMinScale, 1.0);
  r.scale_y = std::clamp(scale_y, kMinScale, 1.0);
  r.shift_x = std::clamp(shift_x, -(1.0 - r.scale_x), 1.0 - r.scale_x);
  r.shift_y = std::clamp(shift_y, -(1.0 - r.scale_y), 1.0 - r.scale_y);
  return r;
}

bool AffineParams::within_source(double tol) const {
  return scale_x > 0 && scale_x <= 1 + tol && scale_y > 0 && scale_y <= 1 + tol &&
         std::fabs(shift_x) + scale_x <= 1 + tol && std::fabs(shift_y) + scale_y <= 1 + tol;
}

DistanceDecomposition DistanceDecomposition::make(double total, std::vector<double> per_attribute) {
  double s = 0;
  for (double d : per_attribute) s += d;
  return DistanceDecomposition{total, std::move(per_attribute), s};
}

void to_json(nlohmann::json& j, const Image& v) {
  j = {{"height", v.height}, {"width", v.width}, {"pixels", v.pixels}};
}
void from_json(const nlohmann::json& j, Image& v) {
  j.at("height").get_to(v.height);
  j.at("width").get_to(v.width);
  j.at("pixels").get_to(v.pixels);
}

void to_json(nlohmann::json& j, const ImageRecord& v) {
  j = {{"person_id", v.person_id},
       {"platform", std::string(1, platform_code(v.platform))},
       {"sequence", v.sequence},
       {"image", v.image},
       {"source_path", v.source_path}};
}
void from_json(const nlohmann::json& j, ImageRecord& v) {
  j.at("person_id").get_to(v.person_id);
  auto p = parse_platform(j.at("platform").get<std::string>());
  if (!p) throw ConfigError("unknown platform in record");
  v.platform = *p;
  j.at("sequence").get_to(v.sequence);
  j.at("image").get_to(v.image);
  j.at("source_path").get_to(v.source_path);
}

void to_json(nlohmann::json& j, const FeatureMap& v) {
  j = {{"channels", v.channels}, {"height", v.height}, {"width", v.width}, {"data", v.data}};
}
void from_json(const nlohmann::json& j, FeatureMap& v) {
  v = FeatureMap::make(j.at("channels").get<int64_t>(), j.at("height").get<int64_t>(),
                       j.at("width").get<int64_t>(), j.at("data").get<std::vector<double>>());
}

void to_json(nlohmann::json& j, const FeatureVector& v) {
  j = {{"data", v.data}, {"normalized", v.normalized}};
}
void from_json(const nlohmann::json& j, FeatureVector& v) {
  j.at("data").get_to(v.data);
  j.at("normalized").get_to(v.normalized);
}

void to_json(nlohmann::json& j, const AffineParams& v) {
  j = {{"scale_x", v.scale_x}, {"scale_y", v.scale_y}, {"shift_x", v.shift_x}, {"shift_y", v.shift_y}};
}
void from_json(const nlohmann::json& j, AffineParams& v) {
  j.at("scale_x").get_to(v.scale_x);
  j.at("scale_y").get_to(v.scale_y);
  j.at("shift_x").get_to(v.shift_x);
  j.at("shift_y").get_to(v.shift_y);
}

void to_json(nlohmann::json& j, const DistanceDecomposition& v) {
  j = {{"total", v.total}, {"per_attribute", v.per_attribute}, {"reconstructed", v.reconstructed}};
}
void from_json(const nlohmann::json& j, DistanceDecomposition& v) {
  j.at("total").get_to(v.total);
  j.at("per_attribute").get_to(v.per_attribute);
  j.at("reconstructed").get_to(v.reconstructed);
}

void to_json(nlohmann::json& j, const ProtocolResult& v) {
  nlohmann::json cmc = nlohmann::json::object();
  for (const auto& [rank, rate] : v.cmc) cmc[std::to_string(rank)] = rate;
  j = {{"direction", direction_tag(v.direction)},
       {"mAP", v.mean_ap},
       {"cmc", cmc},
       {"query_count", v.query_count},
       {"gallery_count", v.gallery_count},
       {"skipped_queries", v.skipped_queries}};
}
void from_json(const nlohmann::json& j, ProtocolResult& v) {
  v.direction = parse_direction(j.at("direction").get<std::string>());
  j.at("mAP").get_to(v.mean_ap);
  v.cmc.clear();
  for (const auto& [rank, rate] : j.at("cmc").items()) v.cmc[std::stoi(rank)] = rate.get<double>();
  j.at("query_count").get_to(v.query_count);
  j.at("gallery_count").get_to(v.gallery_count);
  v.skipped_queries = j.value("skipped_queries", 0);
}

}  // namespace v2e
