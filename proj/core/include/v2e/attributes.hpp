#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace v2e {

// Supported dataset modes and their attribute vector lengths.
enum class DatasetMode { Market1501, UavHuman, AgReidV2 };

int attribute_count(DatasetMode mode);  // 28, 38, 88
std::string_view mode_name(DatasetMode mode);
DatasetMode parse_mode(std::string_view name);  // accepts names or "28"/"38"/"88"

struct SoftLabel {
  std::string name;
  std::vector<std::string> categories;
  int offset = 0;  // first bit of this label's one-hot range

  int size() const { return static_cast<int>(categories.size()); }
  int index_of(std::string_view category) const;  // -1 when unknown
};

// Maps each categorical soft label onto a contiguous bit range.
class AttributeSchema {
 public:
  static AttributeSchema parse(std::string_view text, const std::string& origin = "<schema>");
  static AttributeSchema load(const std::string& path);
  // Schema shipped with the library for a dataset mode.
  static const AttributeSchema& builtin(DatasetMode mode);
  static std::string_view builtin_text(DatasetMode mode);

  int version() const { return version_; }
  const std::string& mode() const { return mode_; }
  int bit_count() const { return bit_count_; }
  const std::vector<SoftLabel>& labels() const { return labels_; }
  int label_index(std::string_view name) const;  // -1 when unknown
  // Label owning a bit.
  int label_of_bit(int bit) const;
  std::string bit_name(int bit) const;  // "label=category"

 private:
  int version_ = 0;
  std::string mode_;
  int bit_count_ = 0;
  std::vector<SoftLabel> labels_;
  std::vector<int> bit_owner_;
};

struct AttributeVector {
  std::vector<uint8_t> bits;

  // One-hot encodes per-label category indices.
  static AttributeVector from_categories(const AttributeSchema& schema,
                                         const std::vector<int>& categories);
  // Category index per label; -1 for a group that is not one-hot.
  std::vector<int> categories(const AttributeSchema& schema) const;
  int popcount() const;
  bool operator==(const AttributeVector&) const = default;
};

// True iff every label group holds exactly one set bit. A length that
// differs from the schema is a configuration error (throws ConfigError).
bool validate_attribute_vector(const AttributeVector& v, const AttributeSchema& schema);

void to_json(nlohmann::json& j, const AttributeVector& v);
void from_json(const nlohmann::json& j, AttributeVector& v);

}  // namespace v2e
