#include "v2e/attributes.hpp"

#include <fstream>
#include <sstream>

#include "schemas_embedded.hpp"
#include "v2e/errors.hpp"

namespace v2e {

int attribute_count(DatasetMode mode) {
  switch (mode) {
    case DatasetMode::Market1501: return 28;
    case DatasetMode::UavHuman: return 38;
    case DatasetMode::AgReidV2: return 88;
  }
  return 0;
}

std::string_view mode_name(DatasetMode mode) {
  switch (mode) {
    case DatasetMode::Market1501: return "market1501";
    case DatasetMode::UavHuman: return "uav-human";
    case DatasetMode::AgReidV2: return "ag-reid-v2";
  }
  return "?";
}

DatasetMode parse_mode(std::string_view name) {
  if (name == "market1501" || name == "28") return DatasetMode::Market1501;
  if (name == "uav-human" || name == "38") return DatasetMode::UavHuman;
  if (name == "ag-reid-v2" || name == "88") return DatasetMode::AgReidV2;
  throw ConfigError("unknown dataset mode '" + std::string(name) + "'");
}

int SoftLabel::index_of(std::string_view category) const {
  for (size_t i = 0; i < categories.size(); ++i)
    if (categories[i] == category) return static_cast<int>(i);
  return -1;
}

AttributeSchema AttributeSchema::parse(std::string_view text, const std::string& origin) {
  AttributeSchema s;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = origin + ":" + std::to_string(lineno);
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "version") {
      if (!(ls >> s.version_)) throw ParseError(where, "version needs an integer");
    } else if (key == "mode") {
      ls >> s.mode_;
    } else if (key == "label") {
      std::string name;
      ls >> name;
      if (name.empty() || name.back() != ':') throw ParseError(where, "expected 'label NAME: categories...'");
      name.pop_back();
      SoftLabel label{name, {}, s.bit_count_};
      for (std::string cat; ls >> cat;) {
        if (label.index_of(cat) >= 0) throw ParseError(where, "duplicate category '" + cat + "'");
        label.categories.push_back(cat);
      }
      if (label.categories.size() < 2) throw ParseError(where, "label '" + name + "' needs at least two categories");
      if (s.label_index(name) >= 0) throw ParseError(where, "duplicate label '" + name + "'");
      s.bit_count_ += label.size();
      s.labels_.push_back(std::move(label));
    } else {
      throw ParseError(where, "unknown directive '" + key + "'");
    }
  }
  if (s.version_ != 1) throw ParseError(origin, "unsupported schema version " + std::to_string(s.version_));
  if (s.labels_.empty()) throw ParseError(origin, "schema declares no labels");
  for (size_t li = 0; li < s.labels_.size(); ++li)
    for (int b = 0; b < s.labels_[li].size(); ++b) s.bit_owner_.push_back(static_cast<int>(li));
  return s;
}

AttributeSchema AttributeSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open attribute schema '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string_view AttributeSchema::builtin_text(DatasetMode mode) {
  switch (mode) {
    case DatasetMode::Market1501: return embedded::kMarket1501Schema;
    case DatasetMode::UavHuman: return embedded::kUavHumanSchema;
    case DatasetMode::AgReidV2: return embedded::kAgReidV2Schema;
  }
  return {};
}

const AttributeSchema& AttributeSchema::builtin(DatasetMode mode) {
  static const AttributeSchema market = parse(builtin_text(DatasetMode::Market1501), "market1501.schema");
  static const AttributeSchema uav = parse(builtin_text(DatasetMode::UavHuman), "uav_human.schema");
  static const AttributeSchema agreid = parse(builtin_text(DatasetMode::AgReidV2), "ag_reid_v2.schema");
  switch (mode) {
    case DatasetMode::Market1501: return market;
    case DatasetMode::UavHuman: return uav;
    case DatasetMode::AgReidV2: return agreid;
  }
  return agreid;
}

int AttributeSchema::label_index(std::string_view name) const {
  for (size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i].name == name) return static_cast<int>(i);
  return -1;
}

int AttributeSchema::label_of_bit(int bit) const {
  return bit_owner_.at(static_cast<size_t>(bit));
}

std::string AttributeSchema::bit_name(int bit) const {
  const auto& label = labels_.at(static_cast<size_t>(label_of_bit(bit)));
  return label.name + "=" + label.categories[static_cast<size_t>(bit - label.offset)];
}

AttributeVector AttributeVector::from_categories(const AttributeSchema& schema,
                                                 const std::vector<int>& categories) {
  if (categories.size() != schema.labels().size()) {
    throw ConfigError("expected " + std::to_string(schema.labels().size()) + " categories, got " +
                      std::to_string(categories.size()));
  }
  AttributeVector v;
  v.bits.assign(static_cast<size_t>(schema.bit_count()), 0);
  for (size_t i = 0; i < categories.size(); ++i) {
    const auto& label = schema.labels()[i];
    if (categories[i] < 0 || categories[i] >= label.size()) {
      throw ConfigError("category index out of range for label '" + label.name + "'");
    }
    v.bits[static_cast<size_t>(label.offset + categories[i])] = 1;
  }
  return v;
}

std::vector<int> AttributeVector::categories(const AttributeSchema& schema) const {
  std::vector<int> out;
  for (const auto& label : schema.labels()) {
    int found = -1, count = 0;
    for (int b = 0; b < label.size(); ++b)
      if (bits.at(static_cast<size_t>(label.offset + b))) {
        found = b;
        ++count;
      }
    out.push_back(count == 1 ? found : -1);
  }
  return out;
}

int AttributeVector::popcount() const {
  int n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  return n;
}

bool validate_attribute_vector(const AttributeVector& v, const AttributeSchema& schema) {
  if (static_cast<int>(v.bits.size()) != schema.bit_count()) {
    throw ConfigError("attribute vector has " + std::to_string(v.bits.size()) + " bits, schema '" +
                      schema.mode() + "' expects " + std::to_string(schema.bit_count()));
  }
  for (auto b : v.bits)
    if (b > 1) return false;
  for (int c : v.categories(schema))
    if (c < 0) return false;
  return true;
}

void to_json(nlohmann::json& j, const AttributeVector& v) {
  std::string s;
  for (auto b : v.bits) s.push_back(b ? '1' : '0');
  j = s;
}

void from_json(const nlohmann::json& j, AttributeVector& v) {
  const auto s = j.get<std::string>();
  v.bits.clear();
  for (char c : s) {
    if (c != '0' && c != '1') throw ConfigError("attribute bit string holds '" + std::string(1, c) + "'");
    v.bits.push_back(c == '1' ? 1 : 0);
  }
}

}  // namespace v2e
