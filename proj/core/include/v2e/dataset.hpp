#pragma once

// Dataset directory parsing, attribute annotations, and image loading.
//
// Layout under a dataset root:
//   attributes.csv                 header `person_id,<label>...`, one row per identity
//   train/PID_CAMID_SEQ.<ext>      training images
//   test/PID_CAMID_SEQ.<ext>       pooled test images; protocols are derived
//   protocols/<Q>-<G>/query/...    optional explicit protocol splits, used
//   protocols/<Q>-<G>/gallery/...  instead of test/ when present
// CAMID is one of A (aerial), C (CCTV), W (wearable).

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "v2e/attributes.hpp"
#include "v2e/types.hpp"

namespace v2e {

enum class SplitName { Train, Query, Gallery };
std::string_view split_name(SplitName s);

struct DatasetSplit {
  SplitName name = SplitName::Train;
  std::vector<ImageRecord> records;
  std::map<int, AttributeVector> attributes;

  std::vector<int> identities() const;  // sorted, unique
};

struct ProtocolSpec {
  CameraPlatform query_platform = CameraPlatform::Aerial;
  CameraPlatform gallery_platform = CameraPlatform::CCTV;
  int max_query_per_id = 6;

  Direction direction() const { return {query_platform, gallery_platform}; }
  void validate() const;  // throws ConfigError when platforms coincide
};

struct ProtocolSplit {
  ProtocolSpec spec;
  DatasetSplit query;
  DatasetSplit gallery;
};

struct ParseOptions {
  int max_query_per_id = 6;
  // Malformed file names abort parsing when true; otherwise they are
  // collected into ParsedDataset::errors and skipped.
  bool strict = true;
  bool require_train = true;
};

struct ParsedDataset {
  DatasetSplit train;
  std::map<Direction, ProtocolSplit> protocols;
  std::vector<std::string> errors;
};

struct FileStem {
  int person_id;
  CameraPlatform platform;
  int sequence;
};

bool is_image_file(const std::filesystem::path& p);
// Parses `PID_CAMID_SEQ.<ext>`; throws ParseError naming the file.
FileStem parse_file_name(const std::filesystem::path& p);

std::map<int, AttributeVector> load_attributes(const std::string& path, const AttributeSchema& schema);

ParsedDataset parse_dataset(const std::string& root, DatasetMode mode, const ParseOptions& options = {});
ParsedDataset parse_dataset(const std::string& root, const AttributeSchema& schema, const ParseOptions& options = {});

// Decodes an image file to RGB in [0,1], resized to height x width.
Image load_image(const std::string& path, int height, int width);
void save_image(const std::string& path, const Image& image);
Image resize_image(const Image& image, int height, int width);
// Fills every record's pixels from its source_path.
void load_pixels(DatasetSplit& split, int height, int width);

}  // namespace v2e
