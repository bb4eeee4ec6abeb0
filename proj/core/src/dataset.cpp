#include "v2e/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "v2e/errors.hpp"

namespace fs = std::filesystem;

namespace v2e {

std::string_view split_name(SplitName s) {
  switch (s) {
    case SplitName::Train: return "train";
    case SplitName::Query: return "query";
    case SplitName::Gallery: return "gallery";
  }
  return "?";
}

std::vector<int> DatasetSplit::identities() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.person_id);
  return {ids.begin(), ids.end()};
}

void ProtocolSpec::validate() const {
  if (query_platform == gallery_platform) {
    throw ConfigError("protocol query and gallery platforms must differ");
  }
  if (max_query_per_id < 1) throw ConfigError("max_query_per_id must be at least 1");
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".ppm" || ext == ".bmp";
}

namespace {

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.pop_back();
    size_t b = 0;
    while (b < cell.size() && std::isspace(static_cast<unsigned char>(cell[b]))) ++b;
    out.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename().string().starts_with(".")) continue;
    if (!is_image_file(entry.path())) continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<ImageRecord> read_records(const fs::path& dir, const ParseOptions& options,
                                      std::vector<std::string>& errors) {
  std::vector<ImageRecord> records;
  for (const auto& path : sorted_files(dir)) {
    try {
      const FileStem stem = parse_file_name(path);
      records.push_back(ImageRecord{stem.person_id, stem.platform, stem.sequence, {}, path.string()});
    } catch (const ParseError& e) {
      if (options.strict) throw;
      errors.push_back(e.what());
    }
  }
  return records;
}

void check_unique(const std::vector<ImageRecord>& records, const std::string& where) {
  std::set<std::tuple<int, CameraPlatform, int>> seen;
  for (const auto& r : records) {
    if (!seen.emplace(r.person_id, r.platform, r.sequence).second) {
      throw ConfigError(where + ": duplicate record " + record_stem(r.person_id, r.platform, r.sequence));
    }
  }
}

void attach_attributes(DatasetSplit& split, const std::map<int, AttributeVector>& attrs) {
  for (int id : split.identities()) {
    auto it = attrs.find(id);
    if (it == attrs.end()) {
      throw ConfigError("identity " + std::to_string(id) + " in split '" + std::string(split_name(split.name)) +
                        "' has no attribute annotation");
    }
    split.attributes.emplace(id, it->second);
  }
}

bool by_identity_sequence(const ImageRecord& a, const ImageRecord& b) {
  return std::tie(a.person_id, a.sequence) < std::tie(b.person_id, b.sequence);
}

ProtocolSplit derive_protocol(const std::vector<ImageRecord>& pool, const ProtocolSpec& spec) {
  std::set<int> on_query, on_gallery;
  for (const auto& r : pool) {
    if (r.platform == spec.query_platform) on_query.insert(r.person_id);
    if (r.platform == spec.gallery_platform) on_gallery.insert(r.person_id);
  }
  std::set<int> shared;
  std::set_intersection(on_query.begin(), on_query.end(), on_gallery.begin(), on_gallery.end(),
                        std::inserter(shared, shared.end()));
  ProtocolSplit out{spec, {SplitName::Query, {}, {}}, {SplitName::Gallery, {}, {}}};
  for (const auto& r : pool) {
    if (!shared.count(r.person_id)) continue;
    if (r.platform == spec.query_platform) out.query.records.push_back(r);
    if (r.platform == spec.gallery_platform) out.gallery.records.push_back(r);
  }
  std::sort(out.query.records.begin(), out.query.records.end(), by_identity_sequence);
  std::sort(out.gallery.records.begin(), out.gallery.records.end(), by_identity_sequence);
  return out;
}

// Keeps the lowest-sequence `cap` query images per identity.
void cap_queries(DatasetSplit& query, int cap) {
  std::sort(query.records.begin(), query.records.end(), by_identity_sequence);
  std::map<int, int> taken;
  std::vector<ImageRecord> kept;
  for (auto& r : query.records)
    if (taken[r.person_id]++ < cap) kept.push_back(std::move(r));
  query.records = std::move(kept);
}

}  // namespace

FileStem parse_file_name(const fs::path& p) {
  const std::string stem = p.stem().string();
  const std::string where = p.string();
  const auto first = stem.find('_');
  const auto second = first == std::string::npos ? std::string::npos : stem.find('_', first + 1);
  if (second == std::string::npos || stem.find('_', second + 1) != std::string::npos) {
    throw ParseError(where, "file name must follow PID_CAMID_SEQ");
  }
  const std::string pid = stem.substr(0, first);
  const std::string cam = stem.substr(first + 1, second - first - 1);
  const std::string seq = stem.substr(second + 1);
  if (!all_digits(pid)) throw ParseError(where, "person id '" + pid + "' is not a non-negative integer");
  if (!all_digits(seq)) throw ParseError(where, "sequence '" + seq + "' is not a non-negative integer");
  if (cam.size() != 1) throw ParseError(where, "camera id '" + cam + "' must be one of A, C, W");
  const auto platform = parse_platform(cam);
  if (!platform) throw ParseError(where, "camera id '" + cam + "' must be one of A, C, W");
  try {
    return FileStem{std::stoi(pid), *platform, std::stoi(seq)};
  } catch (const std::out_of_range&) {
    throw ParseError(where, "numeric field out of range");
  }
}

std::map<int, AttributeVector> load_attributes(const std::string& path, const AttributeSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open attribute file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, "empty attribute file");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "person_id") throw ParseError(path + ":1", "first column must be person_id");
  // column -> label index
  std::vector<int> column_label(header.size(), -1);
  std::vector<bool> covered(schema.labels().size(), false);
  for (size_t c = 1; c < header.size(); ++c) {
    const int li = schema.label_index(header[c]);
    if (li < 0) throw ParseError(path + ":1", "unknown label column '" + header[c] + "'");
    if (covered[static_cast<size_t>(li)]) throw ParseError(path + ":1", "duplicate label column '" + header[c] + "'");
    covered[static_cast<size_t>(li)] = true;
    column_label[c] = li;
  }
  for (size_t li = 0; li < covered.size(); ++li)
    if (!covered[li]) throw ParseError(path + ":1", "missing label column '" + schema.labels()[li].name + "'");

  std::map<int, AttributeVector> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(where, "expected " + std::to_string(header.size()) + " columns, got " +
                                  std::to_string(cells.size()));
    }
    if (!all_digits(cells[0])) throw ParseError(where, "person_id '" + cells[0] + "' is not a non-negative integer");
    const int pid = std::stoi(cells[0]);
    std::vector<int> categories(schema.labels().size(), -1);
    for (size_t c = 1; c < cells.size(); ++c) {
      const auto& label = schema.labels()[static_cast<size_t>(column_label[c])];
      const int idx = label.index_of(cells[c]);
      if (idx < 0) throw ParseError(where, "unknown " + label.name + " category '" + cells[c] + "'");
      categories[static_cast<size_t>(column_label[c])] = idx;
    }
    auto vec = AttributeVector::from_categories(schema, categories);
    auto [it, inserted] = out.emplace(pid, vec);
    if (!inserted && !(it->second == vec)) {
      throw ParseError(where, "conflicting annotations for person " + std::to_string(pid));
    }
  }
  return out;
}

ParsedDataset parse_dataset(const std::string& root_path, DatasetMode mode, const ParseOptions& options) {
  return parse_dataset(root_path, AttributeSchema::builtin(mode), options);
}

ParsedDataset parse_dataset(const std::string& root_path, const AttributeSchema& schema, const ParseOptions& options) {
  const fs::path root(root_path);
  if (!fs::is_directory(root)) throw ConfigError("dataset root '" + root_path + "' is not a directory");
  const auto attrs = load_attributes((root / "attributes.csv").string(), schema);

  ParsedDataset out;
  out.train.name = SplitName::Train;
  if (fs::is_directory(root / "train")) out.train.records = read_records(root / "train", options, out.errors);
  if (options.require_train && out.train.records.empty()) {
    throw ConfigError("training split under '" + root_path + "' is empty");
  }
  check_unique(out.train.records, "train");
  attach_attributes(out.train, attrs);

  std::set<int> test_ids;
  const fs::path explicit_dir = root / "protocols";
  if (fs::is_directory(explicit_dir)) {
    for (const auto& d : kProtocolDirections) {
      const std::string tag = std::string(1, platform_code(d.first)) + "-" + platform_code(d.second);
      const fs::path dir = explicit_dir / tag;
      if (!fs::is_directory(dir)) continue;
      ProtocolSpec spec{d.first, d.second, options.max_query_per_id};
      ProtocolSplit split{spec, {SplitName::Query, {}, {}}, {SplitName::Gallery, {}, {}}};
      if (fs::is_directory(dir / "query")) split.query.records = read_records(dir / "query", options, out.errors);
      if (fs::is_directory(dir / "gallery"))
        split.gallery.records = read_records(dir / "gallery", options, out.errors);
      if (split.query.records.empty() || split.gallery.records.empty()) {
        throw ConfigError("protocol " + tag + " has an empty query or gallery split");
      }
      for (const auto& r : split.query.records)
        if (r.platform != d.first)
          throw ConfigError(r.source_path + ": query image is not from platform " + std::string(platform_name(d.first)));
      for (const auto& r : split.gallery.records)
        if (r.platform != d.second)
          throw ConfigError(r.source_path + ": gallery image is not from platform " +
                            std::string(platform_name(d.second)));
      check_unique(split.query.records, tag + "/query");
      check_unique(split.gallery.records, tag + "/gallery");
      cap_queries(split.query, spec.max_query_per_id);
      out.protocols.emplace(d, std::move(split));
    }
  } else if (fs::is_directory(root / "test")) {
    auto pool = read_records(root / "test", options, out.errors);
    if (pool.empty()) throw ConfigError("test split under '" + root_path + "' is empty");
    check_unique(pool, "test");
    for (const auto& d : kProtocolDirections) {
      ProtocolSpec spec{d.first, d.second, options.max_query_per_id};
      auto split = derive_protocol(pool, spec);
      if (split.query.records.empty()) continue;
      cap_queries(split.query, spec.max_query_per_id);
      out.protocols.emplace(d, std::move(split));
    }
  }
  for (auto& [d, split] : out.protocols) {
    attach_attributes(split.query, attrs);
    attach_attributes(split.gallery, attrs);
    for (int id : split.query.identities()) test_ids.insert(id);
    for (int id : split.gallery.identities()) test_ids.insert(id);
  }
  for (int id : out.train.identities()) {
    if (test_ids.count(id)) {
      throw ConfigError("identity " + std::to_string(id) + " appears in both training and test splits");
    }
  }
  return out;
}

Image resize_image(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  cv::Mat src(image.height, image.width, CV_32FC3, const_cast<float*>(image.pixels.data()));
  cv::Mat dst;
  const bool shrinking = height < image.height && width < image.width;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  Image out{height, width, {}};
  out.pixels.assign(reinterpret_cast<const float*>(dst.data),
                    reinterpret_cast<const float*>(dst.data) + static_cast<size_t>(height * width * 3));
  for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Image load_image(const std::string& path, int height, int width) {
  if (height < 16 || width < 16) throw ConfigError("image resolution must be at least 16x16");
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw RuntimeFault("cannot decode image '" + path + "'");
  cv::Mat rgb, f;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  Image raw{f.rows, f.cols, {}};
  raw.pixels.assign(reinterpret_cast<const float*>(f.data),
                    reinterpret_cast<const float*>(f.data) + static_cast<size_t>(f.rows * f.cols * 3));
  return resize_image(raw, height, width);
}

void save_image(const std::string& path, const Image& image) {
  cv::Mat f(image.height, image.width, CV_32FC3, const_cast<float*>(image.pixels.data()));
  cv::Mat u8, bgr;
  f.convertTo(u8, CV_8UC3, 255.0);
  cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path, bgr)) throw RuntimeFault("cannot write image '" + path + "'");
}

void load_pixels(DatasetSplit& split, int height, int width) {
  for (auto& r : split.records) {
    if (r.source_path.empty()) continue;
    r.image = load_image(r.source_path, height, width);
  }
}

}  // namespace v2e
