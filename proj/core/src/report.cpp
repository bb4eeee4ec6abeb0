#include "v2e/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "v2e/backbone.hpp"
#include "v2e/errors.hpp"
#include "v2e/metrics.hpp"
#include "v2e/model.hpp"
#include "v2e/train.hpp"

namespace v2e {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const ProtocolResult* find_result(const ReportRow& row, const Direction& d) {
  for (const auto& r : row.results)
    if (r.direction == d) return &r;
  return nullptr;
}

double rank_rate(const ProtocolResult& r, int rank) {
  auto it = r.cmc.find(rank);
  return it == r.cmc.end() ? std::nan("") : it->second;
}

// Directions present in any row, in reporting order.
std::vector<Direction> directions_of(const std::vector<ReportRow>& rows) {
  std::vector<Direction> out;
  for (const auto& d : kProtocolDirections)
    for (const auto& row : rows)
      if (find_result(row, d)) {
        out.push_back(d);
        break;
      }
  return out;
}

std::string cell(double value, const double* base) {
  if (std::isnan(value)) return "-";
  std::string s = fmt::format("{:.2f}", 100.0 * value);
  if (base && !std::isnan(*base)) s += fmt::format(" ({:+.2f})", 100.0 * (value - *base));
  return s;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw RuntimeFault("cannot write " + path.string());
  out << text;
}

void plot_impacts(const std::vector<AttributeImpact>& impacts, const std::string& path) {
  auto sorted = impacts;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.share > b.share; });
  if (sorted.size() > 20) sorted.resize(20);
  const int bar_h = 18, label_w = 240, plot_w = 360, margin = 10;
  const int height = margin * 2 + bar_h * static_cast<int>(sorted.size()) + 20;
  cv::Mat canvas(height, label_w + plot_w + margin * 2 + 60, CV_8UC3, cv::Scalar(255, 255, 255));
  double top = 0;
  for (const auto& s : sorted) top = std::max(top, s.share);
  if (top <= 0) top = 1;
  cv::putText(canvas, "share of rank-1 distance", cv::Point(margin, margin + 8), cv::FONT_HERSHEY_SIMPLEX, 0.4,
              cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  for (size_t i = 0; i < sorted.size(); ++i) {
    const int y = margin + 20 + static_cast<int>(i) * bar_h;
    cv::putText(canvas, sorted[i].attribute, cv::Point(margin, y + bar_h - 5), cv::FONT_HERSHEY_SIMPLEX, 0.38,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    const int len = static_cast<int>(std::lround(plot_w * sorted[i].share / top));
    cv::rectangle(canvas, cv::Point(label_w, y + 2), cv::Point(label_w + std::max(len, 1), y + bar_h - 3),
                  cv::Scalar(180, 110, 40), cv::FILLED);
    cv::putText(canvas, fmt::format("{:.3f}", sorted[i].share), cv::Point(label_w + len + 4, y + bar_h - 5),
                cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(60, 60, 60), 1, cv::LINE_AA);
  }
  if (!cv::imwrite(path, canvas)) throw RuntimeFault("cannot write " + path);
}

}  // namespace

std::vector<ReportRow> report_rows(const std::vector<AblationRow>& ablation) {
  std::vector<ReportRow> rows;
  for (const auto& a : ablation) rows.push_back({a.tag, a.results});
  return rows;
}

std::string format_table(const std::vector<ReportRow>& rows, int rank) {
  const auto dirs = directions_of(rows);
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"model"};
  for (const auto& d : dirs) {
    header.push_back(direction_tag(d) + " mAP");
    header.push_back(direction_tag(d) + fmt::format(" R{}", rank));
  }
  cells.push_back(header);
  const bool deltas = rows.size() > 1;
  for (size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::string> line{rows[i].tag};
    for (const auto& d : dirs) {
      const ProtocolResult* r = find_result(rows[i], d);
      const ProtocolResult* b = deltas && i > 0 ? find_result(rows.front(), d) : nullptr;
      const double base_map = b ? b->mean_ap : std::nan("");
      const double base_rank = b ? rank_rate(*b, rank) : std::nan("");
      line.push_back(r ? cell(r->mean_ap, b ? &base_map : nullptr) : "-");
      line.push_back(r ? cell(rank_rate(*r, rank), b ? &base_rank : nullptr) : "-");
    }
    cells.push_back(line);
  }
  std::vector<size_t> widths(header.size(), 0);
  for (const auto& line : cells)
    for (size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());
  std::ostringstream out;
  for (size_t r = 0; r < cells.size(); ++r) {
    for (size_t c = 0; c < cells[r].size(); ++c) {
      if (c == 0)
        out << fmt::format("{:<{}}", cells[r][c], widths[c]);
      else
        out << "  " << fmt::format("{:>{}}", cells[r][c], widths[c]);
    }
    out << '\n';
    if (r == 0) {
      size_t total = 0;
      for (size_t w : widths) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

json report_json(const std::vector<ReportRow>& rows, const std::vector<AttributeImpact>& impacts) {
  json models = json::object();
  for (const auto& row : rows) {
    json dirs = json::object();
    for (const auto& r : row.results) {
      json cmc = json::object();
      for (auto [k, v] : r.cmc) cmc[std::to_string(k)] = v;
      dirs[direction_tag(r.direction)] = {{"mAP", r.mean_ap},
                                          {"cmc", cmc},
                                          {"queries", r.query_count},
                                          {"gallery", r.gallery_count},
                                          {"skipped_queries", r.skipped_queries}};
    }
    models[row.tag] = dirs;
  }
  json order = json::array();
  for (const auto& row : rows) order.push_back(row.tag);
  json imp = json::array();
  for (const auto& a : impacts) imp.push_back({{"attribute", a.attribute}, {"share", a.share}});
  return {{"models", models}, {"order", order}, {"attribute_impact", imp}};
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::set<int> ranks;
  for (const auto& row : rows)
    for (const auto& r : row.results)
      for (auto [k, v] : r.cmc) ranks.insert(k);
  std::ostringstream out;
  out << "model,direction,mAP";
  for (int k : ranks) out << ",rank" << k;
  out << ",delta_mAP\n";
  for (const auto& row : rows) {
    for (const auto& r : row.results) {
      out << row.tag << ',' << direction_tag(r.direction) << ',' << fmt::format("{:.6f}", r.mean_ap);
      for (int k : ranks) out << ',' << fmt::format("{:.6f}", rank_rate(r, k));
      const ProtocolResult* b = rows.size() > 1 ? find_result(rows.front(), r.direction) : nullptr;
      out << ',' << (b ? fmt::format("{:.6f}", r.mean_ap - b->mean_ap) : std::string());
      out << '\n';
    }
  }
  return out.str();
}

ReportFiles emit_report(const std::vector<ReportRow>& rows, const std::vector<AttributeImpact>& impacts,
                        const std::string& out_dir) {
  if (rows.empty()) throw ConfigError("report needs at least one result row");
  fs::create_directories(out_dir);
  ReportFiles files;
  const fs::path dir(out_dir);
  files.text_path = (dir / "report.txt").string();
  files.json_path = (dir / "results.json").string();
  files.csv_path = (dir / "results.csv").string();
  std::string text = format_table(rows);
  if (impacts.empty()) {
    files.notices.push_back("no attribute data supplied; attribute impact plot skipped");
  } else {
    auto sorted = impacts;
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.share > b.share; });
    text += "\nattribute impact on rank-1 matches (top 10)\n";
    for (size_t i = 0; i < std::min<size_t>(10, sorted.size()); ++i)
      text += fmt::format("  {:<32} {:.4f}\n", sorted[i].attribute, sorted[i].share);
    files.plot_path = (dir / "attribute_impact.png").string();
    plot_impacts(impacts, *files.plot_path);
  }
  write_file(files.text_path, text);
  write_file(files.json_path, report_json(rows, impacts).dump(2) + "\n");
  write_file(files.csv_path, report_csv(rows));
  return files;
}

std::vector<AttributeImpact> rank1_attribute_impact(const V2EModel& model, const AttributeSchema& schema,
                                                    const ProtocolSplit& split, int chunk) {
  if (!model.config().adh.enabled) return {};
  if (split.query.records.empty() || split.gallery.records.empty()) return {};
  const auto& b = model.config().backbone;
  const int m = schema.bit_count();
  if (m != model.config().adh.attributes)
    throw ConfigError(fmt::format("schema has {} attributes but the model emits {}", m, model.config().adh.attributes));

  struct Encoded {
    std::vector<std::vector<double>> f;    // fused embedding
    std::vector<std::vector<double>> att;  // [M*C], each attribute row unit-normalized
  };
  int64_t channels = 0;
  auto encode = [&](const DatasetSplit& s) {
    ag::NoGradGuard guard;
    Encoded e;
    for (size_t start = 0; start < s.records.size(); start += static_cast<size_t>(chunk)) {
      const size_t end = std::min(s.records.size(), start + static_cast<size_t>(chunk));
      std::vector<const Image*> part;
      for (size_t i = start; i < end; ++i) part.push_back(&s.records[i].image);
      auto o = model.forward(image_batch(part, b.input_height, b.input_width), true);
      const int64_t d = o.f.dim(1);
      channels = o.adh->features.dim(2);
      auto fv = o.f.data();
      auto av = o.adh->features.data();
      for (size_t i = 0; i < part.size(); ++i) {
        e.f.emplace_back(fv.begin() + static_cast<std::ptrdiff_t>(i * d), fv.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
        std::vector<double> a(av.begin() + static_cast<std::ptrdiff_t>(i * m * channels),
                              av.begin() + static_cast<std::ptrdiff_t>((i + 1) * m * channels));
        for (int k = 0; k < m; ++k) {
          double norm = 0;
          for (int64_t c = 0; c < channels; ++c) norm += a[k * channels + c] * a[k * channels + c];
          norm = std::max(std::sqrt(norm), 1e-12);
          for (int64_t c = 0; c < channels; ++c) a[k * channels + c] /= norm;
        }
        e.att.push_back(std::move(a));
      }
    }
    return e;
  };
  const Encoded q = encode(split.query);
  const Encoded g = encode(split.gallery);

  std::vector<double> totals(static_cast<size_t>(m), 0.0);
  int counted = 0;
  std::vector<double> row(g.f.size());
  for (size_t i = 0; i < q.f.size(); ++i) {
    for (size_t j = 0; j < g.f.size(); ++j) {
      double s = 0;
      for (size_t c = 0; c < q.f[i].size(); ++c) s += (q.f[i][c] - g.f[j][c]) * (q.f[i][c] - g.f[j][c]);
      row[j] = s;
    }
    const size_t best = static_cast<size_t>(rank_gallery(row).front());
    std::vector<double> dk(static_cast<size_t>(m));
    double sum = 0;
    for (int k = 0; k < m; ++k) {
      double dot = 0;
      for (int64_t c = 0; c < channels; ++c) dot += q.att[i][k * channels + c] * g.att[best][k * channels + c];
      dk[static_cast<size_t>(k)] = std::max(0.0, 2.0 - 2.0 * dot) / m;
      sum += dk[static_cast<size_t>(k)];
    }
    if (sum <= 0) continue;
    for (int k = 0; k < m; ++k) totals[static_cast<size_t>(k)] += dk[static_cast<size_t>(k)] / sum;
    ++counted;
  }
  std::vector<AttributeImpact> out;
  for (int k = 0; k < m; ++k)
    out.push_back({schema.bit_name(k), counted ? totals[static_cast<size_t>(k)] / counted : 0.0});
  return out;
}

std::vector<ReportRow> rows_from_json(const json& j) {
  std::vector<ReportRow> rows;
  try {
    for (const auto& tag : j.at("order")) {
      ReportRow row;
      row.tag = tag.get<std::string>();
      const auto& dirs = j.at("models").at(row.tag);
      for (const auto& d : kProtocolDirections) {
        const std::string key = direction_tag(d);
        if (!dirs.contains(key)) continue;
        const auto& v = dirs.at(key);
        ProtocolResult r;
        r.direction = d;
        r.mean_ap = v.at("mAP").get<double>();
        for (auto it = v.at("cmc").begin(); it != v.at("cmc").end(); ++it) r.cmc[std::stoi(it.key())] = it->get<double>();
        r.query_count = v.at("queries").get<int>();
        r.gallery_count = v.at("gallery").get<int>();
        r.skipped_queries = v.at("skipped_queries").get<int>();
        row.results.push_back(r);
      }
      rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed results document: ") + e.what());
  }
  return rows;
}

std::vector<AttributeImpact> impacts_from_json(const json& j) {
  std::vector<AttributeImpact> out;
  if (!j.contains("attribute_impact")) return out;
  try {
    for (const auto& a : j.at("attribute_impact"))
      out.push_back({a.at("attribute").get<std::string>(), a.at("share").get<double>()});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed attribute impact list: ") + e.what());
  }
  return out;
}

}  // namespace v2e
