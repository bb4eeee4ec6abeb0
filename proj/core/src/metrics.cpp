#include "v2e/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "v2e/backbone.hpp"
#include "v2e/errors.hpp"

namespace v2e {

void DistanceMatrix::validate() const {
  if (static_cast<int64_t>(values.size()) != rows * cols)
    throw ConfigError(fmt::format("distance matrix holds {} values for {}x{}", values.size(), rows, cols));
  if (static_cast<int64_t>(query_ids.size()) != rows || static_cast<int64_t>(gallery_ids.size()) != cols)
    throw ConfigError("distance matrix identity lists do not match its shape");
  if ((!query_platforms.empty() && static_cast<int64_t>(query_platforms.size()) != rows) ||
      (!gallery_platforms.empty() && static_cast<int64_t>(gallery_platforms.size()) != cols))
    throw ConfigError("distance matrix platform lists do not match its shape");
  for (double v : values)
    if (!std::isfinite(v)) throw ConfigError("distance matrix contains a non-finite value");
}

std::vector<int64_t> rank_gallery(std::span<const double> row) {
  std::vector<int64_t> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return row[a] < row[b]; });
  return order;
}

std::optional<double> average_precision(std::span<const double> row, const std::vector<bool>& relevant) {
  if (relevant.size() != row.size())
    throw ConfigError(fmt::format("{} relevance flags for {} gallery items", relevant.size(), row.size()));
  const auto order = rank_gallery(row);
  // Extended accumulation so short hand-checkable lists round correctly.
  long double hits = 0, acc = 0;
  for (size_t r = 0; r < order.size(); ++r) {
    if (!relevant[static_cast<size_t>(order[r])]) continue;
    hits += 1;
    acc += hits / static_cast<long double>(r + 1);
  }
  if (hits == 0) return std::nullopt;
  return static_cast<double>(acc / hits);
}

RetrievalSummary evaluate_matrix(const DistanceMatrix& m, const std::vector<int>& ranks) {
  m.validate();
  RetrievalSummary s;
  std::map<int, int> within;
  for (int k : ranks) within[k] = 0;
  double ap_sum = 0;
  std::vector<bool> rel(static_cast<size_t>(m.cols));
  for (int64_t q = 0; q < m.rows; ++q) {
    for (int64_t g = 0; g < m.cols; ++g)
      rel[static_cast<size_t>(g)] = m.gallery_ids[static_cast<size_t>(g)] == m.query_ids[static_cast<size_t>(q)];
    auto row = m.row(q);
    auto ap = average_precision(row, rel);
    if (!ap) {
      ++s.skipped;
      continue;
    }
    ++s.evaluated;
    ap_sum += *ap;
    const auto order = rank_gallery(row);
    int64_t first = 0;
    while (!rel[static_cast<size_t>(order[static_cast<size_t>(first)])]) ++first;
    for (int k : ranks)
      if (first < k) ++within[k];
  }
  s.mean_ap = s.evaluated ? ap_sum / s.evaluated : 0.0;
  for (int k : ranks) s.cmc[k] = s.evaluated ? static_cast<double>(within[k]) / s.evaluated : 0.0;
  return s;
}

std::map<int, double> cmc_curve(const DistanceMatrix& m, const std::vector<int>& ranks) {
  return evaluate_matrix(m, ranks).cmc;
}

DistanceMatrix build_distance_matrix(const std::vector<FeatureVector>& query, const std::vector<FeatureVector>& gallery,
                                     const DatasetSplit& query_split, const DatasetSplit& gallery_split) {
  if (query.size() != query_split.records.size() || gallery.size() != gallery_split.records.size())
    throw ConfigError("embedding count differs from record count");
  DistanceMatrix m;
  m.rows = static_cast<int64_t>(query.size());
  m.cols = static_cast<int64_t>(gallery.size());
  m.values.resize(static_cast<size_t>(m.rows * m.cols));
  for (int64_t q = 0; q < m.rows; ++q)
    for (int64_t g = 0; g < m.cols; ++g)
      m.values[static_cast<size_t>(q * m.cols + g)] =
          pairwise_distance(query[static_cast<size_t>(q)], gallery[static_cast<size_t>(g)]);
  for (const auto& r : query_split.records) {
    m.query_ids.push_back(r.person_id);
    m.query_platforms.push_back(r.platform);
  }
  for (const auto& r : gallery_split.records) {
    m.gallery_ids.push_back(r.person_id);
    m.gallery_platforms.push_back(r.platform);
  }
  return m;
}

ProtocolResult run_protocol(const Embedder& embed, const ProtocolSplit& split, const ProtocolSpec& spec,
                            const std::vector<int>& ranks) {
  spec.validate();
  if (split.query.records.empty() || split.gallery.records.empty())
    throw ConfigError(fmt::format("protocol {} has an empty query or gallery", direction_tag(spec.direction())));
  for (const auto& r : split.query.records)
    if (r.platform != spec.query_platform)
      throw ConfigError(fmt::format("query record {} is not on platform {}", record_stem(r.person_id, r.platform, r.sequence),
                                    platform_name(spec.query_platform)));
  for (const auto& r : split.gallery.records)
    if (r.platform != spec.gallery_platform)
      throw ConfigError(fmt::format("gallery record {} is not on platform {}", record_stem(r.person_id, r.platform, r.sequence),
                                    platform_name(spec.gallery_platform)));
  auto pointers = [](const DatasetSplit& s) {
    std::vector<const Image*> out;
    for (const auto& r : s.records) out.push_back(&r.image);
    return out;
  };
  const auto fq = embed(pointers(split.query));
  const auto fg = embed(pointers(split.gallery));
  const auto m = build_distance_matrix(fq, fg, split.query, split.gallery);
  const auto s = evaluate_matrix(m, ranks);
  ProtocolResult r;
  r.direction = spec.direction();
  r.mean_ap = s.mean_ap;
  r.cmc = s.cmc;
  r.query_count = static_cast<int>(m.rows);
  r.gallery_count = static_cast<int>(m.cols);
  r.skipped_queries = s.skipped;
  return r;
}

}  // namespace v2e
