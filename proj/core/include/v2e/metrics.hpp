#pragma once

// Retrieval metrics and cross-platform protocol evaluation.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "v2e/dataset.hpp"
#include "v2e/types.hpp"

namespace v2e {

inline const std::vector<int> kDefaultRanks{1, 5, 10};

struct DistanceMatrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> values;  // row-major, rows = queries
  std::vector<int> query_ids, gallery_ids;
  std::vector<CameraPlatform> query_platforms, gallery_platforms;

  std::span<const double> row(int64_t q) const {
    return {values.data() + q * cols, static_cast<size_t>(cols)};
  }
  void validate() const;  // throws ConfigError
};

// Gallery indices sorted by ascending distance; ties keep gallery order.
std::vector<int64_t> rank_gallery(std::span<const double> row);

// Mean over relevant hits of precision at the hit's rank. nullopt when
// nothing is relevant.
std::optional<double> average_precision(std::span<const double> row, const std::vector<bool>& relevant);

struct RetrievalSummary {
  double mean_ap = 0;
  std::map<int, double> cmc;
  int evaluated = 0;
  int skipped = 0;  // queries without any relevant gallery item
};

// Relevance is identity equality. Queries without a match are skipped and
// counted.
RetrievalSummary evaluate_matrix(const DistanceMatrix& m, const std::vector<int>& ranks = kDefaultRanks);
std::map<int, double> cmc_curve(const DistanceMatrix& m, const std::vector<int>& ranks = kDefaultRanks);

using Embedder = std::function<std::vector<FeatureVector>(const std::vector<const Image*>&)>;

DistanceMatrix build_distance_matrix(const std::vector<FeatureVector>& query, const std::vector<FeatureVector>& gallery,
                                     const DatasetSplit& query_split, const DatasetSplit& gallery_split);

// Embeds both sides, builds the distance matrix and summarizes it.
// Throws ConfigError when a record's platform disagrees with the spec.
ProtocolResult run_protocol(const Embedder& embed, const ProtocolSplit& split, const ProtocolSpec& spec,
                            const std::vector<int>& ranks = kDefaultRanks);

}  // namespace v2e
