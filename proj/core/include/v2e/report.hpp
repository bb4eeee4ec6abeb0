#pragma once

// Retrieval tables (one row per model tag, deltas against the first row)
// and the per-attribute impact bar plot.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "v2e/attributes.hpp"
#include "v2e/dataset.hpp"
#include "v2e/types.hpp"

namespace v2e {

class V2EModel;
struct AblationRow;

struct ReportRow {
  std::string tag;
  std::vector<ProtocolResult> results;
};

// Mean share of the rank-1 match distance carried by one attribute.
struct AttributeImpact {
  std::string attribute;
  double share = 0;
};

struct ReportFiles {
  std::string text_path, json_path, csv_path;
  std::optional<std::string> plot_path;
  std::vector<std::string> notices;
};

std::vector<ReportRow> report_rows(const std::vector<AblationRow>& ablation);

// Percent values with "(+x.xx)" deltas against rows.front() when more than
// one row is given.
std::string format_table(const std::vector<ReportRow>& rows, int rank = 1);
nlohmann::json report_json(const std::vector<ReportRow>& rows, const std::vector<AttributeImpact>& impacts);
std::string report_csv(const std::vector<ReportRow>& rows);

// Writes report.txt, results.json, results.csv and, when impacts are
// present, attribute_impact.png. Creates out_dir.
ReportFiles emit_report(const std::vector<ReportRow>& rows, const std::vector<AttributeImpact>& impacts,
                        const std::string& out_dir);

// Averages each attribute's share of d over every query and its rank-1
// gallery match. Empty when the model has no attribute head.
std::vector<AttributeImpact> rank1_attribute_impact(const V2EModel& model, const AttributeSchema& schema,
                                                    const ProtocolSplit& split, int chunk = 64);

// Inverse of report_json for the table part.
std::vector<ReportRow> rows_from_json(const nlohmann::json& j);
std::vector<AttributeImpact> impacts_from_json(const nlohmann::json& j);

}  // namespace v2e
