#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "support/check.hpp"
#include "v2e/errors.hpp"
#include "v2e/report.hpp"

using namespace v2e;

namespace {

ProtocolResult result(CameraPlatform q, CameraPlatform g, double map, double r1) {
  ProtocolResult r;
  r.direction = {q, g};
  r.mean_ap = map;
  r.cmc = {{1, r1}, {5, std::min(1.0, r1 + 0.1)}, {10, 1.0}};
  r.query_count = 12;
  r.gallery_count = 30;
  return r;
}

std::vector<ReportRow> sample_rows() {
  using P = CameraPlatform;
  return {{"ToyConv", {result(P::Aerial, P::CCTV, 0.5, 0.6), result(P::Wearable, P::Aerial, 0.4, 0.45)}},
          {"ToyConv+EVA+EP", {result(P::Aerial, P::CCTV, 0.5525, 0.6), result(P::Wearable, P::Aerial, 0.39, 0.5)}}};
}

}  // namespace

TEST(Report, TableShowsDeltasAgainstFirstRow) {
  const auto text = format_table(sample_rows());
  EXPECT_NE(text.find("A->C mAP"), std::string::npos);
  EXPECT_NE(text.find("W->A R1"), std::string::npos);
  EXPECT_NE(text.find("55.25 (+5.25)"), std::string::npos);
  EXPECT_NE(text.find("39.00 (-1.00)"), std::string::npos);
  EXPECT_NE(text.find("60.00 (+0.00)"), std::string::npos);
  // The first row carries no delta, and neither does a lone row.
  std::istringstream lines(text);
  std::string header, rule, first;
  std::getline(lines, header);
  std::getline(lines, rule);
  std::getline(lines, first);
  EXPECT_EQ(first.find('('), std::string::npos);
  EXPECT_EQ(format_table({sample_rows().front()}).find('('), std::string::npos);
  // Directions appear in the standard order regardless of input order.
  EXPECT_LT(text.find("A->C"), text.find("W->A"));
}

TEST(Report, MissingDirectionShowsDash) {
  auto rows = sample_rows();
  rows[1].results.pop_back();
  const auto text = format_table(rows);
  EXPECT_NE(text.find(" -"), std::string::npos);
}

TEST(Report, JsonRoundTripAndCsv) {
  const auto rows = sample_rows();
  const std::vector<AttributeImpact> impacts{{"gender=male", 0.2}, {"age=young", 0.1}};
  const auto j = report_json(rows, impacts);
  const auto back = rows_from_json(j);
  ASSERT_EQ(back.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].tag, rows[i].tag);
    EXPECT_EQ(back[i].results, rows[i].results);
  }
  const auto imp = impacts_from_json(j);
  ASSERT_EQ(imp.size(), 2u);
  EXPECT_EQ(imp[0].attribute, "gender=male");
  EXPECT_EQ(imp[1].share, 0.1);
  EXPECT_THROW(rows_from_json(nlohmann::json{{"order", {"x"}}}), ConfigError);

  const auto csv = report_csv(rows);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "model,direction,mAP,rank1,rank5,rank10,delta_mAP");
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 4);
  EXPECT_NE(csv.find("ToyConv+EVA+EP,A->C,0.552500,0.600000,0.700000,1.000000,0.052500"), std::string::npos);
}

TEST(Report, EmitWritesFilesAndSkipsPlotWithoutImpacts) {
  check::TempDir dir("report");
  auto files = emit_report(sample_rows(), {}, dir / "out");
  EXPECT_TRUE(std::filesystem::exists(files.text_path));
  EXPECT_TRUE(std::filesystem::exists(files.json_path));
  EXPECT_TRUE(std::filesystem::exists(files.csv_path));
  EXPECT_FALSE(files.plot_path.has_value());
  ASSERT_EQ(files.notices.size(), 1u);
  EXPECT_NE(files.notices[0].find("skipped"), std::string::npos);

  auto with = emit_report(sample_rows(), {{"gender=male", 0.3}, {"beard=yes", 0.05}}, dir / "out2");
  ASSERT_TRUE(with.plot_path.has_value());
  EXPECT_GT(std::filesystem::file_size(*with.plot_path), 0u);
  EXPECT_TRUE(with.notices.empty());
  std::ifstream txt(with.text_path);
  std::stringstream ss;
  ss << txt.rdbuf();
  EXPECT_NE(ss.str().find("gender=male"), std::string::npos);

  EXPECT_THROW(emit_report({}, {}, dir / "none"), ConfigError);
}
