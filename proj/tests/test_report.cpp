#include <doctest.h>

#include "panelcausal/error.hpp"
#include "panelcausal/report.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace panelcausal;
using nlohmann::json;

namespace {

PanelDataset small_panel() {
  PanelDataset d({"1", "1", "2", "2", "3"}, {2020, 2021, 2020, 2021, 2020}, {"I", "I", "I", "I", "I"},
                 {"P", "P", "P", "P", "P"});
  Column x(Eigen::VectorXd((Eigen::VectorXd(5) << 1, 2, 3, 4, 5).finished()));
  Column y(Eigen::VectorXd((Eigen::VectorXd(5) << 2, 1, 4, 3, 6).finished()));
  y.clear(4);
  return d.with_column("x", x).with_column("y", y);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("canonical JSON sorts keys and fixes number formatting") {
  json j = {{"b", 1.0 / 3.0}, {"a", {{"z", -0.0}, {"y", 42}}}, {"c", std::nan("")}, {"d", {1e-7, 123456789.0, true}}};
  CHECK(canonical_json(j) == R"({"a":{"y":42,"z":0},"b":0.333333,"c":null,"d":[1e-07,1.23457e+08,true]})");
  CHECK(canonical_json(json::parse(canonical_json(j))) == canonical_json(j));
}

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("stars thresholds") {
  CHECK(stats::stars(0.004) == "***");
  CHECK(stats::stars(0.03) == "**");
  CHECK(stats::stars(0.07) == "*");
  CHECK(stats::stars(0.2).empty());
}

TEST_CASE("descriptive and correlation tables on a hand panel") {
  const auto d = small_panel();
  const auto rows = descriptive_table(d, {"x", "y"});
  CHECK(rows[0].summary.n == 5);
  CHECK(rows[0].summary.mean == doctest::Approx(3.0));
  CHECK(rows[1].summary.n == 4);
  CHECK(rows[1].summary.mean == doctest::Approx(2.5));
  CHECK_THROWS_AS(descriptive_table(d, {"nope"}), DataError);

  const auto c = correlation_table(d, {"x", "y"});
  // Pairwise complete: x = 1..4, y = 2,1,4,3 gives r = 0.6.
  CHECK(c.n(0, 1) == 4);
  CHECK(c.r(0, 1) == doctest::Approx(0.6));
  const double t = 0.6 * std::sqrt(2.0 / (1 - 0.36));
  CHECK(c.p(0, 1) == doctest::Approx(stats::t_two_sided_p(t, 2)));
  const auto tab = correlation_to_table(c);
  CHECK(tab.rows[1][1] == "0.6000");
  CHECK(tab.rows[0][2].empty());
}

TEST_CASE("tables render to CSV and markdown; emit_report writes files") {
  Table t{"T", {"a", "b"}, {{"1", "x,y"}, {"2", "q\"r"}}};
  CHECK(t.csv() == "a,b\n1,\"x,y\"\n2,\"q\"\"r\"\n");
  CHECK(t.markdown().find("| a | b |") != std::string::npos);
  CHECK(fixed4(std::nan("")).empty());
  CHECK(fixed4(-0.0) == "0.0000");

  ReportBundle b;
  b.json = {{"z", 1}, {"a", 0.5}};
  b.add_table("t", t);
  b.files["extra.csv"] = "k\n1\n";
  const auto dir = std::filesystem::temp_directory_path() / "panelcausal_report_test";
  std::filesystem::remove_all(dir);
  const auto written = emit_report(b, dir);
  CHECK(written.size() == 4);
  CHECK(slurp(dir / "report.json") == "{\"a\":0.5,\"z\":1}\n");
  CHECK(slurp(dir / "t.csv") == t.csv());
  CHECK(slurp(dir / "extra.csv") == "k\n1\n");
  CHECK(slurp(dir / "report.md").find("*** p < 0.01") != std::string::npos);
  std::filesystem::remove_all(dir);
}
