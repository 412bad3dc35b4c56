#pragma once

#include "panelcausal/ols.hpp"
#include "panelcausal/stats.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace panelcausal {

/// Sorted keys, no whitespace, numbers with 6 significant digits (%.6g),
/// integers verbatim, non-finite numbers as null.
std::string canonical_json(const nlohmann::json& j);

/// 64-bit FNV-1a, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

struct DescriptiveRow {
  std::string variable;
  stats::Summary summary;
};

std::vector<DescriptiveRow> descriptive_table(const PanelDataset& data, const std::vector<std::string>& columns);

/// Pairwise-complete Pearson correlations with two-sided t-test p-values.
struct CorrelationTable {
  std::vector<std::string> variables;
  Matrix r, p;
  Eigen::MatrixXi n;
};

CorrelationTable correlation_table(const PanelDataset& data, const std::vector<std::string>& columns);

/// A rectangular table rendered to CSV (one file) and markdown.
struct Table {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const;
  std::string markdown() const;
};

/// %.4f, or "" for non-finite values.
std::string fixed4(double v);

Table descriptive_to_table(const std::vector<DescriptiveRow>& rows);
/// Lower triangle with stars on each coefficient.
Table correlation_to_table(const CorrelationTable& c);
/// Estimate with stars and the SE in parentheses, one row per regressor,
/// then N, clusters and adjusted R squared.
Table coefficient_table(const std::string& title, const RegressionResult& fit,
                        const std::vector<std::string>& names = {});

nlohmann::json descriptive_to_json(const std::vector<DescriptiveRow>& rows);
nlohmann::json correlation_to_json(const CorrelationTable& c);

struct ReportBundle {
  /// Stage name -> result. Serialized canonically as one document.
  nlohmann::json json = nlohmann::json::object();
  /// File stem -> table. Each becomes <stem>.csv and a markdown section.
  std::map<std::string, Table> tables;
  /// Stems in the order added; report.md follows it.
  std::vector<std::string> table_order;
  /// Extra CSV files (plot data) by file name.
  std::map<std::string, std::string> files;

  void add_table(const std::string& stem, Table table);
};

struct ReportFormats {
  bool json = true, csv = true, markdown = true;
};

/// Writes report.json, one CSV per table plus the extra files, and
/// report.md under `dir`. Returns the written paths in order.
std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, const std::filesystem::path& dir,
                                               ReportFormats formats = {});

}  // namespace panelcausal
