#pragma once

#include "panelcausal/panel.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace panelcausal {

enum class PatentMode { flow, stock, application };
enum class AssignmentMode { mean, strict, single_year };
enum class EncodingScheme { raw, standardized, median_split, terciles };
enum class StrictLabel { treated, control, excluded };

std::string to_string(PatentMode m);
std::string to_string(AssignmentMode m);
std::string to_string(EncodingScheme s);
std::string to_string(StrictLabel s);
PatentMode patent_mode_from_string(const std::string& s);
AssignmentMode assignment_mode_from_string(const std::string& s);
EncodingScheme encoding_from_string(const std::string& s);

struct WashingSpec {
  std::vector<int> pre_years;
  PatentMode patent_mode = PatentMode::flow;
  std::string word = "AI_Word";
  /// Column names per patent mode.
  std::string patent_flow = "AI_Patent";
  std::string patent_stock = "AI_Patent_Stock";
  std::string patent_application = "AI_Patent_App";
  std::vector<std::string> controls = {"Size", "Lev", "ROA", "Liquid", "Top5", "TobinQ", "ListAge"};
  int threads = 1;

  const std::string& patent_column() const;
  void validate(const PanelDataset& data) const;
};

/// Log cumulative patent stock: per firm in year order,
/// log1p(sum of expm1(flow)) over years so far. Missing flows add nothing
/// and leave that year's stock missing.
Column patent_stock_from_flow(const PanelDataset& data, const std::string& flow);

/// Cross-sectional regression of the word measure on the patent measure,
/// controls and industry fixed effects, one per pre-policy year. Returns
/// the residual for each estimation row; other rows are missing. The stock
/// column is derived from the flow column when absent.
Column decoupling_residuals(const PanelDataset& data, const WashingSpec& spec);

struct FirmAssignment {
  std::string firm;
  /// Residual by pre-policy year (observed years only).
  std::map<int, double> residuals;
  double mean = 0;
  bool treat_mean = false;
  StrictLabel treat_strict = StrictLabel::excluded;
  /// Sign of the final pre-policy year's residual; empty when that year is
  /// unobserved.
  std::optional<bool> treat_single_year;
  double intensity_raw = 0;
  /// NaN when the population has zero spread.
  double intensity_std = 0;
};

struct WashingAssignment {
  std::vector<int> pre_years;
  /// Firms with at least one pre-period residual, in firm-id order.
  std::vector<FirmAssignment> firms;
  /// Firms present in the panel without any pre-period residual.
  std::vector<std::string> excluded;

  const FirmAssignment* find(const std::string& firm) const;
  nlohmann::json summary() const;
};

/// Firm-level treatment flags in all three modes plus raw and standardized
/// intensity. A firm is strict-treated when all pre-years are observed and
/// positive, strict-control when all are observed and strictly negative.
WashingAssignment assign_treatment(const PanelDataset& data, const Column& residuals, std::span<const int> pre_years);

/// Per-firm encoding in the order of assignment.firms. Quantile schemes
/// return group numbers: 1 for mean <= 0, then 2..3 (median split) or
/// 2..4 (terciles) over the positive means by rank, ties in firm-id order.
std::vector<double> encode(const WashingAssignment& assignment, EncodingScheme scheme);

/// Broadcast a firm-level treatment flag to panel rows (missing where the
/// firm is unassigned or, in strict mode, excluded).
Column treatment_column(const PanelDataset& data, const WashingAssignment& assignment, AssignmentMode mode);
/// Broadcast an encoding to panel rows.
Column encoded_column(const PanelDataset& data, const WashingAssignment& assignment, EncodingScheme scheme);

/// One row per firm: residuals, mean, flags, intensities, quantile groups.
std::string assignment_csv(const WashingAssignment& assignment);
void write_assignment_csv(const WashingAssignment& assignment, const std::filesystem::path& path);

struct ZDifference {
  Column z_word, z_patent, z_diff;
  /// Industries with zero spread in either input; their rows are missing.
  std::vector<std::string> flagged_industries;
};

/// Standardize both measures within industry, pooling rows of `pre_years`
/// (all years when empty) for the mean and sample SD, and apply to every
/// row.
ZDifference z_difference(const PanelDataset& data, const std::string& word, const std::string& patent,
                         std::span<const int> pre_years = {});

struct PersistenceStats {
  /// Row-normalized tercile transition probabilities (low, mid, high).
  Eigen::Matrix3d transition;
  Eigen::Matrix3d counts;
  double spearman = 0;
  Index n_pairs = 0;
  /// Per-row tercile label 0..2 within its year.
  Column terciles;

  nlohmann::json to_json() const;
};

/// Per-year terciles and consecutive-year transitions of a residual column.
PersistenceStats persistence_stats(const PanelDataset& data, const Column& residuals);

}  // namespace panelcausal
