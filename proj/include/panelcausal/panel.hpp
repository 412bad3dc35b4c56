#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace panelcausal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

enum class VariableRole { outcome, regressor, key, flag, moderator };
enum class Transform { none, log1p };

struct VariableDef {
  std::string name;
  VariableRole role = VariableRole::regressor;
  Transform transform = Transform::none;
  std::string units;
};

/// A numeric column with an explicit per-cell observation mask. Missing
/// cells hold NaN in `values`, but `observed` is the source of truth.
struct Column {
  Vector values;
  Mask observed;

  Column() = default;
  explicit Column(Index n) : values(Vector::Constant(n, std::nan(""))), observed(Mask::Constant(n, false)) {}
  /// Fully observed column.
  explicit Column(Vector v);

  Index size() const { return values.size(); }
  bool has(Index i) const { return observed[i]; }
  void set(Index i, double v) {
    values[i] = v;
    observed[i] = true;
  }
  void clear(Index i) {
    values[i] = std::nan("");
    observed[i] = false;
  }
  Index missing_count() const { return size() - observed.count(); }
  bool complete() const { return observed.all(); }
};

/// Integer codes for a categorical key (or an interaction of keys).
/// Levels are numbered in sorted order of their label.
struct Factor {
  std::vector<int> codes;
  int levels = 0;
};

/// Firm-year panel. Keys and columns are shared immutable buffers, so copies
/// and derived datasets are cheap; every transformation returns a new value.
class PanelDataset {
 public:
  PanelDataset() = default;
  PanelDataset(std::vector<std::string> firm, std::vector<int> year, std::vector<std::string> industry,
               std::vector<std::string> province);

  Index rows() const { return keys_ ? static_cast<Index>(keys_->year.size()) : 0; }

  const std::vector<std::string>& firms() const { return keys_->firm; }
  const std::vector<int>& years() const { return keys_->year; }
  const std::vector<std::string>& industries() const { return keys_->industry; }
  const std::vector<std::string>& provinces() const { return keys_->province; }

  bool has_column(std::string_view name) const;
  const Column& column(std::string_view name) const;
  const std::vector<std::string>& column_names() const { return order_; }
  const VariableDef* definition(std::string_view name) const;

  /// Copy with `name` added or replaced.
  PanelDataset with_column(const std::string& name, Column col, std::optional<VariableDef> def = {}) const;
  PanelDataset without_column(const std::string& name) const;
  /// Copy restricted to `rows`, in the given order.
  PanelDataset select(std::span<const Index> rows) const;
  PanelDataset filter(const Mask& keep) const;

  /// Key names: "firm", "year", "industry", "province". A list of several
  /// keys yields the interaction factor (e.g. {"industry", "year"}).
  Factor factor(std::span<const std::string> keys) const;
  Factor factor(std::string_view key) const;

  /// Row index of (firm, year) or -1.
  Index find(const std::string& firm, int year) const;

  /// Sorted distinct firm ids (numeric-aware ordering).
  std::vector<std::string> distinct_firms() const;

 private:
  struct Keys {
    std::vector<std::string> firm;
    std::vector<int> year;
    std::vector<std::string> industry;
    std::vector<std::string> province;
    std::map<std::pair<std::string, int>, Index> lookup;
  };
  std::shared_ptr<const Keys> keys_;
  std::map<std::string, std::shared_ptr<const Column>, std::less<>> columns_;
  std::map<std::string, VariableDef, std::less<>> defs_;
  std::vector<std::string> order_;
};

/// Ordering used whenever firms must be ranked deterministically: integers
/// compare numerically, everything else lexicographically.
bool firm_id_less(const std::string& a, const std::string& b);

struct ScreeningConfig {
  std::vector<std::string> drop_sectors;
  std::vector<std::string> drop_flags;
  std::vector<std::string> required_columns;
  double winsor_p = 0.01;
  std::vector<std::string> winsorize_columns;
  std::vector<std::string> imputable_columns;

  void validate(const PanelDataset& data) const;
};

struct ImputationReport {
  std::map<std::string, Index> imputed;
  /// Cells left missing because their industry-year group had no donor.
  std::map<std::string, Index> unfilled;
};

struct ScreeningReport {
  Index input_rows = 0;
  Index dropped_sector = 0;
  Index dropped_flag = 0;
  Index dropped_missing = 0;
  Index output_rows = 0;
  ImputationReport imputation;
  std::map<std::string, Index> winsorized;

  nlohmann::json to_json() const;
};

PanelDataset load_panel(const std::filesystem::path& path, std::span<const VariableDef> schema = {});
void write_panel(const PanelDataset& data, const std::filesystem::path& path);

/// Sector, flag and required-column drops in that order. Survivors keep
/// their relative order.
PanelDataset screen(const PanelDataset& data, const ScreeningConfig& cfg, ScreeningReport* report = nullptr);

/// Linear-interpolation empirical quantile (type 7) of the observed cells.
double empirical_quantile(std::vector<double> values, double q);

/// Clamp bounds for winsorizing at fraction p: the k-th smallest and k-th
/// largest observation with k = ceil(n p). Order-statistic bounds make the
/// operation idempotent.
std::pair<double, double> winsor_bounds(std::vector<double> values, double p);

PanelDataset winsorize(const PanelDataset& data, std::span<const std::string> columns, double p,
                       std::map<std::string, Index>* clamped = nullptr);

PanelDataset impute_group_mean(const PanelDataset& data, std::span<const std::string> columns,
                               ImputationReport* report = nullptr);

/// Full cleaning sequence: screen, impute, winsorize.
PanelDataset clean(const PanelDataset& data, const ScreeningConfig& cfg, ScreeningReport* report = nullptr);

/// Value at (firm, year + k); missing where that row is absent.
Column lead_lag(const PanelDataset& data, std::string_view column, int k);

/// One row per firm holding the mean of observed values of `columns` over
/// `years` (all years when empty). Keys of the first matching row are kept.
PanelDataset collapse_firm_means(const PanelDataset& data, std::span<const std::string> columns,
                                 std::span<const int> years = {});

/// Rows whose `columns` are all observed.
Mask complete_cases(const PanelDataset& data, std::span<const std::string> columns);

}  // namespace panelcausal
