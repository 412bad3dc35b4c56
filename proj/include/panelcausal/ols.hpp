#pragma once

#include "panelcausal/fixed_effects.hpp"

#include <optional>
#include <string>
#include <vector>

namespace panelcausal {

/// Least-squares fit with absorbed fixed effects and cluster-robust (CR1)
/// covariance.
struct RegressionResult {
  std::vector<std::string> names;
  Vector coefficients;
  Matrix vcov;
  /// Regressors removed as linearly dependent on earlier ones.
  std::vector<std::string> dropped;
  /// Residuals of the absorbed model, one per estimation row.
  Vector residuals;
  /// Input row of each estimation observation.
  std::vector<Index> rows;
  Index n_obs = 0;
  Index n_clusters = 0;
  double r2 = 0, adj_r2 = 0, within_r2 = 0;
  Index dropped_singletons = 0;
  Index absorbed_dof = 0;
  /// Degrees of freedom of the reference t distribution (clusters - 1).
  double df_resid = 0;
  FixedEffectSpec absorbed_dims;
  std::vector<std::string> warnings;

  bool has(std::string_view name) const;
  Index index_of(std::string_view name) const;
  double coef(std::string_view name) const;
  double se(std::string_view name) const;
  double t(std::string_view name) const;
  double p(std::string_view name) const;
  /// Two-sided confidence interval from the t(df_resid) reference.
  std::pair<double, double> ci(std::string_view name, double level = 0.95) const;

  nlohmann::json to_json() const;
};

/// Core entry: `y` and `X` on the same rows, `fe` the factors matching
/// spec.dimensions, `cluster` the clustering factor (each row is its own
/// cluster when absent, which gives HC1). Rows with zero weight must be
/// removed by the caller.
RegressionResult ols_cluster(const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Matrix>& X,
                             const std::vector<std::string>& names, std::span<const Factor> fe,
                             const FixedEffectSpec& spec, const Factor* cluster = nullptr,
                             const Vector* weights = nullptr);

/// Dataset-level convenience: complete cases of outcome and regressors,
/// fixed effects and clusters resolved from panel keys (`cluster` is a key
/// name such as "firm"; empty means heteroskedasticity-robust).
RegressionResult ols_cluster(const PanelDataset& data, const std::string& outcome,
                             const std::vector<std::string>& regressors, const FixedEffectSpec& spec,
                             const std::string& cluster = "firm", const Vector* weights = nullptr);

/// Indices of columns that are not (numerically) linear combinations of
/// earlier columns, scanning left to right.
std::vector<Index> independent_columns(const Eigen::Ref<const Matrix>& X, double tol = 1e-9);

/// (R b - r)' (R V R')^-1 (R b - r) with its chi-square p-value.
struct WaldTest {
  double statistic = 0;
  int df = 0;
  double p = 1;
};
WaldTest wald_test(const Eigen::Ref<const Vector>& b, const Eigen::Ref<const Matrix>& V,
                   const Eigen::Ref<const Matrix>& R, const Eigen::Ref<const Vector>& r);

}  // namespace panelcausal
