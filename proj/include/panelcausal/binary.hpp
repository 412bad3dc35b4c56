#pragma once

#include "panelcausal/panel.hpp"

#include <string>
#include <vector>

namespace panelcausal {

enum class Link { probit, logit };

std::string to_string(Link link);
Link link_from_string(const std::string& s);

/// Maximum-likelihood fit of a probit or logit model.
struct MleResult {
  std::vector<std::string> names;
  Vector coefficients;
  Matrix vcov;
  double log_likelihood = 0;
  double log_likelihood_null = 0;
  /// McFadden: 1 - logL / logL_null.
  double pseudo_r2 = 0;
  Link link = Link::probit;
  bool converged = false;
  bool intercept = true;
  int iterations = 0;
  double gradient_norm = 0;
  Index n_obs = 0;
  Index n_clusters = 0;
  /// Input row of each estimation observation.
  std::vector<Index> rows;

  Index index_of(std::string_view name) const;
  double coef(std::string_view name) const { return coefficients[index_of(name)]; }
  double se(std::string_view name) const;
  /// Normal-reference two-sided p-value.
  double p(std::string_view name) const;
  /// Linear index x'b for the regressor matrix used in the fit.
  Vector linear_index(const Eigen::Ref<const Matrix>& X) const;

  nlohmann::json to_json() const;
};

struct MleOptions {
  bool intercept = true;
  double gradient_tolerance = 1e-8;
  double step_tolerance = 1e-10;
  int max_iterations = 200;
};

/// Newton-Raphson with step halving. `X` excludes the constant; with
/// options.intercept a "_cons" coefficient is appended. The covariance is
/// the cluster-robust sandwich (G/(G-1) scaling) when `cluster` is given,
/// the inverse observed information otherwise. Throws SeparationError when
/// the outcome is perfectly predicted and EstimationError on
/// non-convergence.
MleResult binary_mle(const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Matrix>& X,
                     const std::vector<std::string>& names, Link link, const Factor* cluster = nullptr,
                     const MleOptions& options = {});

/// Dataset-level convenience using complete cases; `cluster` is a key name
/// or empty.
MleResult binary_mle(const PanelDataset& data, const std::string& outcome, const std::vector<std::string>& regressors,
                     Link link, const std::string& cluster = "firm", const MleOptions& options = {});

struct MarginalEffect {
  std::string name;
  double effect = 0;
  double se = 0;
  double z = 0;
  double p = 0;
  /// Discrete 0 -> 1 change rather than a derivative.
  bool discrete = false;
};

/// Average marginal effects over the rows of `X` (the fit's regressors,
/// without the constant). Regressors taking only the values 0 and 1 get
/// the average discrete change; others the average density-weighted
/// coefficient. Standard errors by the delta method.
std::vector<MarginalEffect> marginal_effects(const MleResult& fit, const Eigen::Ref<const Matrix>& X);

double link_cdf(Link link, double eta);
double link_pdf(Link link, double eta);

/// phi(z) / Phi(z), accurate far into the lower tail.
double inverse_mills(double z);

}  // namespace panelcausal
