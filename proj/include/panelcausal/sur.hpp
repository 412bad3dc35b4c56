#pragma once

#include "panelcausal/ols.hpp"

#include <string>
#include <vector>

namespace panelcausal {

struct SurEquation {
  std::string outcome;
  std::vector<std::string> regressors;
};

enum class SurVce { conventional, robust, cluster };

std::string to_string(SurVce v);
SurVce sur_vce_from_string(const std::string& s);

/// Equation system plus, after sur_fit, its estimates.
struct SurSystem {
  std::vector<SurEquation> equations;
  /// Z-score each outcome on the common sample before demeaning.
  bool standardize_outcomes = false;
  /// Absorbed equation by equation before stacking.
  FixedEffectSpec fe = FixedEffectSpec::firm();
  /// Iterate FGLS until coefficients settle; one step otherwise.
  bool iterate = false;
  int max_iterations = 100;
  double tolerance = 1e-10;
  SurVce vce = SurVce::robust;
  /// Panel key for SurVce::cluster.
  std::string cluster = "firm";

  // Filled by sur_fit.
  Matrix sigma_hat;
  /// Per-equation coefficients, in regressor order.
  std::vector<Vector> coefficients;
  /// Covariance of the stacked coefficient vector.
  Matrix vcov;
  /// Residuals, one column per equation, on the common sample.
  Matrix residuals;
  std::vector<Index> rows;
  Index n_obs = 0;
  /// Degrees of freedom absorbed by the fixed effects.
  Index absorbed_dof = 0;
  int iterations = 0;

  void validate() const;
  Index n_coefficients() const;
  /// Position of (equation, regressor) in the stacked vector.
  Index index_of(std::size_t equation, const std::string& regressor) const;
  double coef(std::size_t equation, const std::string& regressor) const;
  double se(std::size_t equation, const std::string& regressor) const;
  Vector stacked_coefficients() const;
  /// Pairwise correlations implied by sigma_hat.
  Matrix residual_correlation() const;

  nlohmann::json spec_json() const;
  static SurSystem from_json(const nlohmann::json& j);
};

/// The four-outcome system (Cost, Flow, Word, Patent) on the DID term and
/// `controls`, standardized outcomes, firm effects.
SurSystem default_sur_system(const std::vector<std::string>& controls);

/// Stage 1 equation-wise least squares, Sigma = E'E / n, then feasible GLS
/// on the stacked system. Throws EstimationError when Sigma is singular.
SurSystem sur_fit(const PanelDataset& data, SurSystem system, int threads = 1);

struct IndependenceTest {
  double statistic = 0;
  int df = 0;
  double p = 1;
};

/// n * sum_{i<j} r_ij^2 against chi-square with m(m-1)/2 df. Correlations
/// come from uncentred cross-products, as for regression residuals.
IndependenceTest breusch_pagan_independence(const Eigen::Ref<const Matrix>& residuals);
IndependenceTest breusch_pagan_independence(const Eigen::Ref<const Matrix>& sigma, Index n);

struct CrossEquationTest {
  std::string label;
  WaldTest wald;
  /// min(1, p * tests) when a Bonferroni family size is given.
  double p_adjusted = 1;
};

CrossEquationTest cross_equation_wald(const SurSystem& system, const Eigen::Ref<const Matrix>& R,
                                      const Eigen::Ref<const Vector>& r, int bonferroni_family = 1,
                                      std::string label = "");

/// Individual zero tests of `term` in each equation (Bonferroni over the
/// equations), the joint zero test, and equality of sign-adjusted
/// coefficients: signs[g] * b_g equal across equations.
struct SurTests {
  std::vector<CrossEquationTest> individual;
  CrossEquationTest joint;
  CrossEquationTest signed_equality;
  IndependenceTest independence;
};

SurTests sur_tests(const SurSystem& system, const std::string& term, const std::vector<double>& signs);

nlohmann::json sur_report(const SurSystem& system, const SurTests& tests);

}  // namespace panelcausal
