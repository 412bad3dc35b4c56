#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace panelcausal::stats {

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_quantile(double p);

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
/// `df` <= 0 selects the standard normal.
double t_two_sided_p(double t, double df);
double t_quantile(double p, double df);
/// Upper tail of the chi-square distribution.
double chi2_sf(double x, double df);

/// "***" for p < 0.01, "**" for p < 0.05, "*" for p < 0.1.
std::string stars(double p);

/// Average ranks (1-based), ties share the mean rank.
Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& x);
double pearson(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y);
double spearman(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y);

struct Summary {
  long n = 0;
  double mean = 0, sd = 0, min = 0, median = 0, max = 0;
  /// Moment ratios m3/m2^1.5 and m4/m2^2 (kurtosis is not excess).
  double skewness = 0, kurtosis = 0;
};
Summary summarize(std::span<const double> x);

/// Unbiased sample variance.
template <typename Derived>
double sample_variance(const Eigen::DenseBase<Derived>& x) {
  const double m = x.mean();
  return (x.derived().array() - m).square().sum() / static_cast<double>(x.size() - 1);
}

}  // namespace panelcausal::stats
