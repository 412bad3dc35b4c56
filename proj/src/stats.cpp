#include "panelcausal/stats.hpp"

#include "panelcausal/error.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <numeric>

namespace panelcausal::stats {

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<>(), p); }

double t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return std::isnan(t) ? std::nan("") : 0.0;
  if (df <= 0) return std::erfc(std::abs(t) / std::numbers::sqrt2);
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<>(df), std::abs(t)));
}

double t_quantile(double p, double df) {
  if (df <= 0) return normal_quantile(p);
  return boost::math::quantile(boost::math::students_t_distribution<>(df), p);
}

double chi2_sf(double x, double df) {
  if (std::isnan(x)) return x;
  if (x <= 0) return 1.0;
  if (!std::isfinite(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<>(df), x));
}

std::string stars(double p) {
  if (!(p == p)) return "";
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const auto n = x.size();
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
  const Eigen::ArrayXd a = x.array() - x.mean();
  const Eigen::ArrayXd b = y.array() - y.mean();
  const double den = std::sqrt((a * a).sum() * (b * b).sum());
  return den > 0 ? (a * b).sum() / den : std::nan("");
}

double spearman(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

Summary summarize(std::span<const double> x) {
  Summary s;
  s.n = static_cast<long>(x.size());
  if (x.empty()) throw DataError("summary of empty sample");
  std::vector<double> v(x.begin(), x.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double e : v) {
    const double d = e - s.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  s.sd = v.size() > 1 ? std::sqrt(m2 / (n - 1.0)) : 0.0;
  m2 /= n;
  m3 /= n;
  m4 /= n;
  s.skewness = m2 > 0 ? m3 / std::pow(m2, 1.5) : std::nan("");
  s.kurtosis = m2 > 0 ? m4 / (m2 * m2) : std::nan("");
  s.min = v.front();
  s.max = v.back();
  const auto h = v.size() / 2;
  s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  return s;
}

}  // namespace panelcausal::stats
