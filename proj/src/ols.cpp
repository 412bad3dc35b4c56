#include "panelcausal/ols.hpp"

#include "panelcausal/error.hpp"
#include "panelcausal/stats.hpp"

#include <algorithm>
#include <cmath>

namespace panelcausal {

bool RegressionResult::has(std::string_view name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

Index RegressionResult::index_of(std::string_view name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DataError("coefficient '" + std::string(name) + "' not in model");
  return static_cast<Index>(it - names.begin());
}

double RegressionResult::coef(std::string_view name) const { return coefficients[index_of(name)]; }
double RegressionResult::se(std::string_view name) const {
  const auto k = index_of(name);
  return std::sqrt(vcov(k, k));
}
double RegressionResult::t(std::string_view name) const { return coef(name) / se(name); }
double RegressionResult::p(std::string_view name) const { return stats::t_two_sided_p(t(name), df_resid); }

std::pair<double, double> RegressionResult::ci(std::string_view name, double level) const {
  const double q = stats::t_quantile(0.5 + level / 2.0, df_resid);
  const double b = coef(name), s = se(name);
  return {b - q * s, b + q * s};
}

nlohmann::json RegressionResult::to_json() const {
  nlohmann::json coefs = nlohmann::json::array();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const double b = coefficients[static_cast<Index>(k)];
    const double s = std::sqrt(vcov(static_cast<Index>(k), static_cast<Index>(k)));
    const double tv = b / s;
    const double pv = stats::t_two_sided_p(tv, df_resid);
    coefs.push_back({{"name", names[k]}, {"estimate", b}, {"se", s}, {"t", tv}, {"p", pv}, {"stars", stats::stars(pv)}});
  }
  return {{"coefficients", coefs},
          {"dropped", dropped},
          {"fit",
           {{"n_obs", n_obs},
            {"n_clusters", n_clusters},
            {"r2", r2},
            {"adj_r2", adj_r2},
            {"within_r2", within_r2},
            {"df_resid", df_resid}}},
          {"fixed_effects",
           {{"dimensions", absorbed_dims.dimensions},
            {"absorbed_dof", absorbed_dof},
            {"dropped_singletons", dropped_singletons}}},
          {"warnings", warnings}};
}

std::vector<Index> independent_columns(const Eigen::Ref<const Matrix>& X, double tol) {
  std::vector<Index> kept;
  Matrix Q(X.rows(), 0);
  for (Index j = 0; j < X.cols(); ++j) {
    const double norm = X.col(j).norm();
    if (norm == 0.0) continue;
    Vector q = X.col(j) / norm;
    for (int pass = 0; pass < 2 && Q.cols() > 0; ++pass) q -= Q * (Q.transpose() * q);
    const double rn = q.norm();
    if (rn < tol) continue;
    Q.conservativeResize(Eigen::NoChange, Q.cols() + 1);
    Q.col(Q.cols() - 1) = q / rn;
    kept.push_back(j);
  }
  return kept;
}

RegressionResult ols_cluster(const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Matrix>& X,
                             const std::vector<std::string>& names, std::span<const Factor> fe,
                             const FixedEffectSpec& spec, const Factor* cluster, const Vector* weights) {
  const Index n = y.size();
  if (X.rows() != n) throw DataError("regressor rows do not match outcome length");
  if (static_cast<Index>(names.size()) != X.cols()) throw DataError("regressor names do not match columns");
  if (cluster && static_cast<Index>(cluster->codes.size()) != n) throw DataError("cluster factor length mismatch");
  if (weights) {
    if (weights->size() != n) throw DataError("weight vector length mismatch");
    if ((weights->array() <= 0).any() || !weights->allFinite())
      throw DataError("regression weights must be positive and finite");
  }

  Matrix stacked(n, X.cols() + 1);
  stacked.col(0) = y;
  stacked.rightCols(X.cols()) = X;
  Absorbed abs = demean_absorb(stacked, fe, spec, weights);

  RegressionResult res;
  res.absorbed_dims = spec;
  res.rows = abs.rows;
  res.dropped_singletons = abs.dropped_singletons;
  res.absorbed_dof = abs.absorbed_dof;
  const Index m = abs.data.rows();
  res.n_obs = m;

  Vector w = Vector::Ones(m);
  if (weights)
    for (Index i = 0; i < m; ++i) w[i] = (*weights)[abs.rows[i]];
  const Vector sw = w.cwiseSqrt();

  const Vector yd = abs.data.col(0);
  const double y_within = (sw.array() * yd.array()).matrix().squaredNorm();
  {
    Vector yo(m);
    for (Index i = 0; i < m; ++i) yo[i] = y[abs.rows[i]];
    const double scale = std::max(1.0, yo.cwiseAbs().maxCoeff());
    if (m == 0 || y_within <= 1e-24 * scale * scale * static_cast<double>(m))
      throw EstimationError("outcome has no variation after absorbing fixed effects");
  }

  Factor cl;
  if (cluster) {
    cl = subset_factor(*cluster, abs.rows);
  } else {
    cl.codes.resize(m);
    for (Index i = 0; i < m; ++i) cl.codes[i] = static_cast<int>(i);
    cl.levels = static_cast<int>(m);
  }
  res.n_clusters = cl.levels;
  if (cl.levels < 2) throw EstimationError("cluster-robust covariance needs at least 2 clusters");

  Matrix Xd = abs.data.rightCols(X.cols());
  // Columns the fixed effects absorb entirely leave only iteration noise.
  for (Index j = 0; j < X.cols(); ++j) {
    double raw = 0.0;
    for (Index i = 0; i < m; ++i) raw += X(abs.rows[i], j) * X(abs.rows[i], j);
    if (Xd.col(j).norm() <= 1e-7 * std::sqrt(raw)) Xd.col(j).setZero();
  }
  const Matrix Xw = sw.asDiagonal() * Xd;
  const auto keep = independent_columns(Xw);
  for (Index j = 0, k = 0; j < X.cols(); ++j) {
    if (k < static_cast<Index>(keep.size()) && keep[k] == j) {
      res.names.push_back(names[j]);
      ++k;
    } else {
      res.dropped.push_back(names[j]);
      res.warnings.push_back("regressor '" + names[j] + "' is collinear and was dropped");
    }
  }
  const Index k = static_cast<Index>(keep.size());
  Matrix Xk(m, k), Xkw(m, k);
  for (Index j = 0; j < k; ++j) {
    Xk.col(j) = Xd.col(keep[j]);
    Xkw.col(j) = Xw.col(keep[j]);
  }

  Vector u = yd;
  Matrix bread = Matrix::Zero(k, k);
  if (k > 0) {
    Eigen::HouseholderQR<Matrix> qr(Xkw);
    res.coefficients = qr.solve((sw.array() * yd.array()).matrix());
    const Matrix R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    const Matrix Rinv = R.triangularView<Eigen::Upper>().solve(Matrix::Identity(k, k));
    bread = Rinv * Rinv.transpose();
    u = yd - Xk * res.coefficients;
  } else {
    res.coefficients.resize(0);
  }
  res.residuals = u;

  Matrix scores = Matrix::Zero(cl.levels, k);
  for (Index i = 0; i < m; ++i) scores.row(cl.codes[i]) += (w[i] * u[i]) * Xk.row(i);
  const Matrix meat = scores.transpose() * scores;

  // Dimensions nested within clusters do not count toward the small-sample
  // correction.
  std::vector<Factor> nested;
  for (const auto& f : abs.factors)
    if (nested_within(f, cl)) nested.push_back(f);
  const Index k_fe = abs.absorbed_dof - (nested.empty() ? 0 : absorbed_degrees_of_freedom(nested));
  const double N = static_cast<double>(m);
  const double G = static_cast<double>(cl.levels);
  const double K = static_cast<double>(k + k_fe);
  if (N - K <= 0) throw EstimationError("no residual degrees of freedom");
  const double q = (G / (G - 1.0)) * ((N - 1.0) / (N - K));
  res.vcov = q * bread * meat * bread;
  res.vcov = 0.5 * (res.vcov + res.vcov.transpose()).eval();
  res.df_resid = G - 1.0;

  const double ssr = (w.array() * u.array().square()).sum();
  Vector yo(m);
  for (Index i = 0; i < m; ++i) yo[i] = y[abs.rows[i]];
  const double ybar = (w.array() * yo.array()).sum() / w.sum();
  const double tss = (w.array() * (yo.array() - ybar).square()).sum();
  res.r2 = tss > 0 ? std::clamp(1.0 - ssr / tss, 0.0, 1.0) : 1.0;
  res.within_r2 = std::clamp(1.0 - ssr / y_within, 0.0, 1.0);
  const double dof_all = N - static_cast<double>(k + abs.absorbed_dof);
  res.adj_r2 = dof_all > 0 ? 1.0 - (1.0 - res.r2) * (N - 1.0) / dof_all : std::nan("");
  return res;
}

RegressionResult ols_cluster(const PanelDataset& data, const std::string& outcome,
                             const std::vector<std::string>& regressors, const FixedEffectSpec& spec,
                             const std::string& cluster, const Vector* weights) {
  std::vector<std::string> cols = regressors;
  cols.insert(cols.begin(), outcome);
  Mask ok = complete_cases(data, cols);
  if (weights) {
    if (weights->size() != data.rows()) throw DataError("weight vector length does not match data rows");
    ok = ok && (weights->array() > 0);
  }
  std::vector<Index> rows;
  for (Index i = 0; i < data.rows(); ++i)
    if (ok[i]) rows.push_back(i);
  const Index n = static_cast<Index>(rows.size());
  if (n == 0) throw DataError("no complete observations for '" + outcome + "'");

  Vector y(n);
  Matrix X(n, static_cast<Index>(regressors.size()));
  Vector w(n);
  const Column& yc = data.column(outcome);
  std::vector<const Column*> xc;
  for (const auto& r : regressors) xc.push_back(&data.column(r));
  for (Index i = 0; i < n; ++i) {
    y[i] = yc.values[rows[i]];
    for (std::size_t j = 0; j < xc.size(); ++j) X(i, static_cast<Index>(j)) = xc[j]->values[rows[i]];
    if (weights) w[i] = (*weights)[rows[i]];
  }
  std::vector<Factor> fe;
  for (const auto& f : resolve_factors(data, spec)) fe.push_back(subset_factor(f, rows));
  std::optional<Factor> cl;
  if (!cluster.empty()) cl = subset_factor(data.factor(cluster), rows);

  RegressionResult res = ols_cluster(y, X, regressors, fe, spec, cl ? &*cl : nullptr, weights ? &w : nullptr);
  for (auto& r : res.rows) r = rows[r];
  return res;
}

WaldTest wald_test(const Eigen::Ref<const Vector>& b, const Eigen::Ref<const Matrix>& V,
                   const Eigen::Ref<const Matrix>& R, const Eigen::Ref<const Vector>& r) {
  if (R.cols() != b.size() || R.rows() != r.size() || V.rows() != b.size() || V.cols() != b.size())
    throw DataError("restriction dimensions do not match the coefficient vector");
  const Vector d = R * b - r;
  const Matrix M = R * V * R.transpose();
  Eigen::FullPivLU<Matrix> lu(M);
  if (!lu.isInvertible()) throw EstimationError("restriction covariance R V R' is singular");
  WaldTest t;
  t.df = static_cast<int>(R.rows());
  t.statistic = d.dot(lu.solve(d));
  t.p = stats::chi2_sf(t.statistic, t.df);
  return t;
}

}  // namespace panelcausal
