#include "panelcausal/binary.hpp"

#include "panelcausal/error.hpp"
#include "panelcausal/fixed_effects.hpp"
#include "panelcausal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace panelcausal {

namespace {

double log_normal_cdf(double x) {
  if (x > -35.0) return std::log(stats::normal_cdf(x));
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

double log1p_exp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct ObsTerms {
  double loglik;
  double score;    // d loglik / d eta
  double hessian;  // d2 loglik / d eta2
};

ObsTerms terms(Link link, double y, double eta) {
  if (link == Link::logit) {
    const double p = 1.0 / (1.0 + std::exp(-eta));
    return {y * eta - log1p_exp(eta), y - p, -p * (1.0 - p)};
  }
  if (y > 0.5) {
    const double lam = inverse_mills(eta);
    return {log_normal_cdf(eta), lam, -lam * (lam + eta)};
  }
  const double lam = inverse_mills(-eta);
  return {log_normal_cdf(-eta), -lam, -lam * (lam - eta)};
}

double link_pdf_derivative(Link link, double eta) {
  if (link == Link::logit) {
    const double p = 1.0 / (1.0 + std::exp(-eta));
    return p * (1.0 - p) * (1.0 - 2.0 * p);
  }
  return -eta * stats::normal_pdf(eta);
}

}  // namespace

std::string to_string(Link link) { return link == Link::probit ? "probit" : "logit"; }

Link link_from_string(const std::string& s) {
  if (s == "probit") return Link::probit;
  if (s == "logit") return Link::logit;
  throw ConfigError("unknown link '" + s + "'");
}

double link_cdf(Link link, double eta) {
  return link == Link::probit ? stats::normal_cdf(eta) : 1.0 / (1.0 + std::exp(-eta));
}

double link_pdf(Link link, double eta) {
  if (link == Link::probit) return stats::normal_pdf(eta);
  const double p = 1.0 / (1.0 + std::exp(-eta));
  return p * (1.0 - p);
}

double inverse_mills(double z) {
  if (z > -35.0) return stats::normal_pdf(z) / stats::normal_cdf(z);
  const double z2 = z * z;
  return -z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2));
}

Index MleResult::index_of(std::string_view name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DataError("coefficient '" + std::string(name) + "' not in model");
  return static_cast<Index>(it - names.begin());
}

double MleResult::se(std::string_view name) const {
  const auto k = index_of(name);
  return std::sqrt(vcov(k, k));
}

double MleResult::p(std::string_view name) const { return stats::t_two_sided_p(coef(name) / se(name), 0); }

Vector MleResult::linear_index(const Eigen::Ref<const Matrix>& X) const {
  const Index k = X.cols();
  Vector eta = X * coefficients.head(k);
  if (intercept) eta.array() += coefficients[k];
  return eta;
}

nlohmann::json MleResult::to_json() const {
  nlohmann::json coefs = nlohmann::json::array();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto i = static_cast<Index>(k);
    const double b = coefficients[i], s = std::sqrt(vcov(i, i));
    const double pv = stats::t_two_sided_p(b / s, 0);
    coefs.push_back({{"name", names[k]}, {"estimate", b}, {"se", s}, {"z", b / s}, {"p", pv}, {"stars", stats::stars(pv)}});
  }
  return {{"link", to_string(link)},
          {"coefficients", coefs},
          {"fit",
           {{"n_obs", n_obs},
            {"n_clusters", n_clusters},
            {"log_likelihood", log_likelihood},
            {"pseudo_r2", pseudo_r2},
            {"converged", converged},
            {"iterations", iterations}}}};
}

MleResult binary_mle(const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Matrix>& X,
                     const std::vector<std::string>& names, Link link, const Factor* cluster,
                     const MleOptions& options) {
  const Index n = y.size();
  if (X.rows() != n) throw DataError("regressor rows do not match outcome length");
  if (static_cast<Index>(names.size()) != X.cols()) throw DataError("regressor names do not match columns");
  for (Index i = 0; i < n; ++i)
    if (y[i] != 0.0 && y[i] != 1.0) throw DataError("binary outcome must be 0/1");
  const double ones = y.sum();
  if (ones == 0 || ones == static_cast<double>(n))
    throw DataError("binary outcome needs both classes");

  Matrix A(n, X.cols() + (options.intercept ? 1 : 0));
  A.leftCols(X.cols()) = X;
  if (options.intercept) A.col(X.cols()).setOnes();
  const Index k = A.cols();
  {
    Eigen::ColPivHouseholderQR<Matrix> qr(A);
    if (qr.rank() < k) throw EstimationError("binary regressors are not of full column rank");
  }

  MleResult res;
  res.link = link;
  res.intercept = options.intercept;
  res.names = names;
  if (options.intercept) res.names.push_back("_cons");
  res.n_obs = n;
  res.rows.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) res.rows[static_cast<std::size_t>(i)] = i;

  auto evaluate = [&](const Vector& b, Vector* grad, Matrix* hess) {
    const Vector eta = A * b;
    double ll = 0;
    Vector s(n), h(n);
    for (Index i = 0; i < n; ++i) {
      const auto t = terms(link, y[i], eta[i]);
      ll += t.loglik;
      s[i] = t.score;
      h[i] = t.hessian;
    }
    if (grad) *grad = A.transpose() * s;
    if (hess) *hess = A.transpose() * h.asDiagonal() * A;
    return ll;
  };

  const double pbar = ones / static_cast<double>(n);
  res.log_likelihood_null = static_cast<double>(n) * (pbar * std::log(pbar) + (1 - pbar) * std::log(1 - pbar));

  Vector b = Vector::Zero(k);
  if (options.intercept)
    b[k - 1] = link == Link::probit ? stats::normal_quantile(pbar) : std::log(pbar / (1 - pbar));
  Vector g;
  Matrix H;
  double ll = evaluate(b, &g, &H);
  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    if (g.cwiseAbs().maxCoeff() < options.gradient_tolerance) {
      res.converged = true;
      break;
    }
    const Vector step = (-H).ldlt().solve(g);
    if (!step.allFinite()) throw EstimationError("singular information matrix in binary MLE");
    double scale = 1.0;
    Vector cand = b + step;
    double cand_ll = evaluate(cand, nullptr, nullptr);
    while (!(cand_ll >= ll - 1e-12 * std::abs(ll)) && scale > 1e-8) {
      scale *= 0.5;
      cand = b + scale * step;
      cand_ll = evaluate(cand, nullptr, nullptr);
    }
    const double moved = (scale * step).cwiseAbs().maxCoeff();
    b = cand;
    ll = evaluate(b, &g, &H);
    // Perfect prediction drives the likelihood to zero with growing slopes.
    const Vector eta = A * b;
    bool all_right = true;
    for (Index i = 0; i < n && all_right; ++i) all_right = (eta[i] > 0) == (y[i] > 0.5);
    if (all_right && eta.cwiseAbs().minCoeff() > 6.0)
      throw SeparationError("outcome is perfectly separated by the regressors");
    if (moved < options.step_tolerance) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }
  if (!res.converged) {
    if (ll > -1e-6 * static_cast<double>(n)) throw SeparationError("coefficients diverge: outcome (quasi-)separated");
    throw EstimationError("binary MLE did not converge");
  }
  {
    // A finite optimum cannot classify every observation correctly: if it
    // appears to, the gradient test stopped on a flattened likelihood.
    const Vector eta = A * b;
    bool all_right = true;
    for (Index i = 0; i < n && all_right; ++i) all_right = y[i] > 0.5 ? eta[i] > 1e-6 : eta[i] < -1e-6;
    if (all_right) throw SeparationError("outcome is perfectly separated by the regressors");
  }

  res.coefficients = b;
  res.log_likelihood = ll;
  res.gradient_norm = g.cwiseAbs().maxCoeff();
  res.pseudo_r2 = 1.0 - ll / res.log_likelihood_null;
  const Matrix Hinv = (-H).ldlt().solve(Matrix::Identity(k, k));
  if (cluster) {
    if (static_cast<Index>(cluster->codes.size()) != n) throw DataError("cluster factor length mismatch");
    const Vector eta = A * b;
    Matrix scores = Matrix::Zero(cluster->levels, k);
    for (Index i = 0; i < n; ++i) scores.row(cluster->codes[i]) += terms(link, y[i], eta[i]).score * A.row(i);
    const double G = static_cast<double>(cluster->levels);
    if (G < 2) throw EstimationError("cluster-robust covariance needs at least 2 clusters");
    res.n_clusters = cluster->levels;
    res.vcov = (G / (G - 1.0)) * Hinv * (scores.transpose() * scores) * Hinv;
  } else {
    res.vcov = Hinv;
  }
  res.vcov = 0.5 * (res.vcov + res.vcov.transpose()).eval();
  return res;
}

MleResult binary_mle(const PanelDataset& data, const std::string& outcome, const std::vector<std::string>& regressors,
                     Link link, const std::string& cluster, const MleOptions& options) {
  std::vector<std::string> cols = regressors;
  cols.push_back(outcome);
  const Mask ok = complete_cases(data, cols);
  std::vector<Index> rows;
  for (Index i = 0; i < data.rows(); ++i)
    if (ok[i]) rows.push_back(i);
  const Index n = static_cast<Index>(rows.size());
  Vector y(n);
  Matrix X(n, static_cast<Index>(regressors.size()));
  for (Index i = 0; i < n; ++i) {
    y[i] = data.column(outcome).values[rows[i]];
    for (std::size_t j = 0; j < regressors.size(); ++j)
      X(i, static_cast<Index>(j)) = data.column(regressors[j]).values[rows[i]];
  }
  std::optional<Factor> cl;
  if (!cluster.empty()) cl = subset_factor(data.factor(cluster), rows);
  auto res = binary_mle(y, X, regressors, link, cl ? &*cl : nullptr, options);
  res.rows = rows;
  return res;
}

std::vector<MarginalEffect> marginal_effects(const MleResult& fit, const Eigen::Ref<const Matrix>& X) {
  const Index n = X.rows();
  const Index kx = X.cols();
  const Index k = fit.coefficients.size();
  if (kx + (fit.intercept ? 1 : 0) != k) throw DataError("marginal effects: regressor count does not match fit");
  if (!fit.converged) throw EstimationError("marginal effects need a converged fit");
  Matrix A(n, k);
  A.leftCols(kx) = X;
  if (fit.intercept) A.col(kx).setOnes();
  const Vector& b = fit.coefficients;
  const Vector eta = A * b;

  std::vector<MarginalEffect> out;
  for (Index j = 0; j < kx; ++j) {
    MarginalEffect me;
    me.name = fit.names[static_cast<std::size_t>(j)];
    const auto col = X.col(j).array();
    me.discrete = ((col == 0.0) || (col == 1.0)).all() && (col == 0.0).any() && (col == 1.0).any();
    Vector grad = Vector::Zero(k);
    if (me.discrete) {
      Matrix A1 = A, A0 = A;
      A1.col(j).setOnes();
      A0.col(j).setZero();
      const Vector e1 = A1 * b, e0 = A0 * b;
      for (Index i = 0; i < n; ++i) {
        me.effect += link_cdf(fit.link, e1[i]) - link_cdf(fit.link, e0[i]);
        grad += link_pdf(fit.link, e1[i]) * A1.row(i).transpose() - link_pdf(fit.link, e0[i]) * A0.row(i).transpose();
      }
    } else {
      for (Index i = 0; i < n; ++i) {
        const double f = link_pdf(fit.link, eta[i]);
        me.effect += f * b[j];
        grad += link_pdf_derivative(fit.link, eta[i]) * b[j] * A.row(i).transpose();
        grad[j] += f;
      }
    }
    me.effect /= static_cast<double>(n);
    grad /= static_cast<double>(n);
    me.se = std::sqrt(grad.dot(fit.vcov * grad));
    me.z = me.effect / me.se;
    me.p = stats::t_two_sided_p(me.z, 0);
    out.push_back(me);
  }
  return out;
}

}  // namespace panelcausal
