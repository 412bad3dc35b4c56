#include "panelcausal/sur.hpp"

#include "panelcausal/causal.hpp"
#include "panelcausal/error.hpp"
#include "panelcausal/parallel.hpp"
#include "panelcausal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace panelcausal {

namespace {

// Cross-equation score sums: s_i = sum_g X_gi' (Sigma^-1 e_i)_g, grouped by
// cluster code.
Matrix score_meat(const std::vector<Matrix>& X, const Matrix& E, const Matrix& sigma_inv, const std::vector<int>& group,
                  int groups, Index k_total) {
  Matrix S = Matrix::Zero(groups, k_total);
  const Matrix weighted = E * sigma_inv;  // row i: (Sigma^-1 e_i)'
  Index offset = 0;
  for (std::size_t g = 0; g < X.size(); ++g) {
    for (Index i = 0; i < E.rows(); ++i)
      S.row(group[static_cast<std::size_t>(i)]).segment(offset, X[g].cols()) +=
          weighted(i, static_cast<Index>(g)) * X[g].row(i);
    offset += X[g].cols();
  }
  return S.transpose() * S;
}

}  // namespace

std::string to_string(SurVce v) {
  switch (v) {
    case SurVce::conventional: return "conventional";
    case SurVce::robust: return "robust";
    case SurVce::cluster: return "cluster";
  }
  return "robust";
}

SurVce sur_vce_from_string(const std::string& s) {
  if (s == "conventional") return SurVce::conventional;
  if (s == "robust") return SurVce::robust;
  if (s == "cluster") return SurVce::cluster;
  throw ConfigError("unknown SUR vce '" + s + "' (conventional, robust, cluster)");
}

void SurSystem::validate() const {
  std::vector<std::string> errors;
  if (equations.empty()) errors.push_back("no equations");
  for (std::size_t g = 0; g < equations.size(); ++g) {
    if (equations[g].outcome.empty()) errors.push_back("equation " + std::to_string(g) + " has no outcome");
    if (equations[g].regressors.empty()) errors.push_back("equation " + std::to_string(g) + " has no regressors");
  }
  if (max_iterations < 1) errors.push_back("max_iterations must be positive");
  if (!(tolerance > 0)) errors.push_back("tolerance must be positive");
  if (vce == SurVce::cluster && cluster.empty()) errors.push_back("cluster vce needs a cluster key");
  if (!errors.empty()) {
    std::string msg = "SUR system:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ConfigError(msg);
  }
  fe.validate();
}

Index SurSystem::n_coefficients() const {
  Index k = 0;
  for (const auto& e : equations) k += static_cast<Index>(e.regressors.size());
  return k;
}

Index SurSystem::index_of(std::size_t equation, const std::string& regressor) const {
  if (equation >= equations.size()) throw DataError("SUR: no equation " + std::to_string(equation));
  Index offset = 0;
  for (std::size_t g = 0; g < equation; ++g) offset += static_cast<Index>(equations[g].regressors.size());
  const auto& regs = equations[equation].regressors;
  const auto it = std::find(regs.begin(), regs.end(), regressor);
  if (it == regs.end()) throw DataError("SUR: " + regressor + " not in equation " + equations[equation].outcome);
  return offset + (it - regs.begin());
}

double SurSystem::coef(std::size_t equation, const std::string& regressor) const {
  return stacked_coefficients()[index_of(equation, regressor)];
}

double SurSystem::se(std::size_t equation, const std::string& regressor) const {
  const Index k = index_of(equation, regressor);
  return std::sqrt(vcov(k, k));
}

Vector SurSystem::stacked_coefficients() const {
  Vector b(n_coefficients());
  Index offset = 0;
  for (const auto& c : coefficients) {
    b.segment(offset, c.size()) = c;
    offset += c.size();
  }
  return b;
}

Matrix SurSystem::residual_correlation() const {
  const Vector d = sigma_hat.diagonal().cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * sigma_hat * d.asDiagonal();
}

nlohmann::json SurSystem::spec_json() const {
  nlohmann::json eqs = nlohmann::json::array();
  for (const auto& e : equations) eqs.push_back({{"outcome", e.outcome}, {"regressors", e.regressors}});
  return {{"equations", eqs},
          {"standardize_outcomes", standardize_outcomes},
          {"fe", fe.to_json()},
          {"iterate", iterate},
          {"max_iterations", max_iterations},
          {"tolerance", tolerance},
          {"vce", to_string(vce)},
          {"cluster", cluster}};
}

SurSystem SurSystem::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("sur spec must be an object");
  SurSystem s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "equations") {
        for (const auto& e : v) {
          for (const auto& [ek, ev] : e.items())
            if (ek != "outcome" && ek != "regressors") throw ConfigError("unknown sur equation key '" + ek + "'");
          s.equations.push_back({e.at("outcome").get<std::string>(), e.at("regressors").get<std::vector<std::string>>()});
        }
      } else if (key == "standardize_outcomes") s.standardize_outcomes = v.get<bool>();
      else if (key == "fe") s.fe = FixedEffectSpec::from_json(v);
      else if (key == "iterate") s.iterate = v.get<bool>();
      else if (key == "max_iterations") s.max_iterations = v.get<int>();
      else if (key == "tolerance") s.tolerance = v.get<double>();
      else if (key == "vce") s.vce = sur_vce_from_string(v.get<std::string>());
      else if (key == "cluster") s.cluster = v.get<std::string>();
      else throw ConfigError("unknown sur key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sur spec: ") + e.what());
  }
  return s;
}

SurSystem default_sur_system(const std::vector<std::string>& controls) {
  SurSystem s;
  std::vector<std::string> regs = {kDidTerm};
  regs.insert(regs.end(), controls.begin(), controls.end());
  for (const char* y : {"Cost", "Flow", "Word", "Patent"}) s.equations.push_back({y, regs});
  s.standardize_outcomes = true;
  return s;
}

SurSystem sur_fit(const PanelDataset& data, SurSystem system, int threads) {
  system.validate();
  const auto m = static_cast<Index>(system.equations.size());

  // Union of variables in first-seen order; outcomes first.
  std::vector<std::string> vars;
  auto add = [&](const std::string& v) {
    if (std::find(vars.begin(), vars.end(), v) == vars.end()) vars.push_back(v);
  };
  for (const auto& e : system.equations) add(e.outcome);
  for (const auto& e : system.equations)
    for (const auto& r : e.regressors) add(r);
  std::vector<std::string> missing;
  for (const auto& v : vars)
    if (!data.has_column(v)) missing.push_back(v);
  if (!missing.empty()) {
    std::string msg = "SUR: missing columns";
    for (const auto& v : missing) msg += " " + v;
    throw DataError(msg);
  }
  const Mask ok = complete_cases(data, vars);
  std::vector<Index> rows;
  for (Index i = 0; i < data.rows(); ++i)
    if (ok[i]) rows.push_back(i);
  if (rows.empty()) throw DataError("SUR: no complete observations");

  Matrix raw(static_cast<Index>(rows.size()), static_cast<Index>(vars.size()));
  for (std::size_t j = 0; j < vars.size(); ++j) {
    const auto& c = data.column(vars[j]);
    for (std::size_t r = 0; r < rows.size(); ++r) raw(static_cast<Index>(r), static_cast<Index>(j)) = c.values[rows[r]];
  }
  if (system.standardize_outcomes)
    for (Index g = 0; g < m; ++g) {
      auto col = raw.col(g);
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(col.size() - 1));
      if (!(sd > 0)) throw DataError("SUR: outcome " + vars[static_cast<std::size_t>(g)] + " has zero variance");
      col = (col.array() - mean) / sd;
    }

  std::vector<Factor> fe;
  for (const auto& f : resolve_factors(data, system.fe)) fe.push_back(subset_factor(f, rows));
  const Absorbed abs = demean_absorb(raw, fe, system.fe);
  const Index n = abs.data.rows();
  if (n < 2) throw DataError("SUR: fewer than two observations after absorbing fixed effects");

  auto var_col = [&](const std::string& v) {
    return abs.data.col(std::find(vars.begin(), vars.end(), v) - vars.begin());
  };
  std::vector<Matrix> X(static_cast<std::size_t>(m));
  Matrix Y(n, m);
  Index k_total = 0;
  for (Index g = 0; g < m; ++g) {
    const auto& eq = system.equations[static_cast<std::size_t>(g)];
    Y.col(g) = var_col(eq.outcome);
    auto& Xg = X[static_cast<std::size_t>(g)];
    Xg.resize(n, static_cast<Index>(eq.regressors.size()));
    for (std::size_t j = 0; j < eq.regressors.size(); ++j) Xg.col(static_cast<Index>(j)) = var_col(eq.regressors[j]);
    if (static_cast<std::size_t>(independent_columns(Xg).size()) != eq.regressors.size())
      throw EstimationError("SUR: regressors of equation " + eq.outcome + " are collinear after demeaning");
    k_total += Xg.cols();
  }
  if (n <= k_total / m) throw DataError("SUR: too few observations for the regressors");

  // Stage 1: equation-wise least squares.
  std::vector<Vector> beta(static_cast<std::size_t>(m));
  parallel_for(static_cast<std::size_t>(m), resolve_threads(threads), [&](std::size_t g) {
    beta[g] = X[g].colPivHouseholderQr().solve(Y.col(static_cast<Index>(g)));
  });
  auto residuals = [&](const std::vector<Vector>& b) {
    Matrix E(n, m);
    for (Index g = 0; g < m; ++g) E.col(g) = Y.col(g) - X[static_cast<std::size_t>(g)] * b[static_cast<std::size_t>(g)];
    return E;
  };

  Matrix A, sigma_inv;
  auto fgls = [&](const Matrix& sigma) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * std::max(hi, 1e-300)))
      throw EstimationError("SUR: residual covariance is singular (eigenvalues " + std::to_string(lo) + " to " +
                            std::to_string(hi) + "); drop redundant equations");
    sigma_inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    A = Matrix::Zero(k_total, k_total);
    Vector rhs = Vector::Zero(k_total);
    Index og = 0;
    for (Index g = 0; g < m; ++g) {
      const auto& Xg = X[static_cast<std::size_t>(g)];
      Index oh = 0;
      for (Index h = 0; h < m; ++h) {
        const auto& Xh = X[static_cast<std::size_t>(h)];
        A.block(og, oh, Xg.cols(), Xh.cols()) = sigma_inv(g, h) * (Xg.transpose() * Xh);
        rhs.segment(og, Xg.cols()) += sigma_inv(g, h) * (Xg.transpose() * Y.col(h));
        oh += Xh.cols();
      }
      og += Xg.cols();
    }
    const Vector b = A.ldlt().solve(rhs);
    std::vector<Vector> out(static_cast<std::size_t>(m));
    Index o = 0;
    for (Index g = 0; g < m; ++g) {
      out[static_cast<std::size_t>(g)] = b.segment(o, X[static_cast<std::size_t>(g)].cols());
      o += X[static_cast<std::size_t>(g)].cols();
    }
    return out;
  };

  Matrix E = residuals(beta);
  system.sigma_hat = E.transpose() * E / static_cast<double>(n);
  beta = fgls(system.sigma_hat);
  system.iterations = 1;
  if (system.iterate) {
    for (; system.iterations < system.max_iterations; ++system.iterations) {
      E = residuals(beta);
      const Matrix sigma = E.transpose() * E / static_cast<double>(n);
      const auto next = fgls(sigma);
      double change = 0;
      for (Index g = 0; g < m; ++g)
        change = std::max(change, (next[static_cast<std::size_t>(g)] - beta[static_cast<std::size_t>(g)]).cwiseAbs().maxCoeff());
      beta = next;
      system.sigma_hat = sigma;
      if (change < system.tolerance) break;
    }
    if (system.iterations >= system.max_iterations) throw EstimationError("SUR: iterated FGLS did not converge");
  }

  E = residuals(beta);
  const Matrix bread = A.inverse();
  switch (system.vce) {
    case SurVce::conventional: system.vcov = bread; break;
    case SurVce::robust: {
      std::vector<int> each(static_cast<std::size_t>(n));
      std::iota(each.begin(), each.end(), 0);
      // HC1-style factor counting absorbed levels and the mean equation size.
      const double dof = static_cast<double>(n - abs.absorbed_dof) - static_cast<double>(k_total) / static_cast<double>(m);
      if (!(dof > 0)) throw DataError("SUR: no residual degrees of freedom for the robust covariance");
      const double c = static_cast<double>(n) / dof;
      system.vcov = c * bread * score_meat(X, E, sigma_inv, each, static_cast<int>(n), k_total) * bread;
      break;
    }
    case SurVce::cluster: {
      const Factor cl = subset_factor(subset_factor(data.factor(system.cluster), rows), abs.rows);
      if (cl.levels < 2) throw EstimationError("SUR: cluster-robust covariance needs at least 2 clusters");
      const double G = cl.levels;
      system.vcov = G / (G - 1.0) * bread * score_meat(X, E, sigma_inv, cl.codes, cl.levels, k_total) * bread;
      break;
    }
  }
  system.vcov = (system.vcov + system.vcov.transpose()) / 2.0;
  system.coefficients = beta;
  system.residuals = E;
  system.rows.clear();
  for (Index k : abs.rows) system.rows.push_back(rows[static_cast<std::size_t>(k)]);
  system.n_obs = n;
  system.absorbed_dof = abs.absorbed_dof;
  return system;
}

IndependenceTest breusch_pagan_independence(const Eigen::Ref<const Matrix>& residuals) {
  return breusch_pagan_independence(residuals.transpose() * residuals / static_cast<double>(residuals.rows()),
                                    residuals.rows());
}

IndependenceTest breusch_pagan_independence(const Eigen::Ref<const Matrix>& sigma, Index n) {
  const Index m = sigma.rows();
  if (m < 2 || sigma.cols() != m) throw DataError("Breusch-Pagan test needs at least two equations");
  IndependenceTest t;
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < i; ++j) {
      const double r = sigma(i, j) / std::sqrt(sigma(i, i) * sigma(j, j));
      t.statistic += r * r;
    }
  t.statistic *= static_cast<double>(n);
  t.df = static_cast<int>(m * (m - 1) / 2);
  t.p = stats::chi2_sf(t.statistic, t.df);
  return t;
}

CrossEquationTest cross_equation_wald(const SurSystem& system, const Eigen::Ref<const Matrix>& R,
                                      const Eigen::Ref<const Vector>& r, int bonferroni_family, std::string label) {
  if (R.cols() != system.n_coefficients() || R.rows() != r.size())
    throw DataError("Wald restriction does not match the coefficient dimension");
  if (bonferroni_family < 1) throw ConfigError("Bonferroni family size must be positive");
  CrossEquationTest t;
  t.label = std::move(label);
  t.wald = wald_test(system.stacked_coefficients(), system.vcov, R, r);
  t.p_adjusted = std::min(1.0, t.wald.p * bonferroni_family);
  return t;
}

SurTests sur_tests(const SurSystem& system, const std::string& term, const std::vector<double>& signs) {
  const auto m = system.equations.size();
  if (signs.size() != m) throw ConfigError("need one sign per equation");
  const Index k = system.n_coefficients();
  SurTests out;
  Matrix joint = Matrix::Zero(static_cast<Index>(m), k);
  for (std::size_t g = 0; g < m; ++g) {
    Matrix R = Matrix::Zero(1, k);
    R(0, system.index_of(g, term)) = 1;
    joint.row(static_cast<Index>(g)) = R.row(0);
    out.individual.push_back(
        cross_equation_wald(system, R, Vector::Zero(1), static_cast<int>(m), system.equations[g].outcome + ": " + term + " = 0"));
  }
  out.joint = cross_equation_wald(system, joint, Vector::Zero(static_cast<Index>(m)), 1, "joint: all " + term + " = 0");
  if (m >= 2) {
    Matrix R = Matrix::Zero(static_cast<Index>(m) - 1, k);
    std::string label = "signed equality:";
    for (std::size_t g = 0; g + 1 < m; ++g) {
      R(static_cast<Index>(g), system.index_of(g, term)) = signs[g];
      R(static_cast<Index>(g), system.index_of(g + 1, term)) = -signs[g + 1];
    }
    for (std::size_t g = 0; g < m; ++g)
      label += std::string(g ? " =" : "") + (signs[g] < 0 ? " -" : " ") + system.equations[g].outcome;
    out.signed_equality = cross_equation_wald(system, R, Vector::Zero(static_cast<Index>(m) - 1), 1, label);
    // Demeaned residuals carry n - absorbed_dof independent observations.
    out.independence = breusch_pagan_independence(system.sigma_hat, system.n_obs - system.absorbed_dof);
  }
  return out;
}

nlohmann::json sur_report(const SurSystem& system, const SurTests& tests) {
  nlohmann::json eqs = nlohmann::json::array();
  for (std::size_t g = 0; g < system.equations.size(); ++g) {
    nlohmann::json coefs = nlohmann::json::object();
    for (const auto& r : system.equations[g].regressors) {
      const double b = system.coef(g, r), s = system.se(g, r);
      const double p = stats::t_two_sided_p(b / s, 0);
      coefs[r] = {{"estimate", b}, {"se", s}, {"p", p}, {"stars", stats::stars(p)}};
    }
    eqs.push_back({{"outcome", system.equations[g].outcome}, {"coefficients", coefs}});
  }
  auto test_json = [](const CrossEquationTest& t) {
    return nlohmann::json{{"label", t.label}, {"chi2", t.wald.statistic}, {"df", t.wald.df}, {"p", t.wald.p},
                          {"p_bonferroni", t.p_adjusted}};
  };
  nlohmann::json individual = nlohmann::json::array();
  for (const auto& t : tests.individual) individual.push_back(test_json(t));
  const Matrix corr = system.residual_correlation();
  nlohmann::json corr_rows = nlohmann::json::array();
  for (Index i = 0; i < corr.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < corr.cols(); ++j) row.push_back(corr(i, j));
    corr_rows.push_back(row);
  }
  return {{"spec", system.spec_json()},
          {"n_obs", system.n_obs},
          {"iterations", system.iterations},
          {"equations", eqs},
          {"residual_correlation", corr_rows},
          {"breusch_pagan", {{"chi2", tests.independence.statistic}, {"df", tests.independence.df}, {"p", tests.independence.p}}},
          {"wald", {{"individual", individual}, {"joint", test_json(tests.joint)}, {"signed_equality", test_json(tests.signed_equality)}}}};
}

}  // namespace panelcausal
