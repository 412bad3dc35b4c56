// Acceptance suite: one PASS/FAIL line per criterion; exits non-zero when
// any criterion fails.

#include "oracles.hpp"
#include "panelcausal/binary.hpp"
#include "panelcausal/causal.hpp"
#include "panelcausal/error.hpp"
#include "panelcausal/fixed_effects.hpp"
#include "panelcausal/ols.hpp"
#include "panelcausal/parallel.hpp"
#include "panelcausal/pipeline.hpp"
#include "panelcausal/stats.hpp"
#include "panelcausal/sur.hpp"
#include "panelcausal/synth.hpp"
#include "panelcausal/washing.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace panelcausal;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double phi_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double phi_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

/// 99% normal-approximation band for a binomial rejection rate.
std::pair<double, double> size_band(double nominal, int reps) {
  const double h = 2.576 * std::sqrt(nominal * (1 - nominal) / reps);
  return {nominal - h, nominal + h};
}

DgpConfig dgp(Preset p, int firms, std::uint64_t seed) {
  auto c = DgpConfig::for_preset(p);
  c.n_firms = firms;
  c.seed = seed;
  return c;
}

DidSpec did_spec() {
  DidSpec d;
  d.controls = control_names();
  return d;
}

PanelDataset cross_section(const Eigen::MatrixXd& X, const std::vector<int>& treat,
                           const std::vector<std::string>& names) {
  std::vector<std::string> f, ind, prov;
  std::vector<int> y;
  for (Index i = 0; i < X.rows(); ++i) {
    f.push_back(std::to_string(i + 1));
    y.push_back(2020);
    ind.push_back("I");
    prov.push_back("P");
  }
  PanelDataset d(f, y, ind, prov);
  for (std::size_t j = 0; j < names.size(); ++j)
    d = d.with_column(names[j], Column(Vector(X.col(static_cast<Index>(j)))));
  Vector t(X.rows());
  for (Index i = 0; i < X.rows(); ++i) t[i] = treat[static_cast<std::size_t>(i)];
  return d.with_column("Treat", Column(t));
}

// 1. Absorbed slopes against explicit dummy least squares.
Outcome hdfe_vs_dummies() {
  Outcome o;
  std::mt19937_64 rng(101);
  double worst = 0;
  int fits = 0;
  for (int rep = 0; rep < 50; ++rep) {
    auto c = dgp(Preset::did_parallel, 40 + static_cast<int>(rng() % 161), 1000 + rep);
    c.first_year = 2015;
    c.last_year = 2020;
    c.policy_year = 2018;
    auto spec = did_spec();
    spec.policy_year = c.policy_year;
    auto data = add_did_terms(generate_panel(c).data, spec);
    // Unbalance the panel.
    Mask keep(data.rows());
    std::bernoulli_distribution drop(0.1);
    for (Index i = 0; i < data.rows(); ++i) keep[i] = !drop(rng);
    data = data.filter(keep);
    const std::vector<std::string> regs = {kDidTerm, "Size", "Lev", "ROA"};
    for (const auto& fe : {FixedEffectSpec::two_way(), FixedEffectSpec::four_way()}) {
      const auto fit = ols_cluster(data, "Debt_FC", regs, fe, "firm");
      std::vector<std::string> firm, year, iy, py;
      for (Index i = 0; i < data.rows(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        firm.push_back(data.firms()[k]);
        year.push_back(std::to_string(data.years()[k]));
        iy.push_back(data.industries()[k] + "|" + year.back());
        py.push_back(data.provinces()[k] + "|" + year.back());
      }
      std::vector<Eigen::MatrixXd> blocks = {oracle::dummies(firm), oracle::dummies(year)};
      if (fe.dimensions.size() == 4) {
        blocks.push_back(oracle::dummies(iy));
        blocks.push_back(oracle::dummies(py));
      }
      Eigen::MatrixXd X(data.rows(), static_cast<Index>(regs.size()));
      for (std::size_t j = 0; j < regs.size(); ++j) X.col(static_cast<Index>(j)) = data.column(regs[j]).values;
      const Eigen::VectorXd b = oracle::dummy_ols_slopes(X, oracle::hcat(blocks), data.column("Debt_FC").values);
      for (std::size_t j = 0; j < regs.size(); ++j)
        worst = std::max(worst, std::abs(fit.coef(regs[j]) - b[static_cast<Index>(j)]));
      ++fits;
    }
  }
  o.require(worst < 1e-6, std::to_string(fits) + " fits, max |slope diff| = " + fmt("%.2e", worst));
  return o;
}

// 2. Mean estimate and CI coverage under the parallel-trends preset.
Outcome planted_did() {
  Outcome o;
  const int reps = 1000;
  double sum = 0;
  int covered = 0;
  for (int r = 0; r < reps; ++r) {
    const auto sim = generate_panel(dgp(Preset::did_parallel, 1000, 20000 + r));
    const auto fit = did_estimate(sim.data, did_spec());
    sum += fit.coef(kDidTerm);
    const auto [lo, hi] = fit.ci(kDidTerm);
    covered += lo <= 0.125 && 0.125 <= hi;
  }
  const double mean = sum / reps, cov = 100.0 * covered / reps;
  o.require(std::abs(mean - 0.125) <= 0.01, std::to_string(reps) + " reps, mean = " + fmt("%.4f", mean));
  o.require(cov >= 93 && cov <= 97, "coverage = " + fmt("%.1f", cov) + "%");
  return o;
}

// 3. Pre-period nulls and post-period step recovery.
Outcome event_nulls() {
  Outcome o;
  const int reps = 200;
  int cells = 0, quiet = 0;
  std::map<int, double> post;
  for (int r = 0; r < reps; ++r) {
    const auto sim = generate_panel(dgp(Preset::did_parallel, 500, 30000 + r));
    const auto es = event_study(sim.data, did_spec());
    for (int tau = -4; tau <= -2; ++tau) {
      ++cells;
      quiet += es.at(tau).p >= 0.05;
    }
    for (int tau = 0; tau <= 3; ++tau) post[tau] += es.at(tau).estimate / reps;
  }
  const double share = 100.0 * quiet / cells;
  o.require(share >= 90, "pre-period insignificant in " + fmt("%.1f", share) + "% of " + std::to_string(cells) + " cells");
  double worst = 0;
  for (const auto& [tau, m] : post) worst = std::max(worst, std::abs(m - 0.125));
  o.require(worst <= 0.02, "max |mean post coef - 0.125| = " + fmt("%.4f", worst));
  return o;
}

// 4. Placebo p-values uniform under the null; tiny under the planted effect.
Outcome placebo_calibration() {
  Outcome o;
  const int reps = 100, draws = 1000;
  std::vector<double> pvals;
  for (int r = 0; r < reps; ++r) {
    auto c = dgp(Preset::did_parallel, 200, 40000 + r);
    c.beta_treat = 0.0;
    const auto sim = generate_panel(c);
    const auto pl = placebo_permutation(sim.data, did_spec(), draws, substream_seed(7, static_cast<std::uint64_t>(r)), 1);
    pvals.push_back(pl.p);
  }
  const double ks = oracle::ks_uniform_p(pvals);
  o.require(ks > 0.01, "null KS p = " + fmt("%.3f", ks) + " over " + std::to_string(reps) + " reps");
  auto c = dgp(Preset::did_parallel, 2000, 41000);
  c.noise_sd = 0.6;
  const auto pl = placebo_permutation(generate_panel(c).data, did_spec(), draws, 99, 1);
  o.require(pl.p <= 0.001, "planted: actual = " + fmt("%.4f", pl.actual) + ", p = " + fmt("%.4f", pl.p));
  return o;
}

/// Frank-Wolfe on min ||A'w - t||^2 over the simplex. The duality gap gives
/// a lower bound on the squared distance from t to the hull of A's rows.
double hull_distance_lower_bound(const Eigen::MatrixXd& A, const Eigen::VectorXd& t) {
  const Eigen::Index n = A.rows();
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n);
  double bound = 0;
  for (int it = 0; it < 20000; ++it) {
    const Eigen::VectorXd r = A.transpose() * w - t;
    const Eigen::VectorXd grad = 2.0 * A * r;
    Eigen::Index s;
    grad.minCoeff(&s);
    const double f = r.squaredNorm();
    const double gap = grad.dot(w) - grad[s];
    bound = std::max(bound, f - gap);
    if (bound > 0 || f < 1e-20) break;
    const Eigen::VectorXd d = A.row(s).transpose() - A.transpose() * w;
    const double step = std::clamp(-r.dot(d) / std::max(d.squaredNorm(), 1e-300), 0.0, 1.0);
    w *= 1.0 - step;
    w[s] += step;
  }
  return bound;
}

// 5. Entropy balancing hits the moments and the hand instance.
Outcome eb_exactness() {
  Outcome o;
  std::mt19937_64 rng(505);
  std::normal_distribution<double> z;
  double worst = 0;
  int instances = 0, failed = 0, infeasible = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const int p = 1 + static_cast<int>(rng() % 10);
    const int nc = 50 + static_cast<int>(rng() % 251);
    const int nt = 20 + static_cast<int>(rng() % 81);
    Eigen::MatrixXd X(nc + nt, p);
    std::vector<int> treat;
    for (int i = 0; i < nc + nt; ++i) {
      const bool t = i >= nc;
      treat.push_back(t);
      for (int j = 0; j < p; ++j) X(i, j) = z(rng) + (t ? 0.3 : 0.0) + (j % 3 == 0 ? 0.2 * X(i, 0) : 0.0);
    }
    std::vector<std::string> names;
    for (int j = 0; j < p; ++j) names.push_back("x" + std::to_string(j));
    const auto d = cross_section(X, treat, names);
    ++instances;
    try {
      const auto w = entropy_balance(d, "Treat", names);
      const Eigen::VectorXd wc = w.weights.head(nc);
      const Eigen::RowVectorXd target = X.bottomRows(nt).colwise().mean();
      const Eigen::RowVectorXd got = (wc.transpose() * X.topRows(nc)) / wc.sum();
      worst = std::max(worst, (got - target).cwiseAbs().maxCoeff());
    } catch (const EstimationError&) {
      // Counts against the solver unless the target is certifiably outside
      // the control hull.
      if (hull_distance_lower_bound(X.topRows(nc), X.bottomRows(nt).colwise().mean().transpose()) > 0)
        ++infeasible;
      else
        ++failed;
    }
  }
  o.require(failed == 0 && worst < 1e-8, std::to_string(instances - infeasible) + " feasible instances (" +
                                             std::to_string(infeasible) + " certified infeasible), " +
                                             std::to_string(failed) + " unsolved, max gap = " + fmt("%.3e", worst));
  Eigen::MatrixXd H(3, 1);
  H << 0, 2, 1;
  const auto w = entropy_balance(cross_section(H, {0, 0, 1}, {"x"}), "Treat", {"x"});
  o.require(w.weights[0] == 0.5 && w.weights[1] == 0.5, "hand weights = (" + fmt("%.17g", w.weights[0]) + ", " +
                                                             fmt("%.17g", w.weights[1]) + ")");
  return o;
}

// 6. Post-match bias and agreement with exhaustive search.
Outcome psm_behavior() {
  Outcome o;
  int rows = 0, within = 0;
  for (int r = 0; r < 50; ++r) {
    // Large cross-sections so matching error dominates sampling noise.
    auto c = dgp(Preset::did_parallel, 20000, 60000 + r);
    c.first_year = 2019;
    c.last_year = 2021;
    c.imbalance = 0.5;
    const auto sim = generate_panel(c);
    Mask keep(sim.data.rows());
    for (Index i = 0; i < sim.data.rows(); ++i) keep[i] = sim.data.years()[static_cast<std::size_t>(i)] == 2020;
    const auto w = psm_match(sim.data.filter(keep), "Treat", control_names(), 2, 0.01);
    for (const auto& b : w.balance) {
      ++rows;
      within += std::abs(b.bias_after) <= 5.0;
    }
  }
  const double share = 100.0 * within / rows;
  o.require(share >= 90, "|bias after| <= 5% for " + fmt("%.1f", share) + "% of " + std::to_string(rows) + " covariate rows");

  std::mt19937_64 rng(606);
  std::uniform_int_distribution<int> grid(0, 80), idd(1, 40);
  int agree = 0, total = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const int nt = 1 + static_cast<int>(rng() % 20);
    const int nc = 10 + static_cast<int>(rng() % 50);
    std::vector<double> treated(static_cast<std::size_t>(nt)), control(static_cast<std::size_t>(nc));
    std::vector<std::string> ids;
    for (auto& s : treated) s = grid(rng) / 80.0;
    for (auto& s : control) {
      s = grid(rng) / 80.0;
      ids.push_back(std::to_string(idd(rng)));
    }
    const int k = 1 + rep % 3;
    const double caliper = std::array<double, 3>{0.0, 0.02, 0.2}[static_cast<std::size_t>(rep % 3)];
    const auto got = match_on_scores(treated, control, ids, k, caliper);
    bool same = true;
    for (std::size_t t = 0; t < treated.size(); ++t) {
      std::vector<std::tuple<double, int, std::size_t>> all;
      for (std::size_t cix = 0; cix < control.size(); ++cix) {
        const double dist = std::abs(control[cix] - treated[t]);
        if (dist <= caliper) all.emplace_back(dist, std::stoi(ids[cix]), cix);
      }
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> want;
      for (std::size_t m = 0; m < std::min<std::size_t>(static_cast<std::size_t>(k), all.size()); ++m)
        want.push_back(std::get<2>(all[m]));
      same = same && got[t] == want;
    }
    agree += same;
    ++total;
  }
  o.require(agree == total, std::to_string(agree) + "/" + std::to_string(total) + " instances match exhaustive search");
  return o;
}

// 7. Heckman against naive OLS on the selected sample.
Outcome heckman_correction() {
  Outcome o;
  const int reps = 200;
  int better = 0, quiet = 0;
  double bias_h = 0, bias_o = 0;
  for (int r = 0; r < reps; ++r) {
    for (double rho : {0.8, 0.0}) {
      auto c = dgp(Preset::selection, 2000, 70000 + r);
      c.selection_rho = rho;
      const auto sim = generate_panel(c);
      const auto h = heckman_two_stage(sim.data, HeckmanSpec{}, did_spec());
      if (rho > 0) {
        const auto ols = did_estimate(sim.data, did_spec());
        const double bh = h.second_stage.coef(kDidTerm) - c.beta_treat, bo = ols.coef(kDidTerm) - c.beta_treat;
        better += std::abs(bh) < std::abs(bo);
        bias_h += bh / reps;
        bias_o += bo / reps;
      } else {
        quiet += h.imr_p >= 0.05;
      }
    }
  }
  o.require(better >= 0.95 * reps, "rho=0.8: Heckman closer in " + std::to_string(better) + "/" + std::to_string(reps) +
                                       " (mean bias " + fmt("%.4f", bias_h) + " vs OLS " + fmt("%.4f", bias_o) + ")");
  o.require(quiet >= 0.9 * reps, "rho=0: IMR insignificant in " + std::to_string(quiet) + "/" + std::to_string(reps));
  return o;
}

// 8. Probit MLE, marginal effects and the inverse Mills ratio.
Outcome probit_ame() {
  Outcome o;
  std::mt19937_64 rng(808);
  std::normal_distribution<double> z;
  double worst_mle = 0, worst_ame = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 300;
    Eigen::MatrixXd X(n, 1);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = z(rng);
      y[i] = 0.3 - 0.2 * rep / 20.0 + 0.8 * X(i, 0) + z(rng) > 0;
    }
    const auto fit = binary_mle(y, X, {"x"}, Link::probit);
    auto loglik = [&](double b0, double b1) {
      double s = 0;
      for (int i = 0; i < n; ++i) {
        const double eta = b0 + b1 * X(i, 0);
        s += y[i] > 0 ? std::log(phi_cdf(eta)) : std::log(phi_cdf(-eta));
      }
      return s;
    };
    const auto [g0, g1] = oracle::grid_argmax(loglik, 0.0, 0.0, 3.0);
    worst_mle = std::max({worst_mle, std::abs(fit.coef("_cons") - g0), std::abs(fit.coef("x") - g1)});
  }
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 400;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = z(rng);
      X(i, 1) = z(rng) > 0.3;
      y[i] = -0.2 + 0.7 * X(i, 0) + 0.5 * X(i, 1) + z(rng) > 0;
    }
    const auto fit = binary_mle(y, X, {"x", "d"}, Link::probit);
    const auto ames = marginal_effects(fit, X);
    const double b0 = fit.coef("_cons"), bx = fit.coef("x"), bd = fit.coef("d");
    const double h = 1e-4;
    double fd_x = 0, fd_d = 0;
    for (int i = 0; i < n; ++i) {
      const double base = b0 + bd * X(i, 1);
      fd_x += (phi_cdf(base + bx * (X(i, 0) + h)) - phi_cdf(base + bx * (X(i, 0) - h))) / (2 * h) / n;
      fd_d += (phi_cdf(b0 + bx * X(i, 0) + bd) - phi_cdf(b0 + bx * X(i, 0))) / n;
    }
    worst_ame = std::max({worst_ame, std::abs(ames[0].effect - fd_x), std::abs(ames[1].effect - fd_d)});
  }
  o.require(worst_mle < 1e-4, "max |MLE - grid| = " + fmt("%.2e", worst_mle));
  o.require(worst_ame < 1e-6, "max |AME - finite difference| = " + fmt("%.2e", worst_ame));
  const double imr0 = inverse_mills(0.0);
  o.require(std::abs(imr0 - 0.79788) < 5e-6 && std::abs(imr0 - phi_pdf(0) / 0.5) < 1e-12, "IMR(0) = " + fmt("%.8f", imr0));
  return o;
}

// 9. SUR reductions, recovery and test calibration.
Outcome sur_checks() {
  Outcome o;
  auto sur_data = [](int firms, std::uint64_t seed, double corr, std::vector<double> coefs) {
    auto c = dgp(Preset::sur_system, firms, seed);
    c.sur_error_corr = Eigen::MatrixXd::Constant(4, 4, corr);
    c.sur_error_corr.diagonal().setOnes();
    if (!coefs.empty()) c.sur_coefs = coefs;
    return add_did_terms(generate_panel(c).data, did_spec());
  };
  auto sys = default_sur_system(control_names());
  sys.standardize_outcomes = false;

  double worst = 0;
  for (int r = 0; r < 20; ++r) {
    const auto d = sur_data(150, 90000 + r, 0.0, {});
    const auto fit = sur_fit(d, sys);
    for (std::size_t g = 0; g < 4; ++g) {
      const auto& eq = sys.equations[g];
      const auto ols = ols_cluster(d, eq.outcome, eq.regressors, FixedEffectSpec::firm());
      for (const auto& x : eq.regressors) worst = std::max(worst, std::abs(fit.coef(g, x) - ols.coef(x)));
    }
  }
  o.require(worst < 1e-8, "diagonal: max |SUR - OLS| = " + fmt("%.2e", worst));

  const std::vector<double> truth = {0.018, -0.049, -0.044, 0.051};
  const int reps = 400;
  const auto [lo, hi] = size_band(0.05, reps);
  std::vector<std::vector<double>> est(4);
  int bp_corr = 0, bp_null = 0, joint = 0, signed_eq = 0;
  for (int r = 0; r < reps; ++r) {
    const auto planted = sur_fit(sur_data(500, 91000 + r, 0.3, {}), sys);
    for (std::size_t g = 0; g < 4; ++g) est[g].push_back(planted.coef(g, kDidTerm));
    bp_corr += sur_tests(planted, kDidTerm, {1, 1, -1, 1}).independence.p < 0.05;

    const auto zero = sur_fit(sur_data(500, 92000 + r, 0.0, {0, 0, 0, 0}), sys);
    const auto tz = sur_tests(zero, kDidTerm, {1, 1, -1, 1});
    bp_null += tz.independence.p < 0.05;
    joint += tz.joint.wald.p < 0.05;

    const auto eq = sur_fit(sur_data(500, 93000 + r, 0.3, {0.04, 0.04, -0.04, 0.04}), sys);
    signed_eq += sur_tests(eq, kDidTerm, {1, 1, -1, 1}).signed_equality.wald.p < 0.05;
  }
  bool recovered = true;
  std::string rec;
  for (std::size_t g = 0; g < 4; ++g) {
    const Eigen::Map<const Eigen::VectorXd> v(est[g].data(), reps);
    const double m = v.mean(), mc_se = std::sqrt(stats::sample_variance(v) / reps);
    recovered = recovered && std::abs(m - truth[g]) < 3 * mc_se;
    rec += (g ? ", " : "") + fmt("%.4f", m);
  }
  o.require(recovered, "mean estimates (" + rec + ") within 3 MC SE of planted");
  auto rate = [&](int k) { return static_cast<double>(k) / reps; };
  o.require(rate(bp_corr) >= 0.99, "BP power at corr 0.3 = " + fmt("%.3f", rate(bp_corr)));
  const std::string band = " in [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "]";
  o.require(rate(bp_null) >= lo && rate(bp_null) <= hi, "BP size = " + fmt("%.3f", rate(bp_null)) + band);
  o.require(rate(joint) >= lo && rate(joint) <= hi, "joint Wald size = " + fmt("%.3f", rate(joint)) + band);
  o.require(rate(signed_eq) >= lo && rate(signed_eq) <= hi, "signed-equality size = " + fmt("%.3f", rate(signed_eq)) + band);
  return o;
}

// 10. Residual recovery, assignment rules, transitions and persistence.
Outcome washing_measure() {
  Outcome o;
  const auto sim = generate_panel(dgp(Preset::did_parallel, 1000, 100));
  WashingSpec ws;
  ws.pre_years = {2015, 2016, 2017, 2018, 2019, 2020};
  const auto res = decoupling_residuals(sim.data, ws);
  std::vector<double> a, b;
  for (Index i = 0; i < res.size(); ++i)
    if (res.has(i)) {
      a.push_back(res.values[i]);
      b.push_back(sim.data.column("planted_residual").values[i]);
    }
  const double r = stats::pearson(Eigen::Map<Vector>(a.data(), static_cast<Index>(a.size())),
                                  Eigen::Map<Vector>(b.data(), static_cast<Index>(b.size())));
  o.require(r > 0.99, "residual recovery r = " + fmt("%.4f", r));

  // Hand firms over pre-years 2019-2020: residuals per year, NaN missing.
  struct Case {
    std::string firm;
    double r2019, r2020;
    bool mean;
    StrictLabel strict;
    std::optional<bool> single;
  };
  const double na = std::nan("");
  const std::vector<Case> cases = {
      {"1", 0.5, 0.2, true, StrictLabel::treated, true},
      {"2", -0.5, -0.1, false, StrictLabel::control, false},
      {"3", 0.9, -0.1, true, StrictLabel::excluded, false},
      {"4", -0.3, 0.0, false, StrictLabel::excluded, false},
      {"5", 0.4, na, true, StrictLabel::excluded, std::nullopt},
      {"6", na, -0.2, false, StrictLabel::excluded, false},
      {"7", 0.25, -0.25, false, StrictLabel::excluded, false},
  };
  std::vector<std::string> f, ind, prov;
  std::vector<int> yrs;
  Column rc(static_cast<Index>(cases.size() * 3));
  Index row = 0;
  for (const auto& c : cases)
    for (int y : {2019, 2020, 2021}) {
      f.push_back(c.firm);
      yrs.push_back(y);
      ind.push_back("I");
      prov.push_back("P");
      const double v = y == 2019 ? c.r2019 : y == 2020 ? c.r2020 : 1.0;
      if (!std::isnan(v)) rc.set(row, v);
      ++row;
    }
  const PanelDataset hand(f, yrs, ind, prov);
  const std::vector<int> pre = {2019, 2020};
  const auto asg = assign_treatment(hand, rc, pre);
  int ok = 0;
  for (const auto& c : cases) {
    const auto* fa = asg.find(c.firm);
    ok += fa && fa->treat_mean == c.mean && fa->treat_strict == c.strict && fa->treat_single_year == c.single;
  }
  o.require(ok == static_cast<int>(cases.size()),
            std::to_string(ok) + "/" + std::to_string(cases.size()) + " hand assignment cases");

  double prev = -2, worst_row = 0;
  bool monotone = true;
  std::string rhos;
  for (double ar : {0.0, 0.4, 0.8}) {
    auto c = dgp(Preset::persistence, 1000, 200);
    c.residual_ar = ar;
    const auto s = generate_panel(c);
    const auto ps = persistence_stats(s.data, decoupling_residuals(s.data, ws));
    for (int k = 0; k < 3; ++k) worst_row = std::max(worst_row, std::abs(ps.transition.row(k).sum() - 1.0));
    monotone = monotone && ps.spearman > prev;
    prev = ps.spearman;
    rhos += (rhos.empty() ? "" : ", ") + fmt("%.3f", ps.spearman);
  }
  o.require(worst_row < 1e-12, "transition rows sum to 1 (max dev " + fmt("%.1e", worst_row) + ")");
  o.require(monotone, "Spearman at AR 0/0.4/0.8 = " + rhos);
  return o;
}

// 11. Full pipeline byte identity at 1 and 8 workers.
Outcome determinism() {
  Outcome o;
  using nlohmann::json;
  const json full = {{"input", {{"synthetic", {{"preset", "selection"}, {"n_firms", 200}, {"seed", 3}}}}},
                     {"washing", {{"treatment", "mean"}}},
                     {"did", {{"controls", control_names()}}},
                     {"robustness",
                      {{"psm", {{"caliper", 0.05}}},
                       {"eb", true},
                       {"heckman", true},
                       {"placebo", 200},
                       {"event_study", true},
                       {"intensity", true},
                       {"quantile", true},
                       {"z_difference", true},
                       {"strict", true},
                       {"single_year", true},
                       {"validation", true},
                       {"exclude_years", {2020}},
                       {"policy_controls", {"ST"}},
                       {"split_perm", 100}}},
                     {"moderation", {"Mshare"}},
                     {"heterogeneity", {"Size", "Mshare"}},
                     {"seed", 42}};
  const json sur = {{"input", {{"synthetic", {{"preset", "sur_system"}, {"n_firms", 200}, {"seed", 4}}}}},
                    {"did", {{"controls", control_names()}}},
                    {"robustness", {{"placebo", 100}}},
                    {"sur", {{"iterate", true}}},
                    {"seed", 42}};
  for (const auto& [label, j] : {std::pair{"full", full}, std::pair{"sur", sur}}) {
    auto one = PipelineConfig::from_json(j);
    one.threads = 1;
    auto eight = one;
    eight.threads = 8;
    const auto a = canonical_json(run_pipeline(one).json);
    const auto b = canonical_json(run_pipeline(eight).json);
    o.require(a == b, std::string(label) + ": " + std::to_string(a.size()) + " bytes, hash " + fnv1a_hex(a) +
                          (a == b ? " identical" : " differs from " + fnv1a_hex(b)));
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"hdfe-vs-dummy", hdfe_vs_dummies},     {"planted-did", planted_did},
      {"event-study-nulls", event_nulls},    {"placebo-calibration", placebo_calibration},
      {"eb-exactness", eb_exactness},        {"psm-behavior", psm_behavior},
      {"heckman-correction", heckman_correction}, {"probit-ame", probit_ame},
      {"sur", sur_checks},                   {"washing-measure", washing_measure},
      {"determinism", determinism},
  };
  // Optional argument: run only the criteria whose numbers are listed.
  std::set<int> only;
  for (int a = 1; a < argc; ++a) only.insert(std::atoi(argv[a]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[k].second();
    } catch (const std::exception& e) {
      out.require(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !out.pass;
    std::cout << (out.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[k].first << " (" << fmt("%.1f", secs)
              << " s): " << out.detail << std::endl;
  }
  return failed ? 1 : 0;
}
