#include "panelcausal/causal.hpp"

#include "panelcausal/error.hpp"
#include "panelcausal/parallel.hpp"
#include "panelcausal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace panelcausal {

namespace {

std::string csv_num(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string event_name(int tau) { return tau < 0 ? "ES_m" + std::to_string(-tau) : "ES_p" + std::to_string(tau); }

std::vector<Index> rows_where(const Mask& m) {
  std::vector<Index> rows;
  for (Index i = 0; i < m.size(); ++i)
    if (m[i]) rows.push_back(i);
  return rows;
}

double json_number(double v) { return v; }

// Firm index of each row and the distinct firm labels in id order.
std::pair<std::vector<int>, std::vector<std::string>> firm_index(const PanelDataset& d) {
  std::vector<std::string> firms = d.distinct_firms();
  std::map<std::string, int> pos;
  for (std::size_t k = 0; k < firms.size(); ++k) pos[firms[k]] = static_cast<int>(k);
  std::vector<int> idx(static_cast<std::size_t>(d.rows()));
  for (Index i = 0; i < d.rows(); ++i) idx[static_cast<std::size_t>(i)] = pos[d.firms()[static_cast<std::size_t>(i)]];
  return {idx, firms};
}

// The DID regression with its fixed effects and controls absorbed once, so
// the coefficient for any relabelling of treated firms costs one extra
// demeaning pass (Frisch-Waugh).
class FastDid {
 public:
  FastDid(const PanelDataset& d, const DidSpec& spec) : spec_(spec) {
    std::vector<std::string> cols = spec.controls;
    cols.push_back(spec.outcome);
    cols.push_back(spec.treat);
    const auto rows = rows_where(complete_cases(d, cols));
    if (rows.empty()) throw DataError("no complete observations for the DID regression");
    Matrix raw(static_cast<Index>(rows.size()), static_cast<Index>(spec.controls.size()) + 1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto i = static_cast<Index>(r);
      raw(i, 0) = d.column(spec.outcome).values[rows[r]];
      for (std::size_t j = 0; j < spec.controls.size(); ++j)
        raw(i, static_cast<Index>(j) + 1) = d.column(spec.controls[j]).values[rows[r]];
    }
    std::vector<Factor> fe;
    for (const auto& f : resolve_factors(d, spec.fe)) fe.push_back(subset_factor(f, rows));
    absorbed_ = demean_absorb(raw, fe, spec.fe);
    y_ = absorbed_.data.col(0);
    const Matrix Xall = absorbed_.data.rightCols(raw.cols() - 1);
    std::vector<Index> keep;
    for (Index j = 0; j < Xall.cols(); ++j)
      if (Xall.col(j).norm() > 1e-7 * std::max(1.0, raw.col(j + 1).norm())) keep.push_back(j);
    Matrix Xk(Xall.rows(), static_cast<Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) Xk.col(static_cast<Index>(j)) = Xall.col(keep[j]);
    const auto ind = independent_columns(Xk);
    X_.resize(Xk.rows(), static_cast<Index>(ind.size()));
    for (std::size_t j = 0; j < ind.size(); ++j) X_.col(static_cast<Index>(j)) = Xk.col(ind[j]);
    if (X_.cols() > 0) qr_.compute(X_);

    const auto [fidx, firms] = firm_index(d);
    firms_ = firms;
    treat_by_firm_.assign(firms.size(), -1);
    for (std::size_t k = 0; k < absorbed_.rows.size(); ++k) {
      const Index i = rows[static_cast<std::size_t>(absorbed_.rows[k])];
      const int f = fidx[static_cast<std::size_t>(i)];
      row_firm_.push_back(f);
      row_post_.push_back(d.years()[static_cast<std::size_t>(i)] >= spec.policy_year ? 1.0 : 0.0);
      treat_by_firm_[static_cast<std::size_t>(f)] = d.column(spec.treat).values[i] > 0.5 ? 1 : 0;
    }
    for (std::size_t f = 0; f < treat_by_firm_.size(); ++f)
      if (treat_by_firm_[f] >= 0) sample_firms_.push_back(static_cast<int>(f));
  }

  /// DID coefficient under firm labels `treat` (indexed like firms()).
  double coefficient(const std::vector<int>& treat) const {
    Vector tp(static_cast<Index>(row_firm_.size()));
    for (std::size_t k = 0; k < row_firm_.size(); ++k)
      tp[static_cast<Index>(k)] = treat[static_cast<std::size_t>(row_firm_[k])] * row_post_[k];
    const auto a = demean_absorb(tp, absorbed_.factors, spec_.fe, nullptr, false);
    Vector r = a.data.col(0);
    if (X_.cols() > 0) r -= X_ * qr_.solve(r);
    const double rr = r.squaredNorm();
    if (!(rr > 1e-12 * std::max(1.0, tp.squaredNorm()))) return std::nan("");
    return r.dot(y_) / rr;
  }

  const std::vector<int>& actual_labels() const { return treat_by_firm_; }
  /// Firms with at least one estimation row.
  const std::vector<int>& sample_firms() const { return sample_firms_; }

 private:
  DidSpec spec_;
  Absorbed absorbed_;
  Vector y_;
  Matrix X_;
  Eigen::ColPivHouseholderQR<Matrix> qr_;
  std::vector<std::string> firms_;
  std::vector<int> row_firm_;
  std::vector<double> row_post_;
  std::vector<int> treat_by_firm_;
  std::vector<int> sample_firms_;
};

struct EbSolution {
  Vector weights;  // sums to 1
  double max_gap = 0;
  int iterations = 0;
};

EbSolution eb_solve(const Matrix& Xc, const Vector& target, double tol, int max_iterations) {
  const Index n = Xc.rows(), p = Xc.cols();
  if (n == 0) throw EstimationError("entropy balancing: no control observations");
  Vector scale(p);
  std::vector<std::string> bad;
  for (Index j = 0; j < p; ++j) {
    const double lo = Xc.col(j).minCoeff(), hi = Xc.col(j).maxCoeff();
    const bool inside = (lo < target[j] && target[j] < hi) || (lo == hi && lo == target[j]);
    if (!inside) bad.push_back(std::to_string(j));
    scale[j] = hi > lo ? hi - lo : 1.0;
  }
  if (!bad.empty()) {
    std::string msg = "entropy balancing infeasible: treated mean outside the control range for covariate";
    for (const auto& b : bad) msg += " #" + b;
    throw EstimationError(msg);
  }
  Matrix Z = (Xc.rowwise() - target.transpose()).array().rowwise() / scale.transpose().array();

  auto weights_at = [&](const Vector& lambda, double* objective) {
    Vector eta = Z * lambda;
    const double mx = eta.maxCoeff();
    Vector w = (eta.array() - mx).exp();
    const double s = w.sum();
    if (objective) *objective = mx + std::log(s);
    return Vector(w / s);
  };
  auto gap_of = [&](const Vector& w) { return ((Xc.transpose() * w - target).cwiseAbs()).maxCoeff(); };

  Vector lambda = Vector::Zero(p);
  double f;
  Vector w = weights_at(lambda, &f);
  EbSolution sol;
  for (sol.iterations = 0; sol.iterations <= max_iterations; ++sol.iterations) {
    sol.max_gap = gap_of(w);
    if (sol.max_gap < tol) {
      sol.weights = w;
      return sol;
    }
    const Vector g = Z.transpose() * w;
    const Matrix Zc = Z.rowwise() - g.transpose();
    const Matrix H = Zc.transpose() * w.asDiagonal() * Zc;
    const Vector step = -H.completeOrthogonalDecomposition().solve(g);
    double t = 1.0, fn;
    Vector wn = weights_at(lambda + step, &fn);
    while (!(fn <= f + 1e-4 * t * g.dot(step)) && t > 1e-10) {
      t *= 0.5;
      wn = weights_at(lambda + t * step, &fn);
    }
    if (t <= 1e-10) break;
    lambda += t * step;
    w = wn;
    f = fn;
  }
  throw EstimationError("entropy balancing did not converge (moment gap " + csv_num(gap_of(w)) + ")");
}

void check_binary_treat(const PanelDataset& data, const std::string& treat) {
  if (!data.has_column(treat)) throw DataError("missing treatment column " + treat);
  const auto& t = data.column(treat);
  for (Index i = 0; i < data.rows(); ++i)
    if (t.has(i) && t.values[i] != 0.0 && t.values[i] != 1.0) throw DataError("treatment column must be 0/1");
}

std::vector<Index> complete_rows(const PanelDataset& data, const std::string& treat,
                                 const std::vector<std::string>& covars) {
  std::vector<std::string> cols = covars;
  cols.push_back(treat);
  for (const auto& c : cols)
    if (!data.has_column(c)) throw DataError("missing column " + c);
  return rows_where(complete_cases(data, cols));
}

}  // namespace

void DidSpec::validate(const PanelDataset& data) const {
  std::vector<std::string> missing;
  auto need = [&](const std::string& c) {
    if (!data.has_column(c)) missing.push_back(c);
  };
  need(outcome);
  need(treat);
  for (const auto& c : controls) need(c);
  for (const auto& c : interaction_terms) need(c);
  if (!missing.empty()) {
    std::string msg = "DID: missing columns";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  fe.validate();
  check_binary_treat(data, treat);
  const auto& t = data.column(treat);
  std::map<std::string, double> by_firm;
  for (Index i = 0; i < data.rows(); ++i) {
    if (!t.has(i)) continue;
    auto [it, fresh] = by_firm.emplace(data.firms()[static_cast<std::size_t>(i)], t.values[i]);
    if (!fresh && it->second != t.values[i])
      throw DataError("treatment '" + treat + "' varies within firm " + it->first);
  }
}

nlohmann::json DidSpec::to_json() const {
  return {{"outcome", outcome},   {"treat", treat},     {"policy_year", policy_year},
          {"controls", controls}, {"fe", fe.to_json()}, {"cluster", cluster},
          {"interaction_terms", interaction_terms}};
}

DidSpec DidSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("did spec must be an object");
  DidSpec s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "outcome") s.outcome = v.get<std::string>();
      else if (key == "treat") s.treat = v.get<std::string>();
      else if (key == "policy_year") s.policy_year = v.get<int>();
      else if (key == "controls") s.controls = v.get<std::vector<std::string>>();
      else if (key == "fe") s.fe = FixedEffectSpec::from_json(v);
      else if (key == "cluster") s.cluster = v.get<std::string>();
      else if (key == "interaction_terms") s.interaction_terms = v.get<std::vector<std::string>>();
      else throw ConfigError("unknown did key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("did spec: ") + e.what());
  }
  return s;
}

std::string interaction_name(const std::string& moderator) { return kDidTerm + "_x_" + moderator; }

PanelDataset add_did_terms(const PanelDataset& data, const DidSpec& spec) {
  const Index n = data.rows();
  Column post(n), did(n);
  const auto& t = data.column(spec.treat);
  for (Index i = 0; i < n; ++i) {
    const double p = data.years()[static_cast<std::size_t>(i)] >= spec.policy_year ? 1.0 : 0.0;
    post.set(i, p);
    if (t.has(i)) did.set(i, t.values[i] * p);
  }
  PanelDataset d = data.with_column("Post", post).with_column(kDidTerm, did);
  for (const auto& m : spec.interaction_terms) {
    const auto& mc = data.column(m);
    Column inter(n);
    for (Index i = 0; i < n; ++i)
      if (did.has(i) && mc.has(i)) inter.set(i, did.values[i] * mc.values[i]);
    d = d.with_column(interaction_name(m), inter);
  }
  return d;
}

RegressionResult did_estimate(const PanelDataset& data, const DidSpec& spec, const Vector* weights) {
  spec.validate(data);
  if (weights && (weights->array() < 0).any()) throw DataError("DID weights must be non-negative");
  const PanelDataset d = add_did_terms(data, spec);
  std::vector<std::string> regs = {kDidTerm};
  regs.insert(regs.end(), spec.controls.begin(), spec.controls.end());
  for (const auto& m : spec.interaction_terms) {
    regs.push_back(m);
    regs.push_back(interaction_name(m));
  }
  return ols_cluster(d, spec.outcome, regs, spec.fe, spec.cluster, weights);
}

const EventCoefficient& EventStudyResult::at(int tau) const {
  for (const auto& c : coefficients)
    if (c.tau == tau) return c;
  throw DataError("no event-study coefficient for tau = " + std::to_string(tau));
}

nlohmann::json EventStudyResult::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : coefficients)
    rows.push_back({{"tau", c.tau},
                    {"estimate", c.estimate},
                    {"se", c.se},
                    {"ci", {c.lower, c.upper}},
                    {"p", c.p},
                    {"stars", stats::stars(c.p)},
                    {"treated_obs", c.treated_obs}});
  return {{"window", {tau_min, tau_max}}, {"omitted", omitted}, {"coefficients", rows}, {"fit", fit.to_json()["fit"]}};
}

std::string EventStudyResult::csv() const {
  std::ostringstream out;
  out << "tau,estimate,se,lower,upper,p,treated_obs\n";
  for (const auto& c : coefficients)
    out << c.tau << "," << csv_num(c.estimate) << "," << csv_num(c.se) << "," << csv_num(c.lower) << ","
        << csv_num(c.upper) << "," << csv_num(c.p) << "," << c.treated_obs << "\n";
  return out.str();
}

void EventStudyResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << csv();
}

EventStudyResult event_study(const PanelDataset& data, const DidSpec& spec, int tau_min, int tau_max, int omitted) {
  spec.validate(data);
  if (tau_min >= tau_max || omitted < tau_min || omitted > tau_max)
    throw ConfigError("event window must satisfy tau_min < tau_max with the omitted period inside");
  const Index n = data.rows();
  const auto& t = data.column(spec.treat);
  const auto& y = data.column(spec.outcome);
  std::map<int, Index> cell;
  for (int tau = tau_min; tau <= tau_max; ++tau) cell[tau] = 0;
  std::vector<int> bin(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    bin[static_cast<std::size_t>(i)] = std::clamp(data.years()[static_cast<std::size_t>(i)] - spec.policy_year, tau_min, tau_max);
    if (t.has(i) && t.values[i] == 1.0 && y.has(i)) ++cell[bin[static_cast<std::size_t>(i)]];
  }
  for (const auto& [tau, count] : cell)
    if (count == 0) throw DataError("empty event-time cell tau = " + std::to_string(tau));

  PanelDataset d = data;
  std::vector<std::string> regs;
  for (int tau = tau_min; tau <= tau_max; ++tau) {
    if (tau == omitted) continue;
    Column c(n);
    for (Index i = 0; i < n; ++i)
      if (t.has(i)) c.set(i, t.values[i] * (bin[static_cast<std::size_t>(i)] == tau ? 1.0 : 0.0));
    d = d.with_column(event_name(tau), c);
    regs.push_back(event_name(tau));
  }
  regs.insert(regs.end(), spec.controls.begin(), spec.controls.end());

  EventStudyResult res;
  res.omitted = omitted;
  res.tau_min = tau_min;
  res.tau_max = tau_max;
  res.fit = ols_cluster(d, spec.outcome, regs, spec.fe, spec.cluster);
  for (int tau = tau_min; tau <= tau_max; ++tau) {
    if (tau == omitted) continue;
    EventCoefficient c;
    c.tau = tau;
    c.treated_obs = cell[tau];
    const auto name = event_name(tau);
    if (!res.fit.has(name)) throw EstimationError("event-time indicator " + name + " is collinear with the fixed effects");
    c.estimate = res.fit.coef(name);
    c.se = res.fit.se(name);
    c.p = res.fit.p(name);
    std::tie(c.lower, c.upper) = res.fit.ci(name);
    res.coefficients.push_back(c);
  }
  return res;
}

nlohmann::json PlaceboResult::to_json() const {
  std::vector<double> ok;
  for (double v : draws)
    if (!std::isnan(v)) ok.push_back(v);
  nlohmann::json j = {{"actual", actual}, {"n_perm", draws.size()}, {"failed", failed}, {"p", p}, {"seed", seed}};
  if (!ok.empty()) {
    const Eigen::Map<const Vector> m(ok.data(), static_cast<Index>(ok.size()));
    j["mean"] = m.mean();
    j["sd"] = ok.size() > 1 ? std::sqrt(stats::sample_variance(m)) : 0.0;
    j["min"] = m.minCoeff();
    j["max"] = m.maxCoeff();
  }
  return j;
}

std::string PlaceboResult::csv() const {
  std::ostringstream out;
  out << "draw,coefficient\n";
  for (std::size_t d = 0; d < draws.size(); ++d) out << d << "," << csv_num(draws[d]) << "\n";
  return out.str();
}

void PlaceboResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << csv();
}

PlaceboResult placebo_permutation(const PanelDataset& data, const DidSpec& spec, int n_perm, std::uint64_t seed,
                                  int threads) {
  if (n_perm < 1) throw ConfigError("placebo: n_perm must be at least 1");
  if (!spec.interaction_terms.empty()) throw ConfigError("placebo: moderators are not supported");
  spec.validate(data);
  const FastDid design(data, spec);
  PlaceboResult res;
  res.seed = seed;
  res.actual = design.coefficient(design.actual_labels());
  if (std::isnan(res.actual)) throw EstimationError("placebo: DID term is collinear in the actual sample");

  const auto& firms = design.sample_firms();
  std::vector<int> labels;
  for (int f : firms) labels.push_back(design.actual_labels()[static_cast<std::size_t>(f)]);
  res.draws.assign(static_cast<std::size_t>(n_perm), std::nan(""));
  parallel_for(static_cast<std::size_t>(n_perm), resolve_threads(threads), [&](std::size_t d) {
    Rng rng = make_rng(seed, d);
    std::vector<int> perm = labels;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> treat = design.actual_labels();
    for (std::size_t k = 0; k < firms.size(); ++k) treat[static_cast<std::size_t>(firms[k])] = perm[k];
    res.draws[d] = design.coefficient(treat);
  });
  Index extreme = 0, ok = 0;
  for (double v : res.draws) {
    if (std::isnan(v)) {
      ++res.failed;
      continue;
    }
    ++ok;
    extreme += std::abs(v) >= std::abs(res.actual);
  }
  res.p = ok > 0 ? static_cast<double>(extreme) / static_cast<double>(ok) : std::nan("");
  return res;
}

std::vector<BalanceRow> balance_diagnostics(const PanelDataset& data, const std::string& treat,
                                            const std::vector<std::string>& covars, const Vector* weights) {
  check_binary_treat(data, treat);
  if (weights && weights->size() != data.rows()) throw DataError("balance: weight vector length mismatch");
  const auto rows = complete_rows(data, treat, covars);
  std::vector<BalanceRow> out;
  for (const auto& c : covars) {
    std::vector<double> xt, xc, wt, wc;
    for (Index i : rows) {
      const double x = data.column(c).values[i];
      const double w = weights ? (*weights)[i] : 1.0;
      if (data.column(treat).values[i] == 1.0) {
        xt.push_back(x);
        wt.push_back(w);
      } else {
        xc.push_back(x);
        wc.push_back(w);
      }
    }
    if (xt.empty() || xc.empty()) throw DataError("balance: needs treated and control observations");
    const Eigen::Map<const Vector> mt(xt.data(), static_cast<Index>(xt.size())), mc(xc.data(), static_cast<Index>(xc.size()));
    const Eigen::Map<const Vector> vt(wt.data(), static_cast<Index>(wt.size())), vc(wc.data(), static_cast<Index>(wc.size()));
    BalanceRow r;
    r.covariate = c;
    r.mean_treated = mt.mean();
    r.mean_control = mc.mean();
    if (!(vt.sum() > 0) || !(vc.sum() > 0)) throw DataError("balance: a group has zero total weight");
    r.mean_treated_weighted = mt.dot(vt) / vt.sum();
    r.mean_control_weighted = mc.dot(vc) / vc.sum();
    // A single observation contributes no spread.
    r.var_treated = mt.size() > 1 ? stats::sample_variance(mt) : 0.0;
    r.var_control = mc.size() > 1 ? stats::sample_variance(mc) : 0.0;
    const double pooled = std::sqrt((r.var_treated + r.var_control) / 2.0);
    if (!(pooled > 0)) throw DataError("balance: zero pooled variance for " + c);
    r.bias_before = 100.0 * (r.mean_treated - r.mean_control) / pooled;
    r.bias_after = 100.0 * (r.mean_treated_weighted - r.mean_control_weighted) / pooled;
    out.push_back(r);
  }
  return out;
}

nlohmann::json balance_to_json(const std::vector<BalanceRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"covariate", r.covariate},
                   {"mean_treated", r.mean_treated},
                   {"mean_control", r.mean_control},
                   {"mean_treated_weighted", r.mean_treated_weighted},
                   {"mean_control_weighted", r.mean_control_weighted},
                   {"bias_before", r.bias_before},
                   {"bias_after", r.bias_after}});
  return out;
}

nlohmann::json WeightVector::to_json() const {
  return {{"method", method == WeightMethod::psm ? "psm" : "eb"},
          {"n_treated", n_treated},
          {"n_control", n_control},
          {"unmatched_treated", unmatched_treated},
          {"max_gap", json_number(max_gap)},
          {"defaulted_firms", defaulted_firms},
          {"iterations", iterations},
          {"balance", balance_to_json(balance)}};
}

std::vector<std::vector<std::size_t>> match_on_scores(const std::vector<double>& treated,
                                                      const std::vector<double>& control,
                                                      const std::vector<std::string>& control_ids, int k,
                                                      double caliper) {
  if (k < 1) throw ConfigError("matching: k must be at least 1");
  if (control_ids.size() != control.size()) throw DataError("matching: control ids do not match scores");
  auto id_less = [&](std::size_t a, std::size_t b) {
    if (control_ids[a] != control_ids[b]) return firm_id_less(control_ids[a], control_ids[b]);
    return a < b;
  };
  std::vector<std::size_t> order(control.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (control[a] != control[b]) return control[a] < control[b];
    return id_less(a, b);
  });
  const auto uk = static_cast<std::size_t>(k);
  std::vector<std::vector<std::size_t>> out(treated.size());
  for (std::size_t t = 0; t < treated.size(); ++t) {
    const double s = treated[t];
    auto pos = std::lower_bound(order.begin(), order.end(), s, [&](std::size_t c, double v) { return control[c] < v; }) -
               order.begin();
    std::ptrdiff_t lo = pos - 1, hi = pos;
    std::vector<std::pair<double, std::size_t>> cand;
    auto dist = [&](std::ptrdiff_t p) { return std::abs(control[order[static_cast<std::size_t>(p)]] - s); };
    const auto size = static_cast<std::ptrdiff_t>(order.size());
    while (lo >= 0 || hi < size) {
      const double dl = lo >= 0 ? dist(lo) : INFINITY;
      const double dh = hi < size ? dist(hi) : INFINITY;
      const double d = std::min(dl, dh);
      if (d > caliper) break;
      // Keep collecting past k while distances tie with the k-th candidate.
      if (cand.size() >= uk && d > cand[uk - 1].first) break;
      if (dl <= dh) cand.emplace_back(dl, order[static_cast<std::size_t>(lo--)]);
      else cand.emplace_back(dh, order[static_cast<std::size_t>(hi++)]);
    }
    std::stable_sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return id_less(a.second, b.second);
    });
    for (std::size_t m = 0; m < std::min(uk, cand.size()); ++m) out[t].push_back(cand[m].second);
  }
  return out;
}

WeightVector psm_match(const PanelDataset& data, const std::string& treat, const std::vector<std::string>& covars,
                       int k, double caliper, std::uint64_t) {
  check_binary_treat(data, treat);
  if (!(caliper >= 0)) throw ConfigError("matching: caliper must be non-negative");
  if (covars.empty()) throw ConfigError("matching needs at least one covariate");
  const auto rows = complete_rows(data, treat, covars);
  const auto n = static_cast<Index>(rows.size());
  Vector y(n);
  Matrix X(n, static_cast<Index>(covars.size()));
  for (Index i = 0; i < n; ++i) {
    y[i] = data.column(treat).values[rows[static_cast<std::size_t>(i)]];
    for (std::size_t j = 0; j < covars.size(); ++j)
      X(i, static_cast<Index>(j)) = data.column(covars[j]).values[rows[static_cast<std::size_t>(i)]];
  }
  const auto fit = binary_mle(y, X, covars, Link::logit);
  const Vector eta = fit.linear_index(X);
  std::vector<double> st, sc;
  std::vector<Index> rt, rc;
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) {
    const double s = link_cdf(Link::logit, eta[i]);
    const Index row = rows[static_cast<std::size_t>(i)];
    if (y[i] == 1.0) {
      st.push_back(s);
      rt.push_back(row);
    } else {
      sc.push_back(s);
      rc.push_back(row);
      ids.push_back(data.firms()[static_cast<std::size_t>(row)]);
    }
  }
  if (st.empty() || sc.empty()) throw DataError("matching needs treated and control observations");
  const auto matches = match_on_scores(st, sc, ids, k, caliper);

  WeightVector wv;
  wv.method = WeightMethod::psm;
  wv.weights = Vector::Zero(data.rows());
  wv.n_treated = static_cast<Index>(st.size());
  wv.n_control = static_cast<Index>(sc.size());
  for (std::size_t t = 0; t < matches.size(); ++t) {
    if (matches[t].empty()) {
      ++wv.unmatched_treated;
      continue;
    }
    wv.weights[rt[t]] = 1.0;
    for (std::size_t c : matches[t]) wv.weights[rc[c]] += 1.0 / k;
  }
  if (wv.unmatched_treated == wv.n_treated) throw EstimationError("matching: no treated unit has a control within the caliper");
  wv.balance = balance_diagnostics(data, treat, covars, &wv.weights);
  return wv;
}

WeightVector entropy_balance(const PanelDataset& data, const std::string& treat, const std::vector<std::string>& covars,
                             double tol, int max_iterations) {
  check_binary_treat(data, treat);
  if (covars.empty()) throw ConfigError("entropy balancing needs at least one covariate");
  const auto rows = complete_rows(data, treat, covars);
  std::vector<Index> rt, rc;
  for (Index i : rows) (data.column(treat).values[i] == 1.0 ? rt : rc).push_back(i);
  if (rt.empty()) throw DataError("entropy balancing: no treated observations");
  const auto p = static_cast<Index>(covars.size());
  Vector target = Vector::Zero(p);
  for (Index i : rt)
    for (Index j = 0; j < p; ++j) target[j] += data.column(covars[static_cast<std::size_t>(j)]).values[i];
  target /= static_cast<double>(rt.size());
  Matrix Xc(static_cast<Index>(rc.size()), p);
  for (std::size_t r = 0; r < rc.size(); ++r)
    for (Index j = 0; j < p; ++j) Xc(static_cast<Index>(r), j) = data.column(covars[static_cast<std::size_t>(j)]).values[rc[r]];
  const auto sol = eb_solve(Xc, target, tol, max_iterations);

  WeightVector wv;
  wv.method = WeightMethod::eb;
  wv.weights = Vector::Zero(data.rows());
  wv.n_treated = static_cast<Index>(rt.size());
  wv.n_control = static_cast<Index>(rc.size());
  wv.max_gap = sol.max_gap;
  wv.iterations = sol.iterations;
  for (Index i : rt) wv.weights[i] = 1.0;
  for (std::size_t r = 0; r < rc.size(); ++r) wv.weights[rc[r]] = sol.weights[static_cast<Index>(r)] * static_cast<double>(rt.size());
  wv.balance = balance_diagnostics(data, treat, covars, &wv.weights);
  return wv;
}

WeightVector entropy_balance_yearly(const PanelDataset& data, const std::string& treat,
                                    const std::vector<std::string>& covars, std::span<const int> years, double tol) {
  check_binary_treat(data, treat);
  if (years.empty()) throw ConfigError("yearly entropy balancing needs at least one year");
  std::map<std::string, std::pair<double, int>> firm_sum;
  WeightVector wv;
  wv.method = WeightMethod::eb;
  for (int y : years) {
    Mask in(data.rows());
    for (Index i = 0; i < data.rows(); ++i) in[i] = data.years()[static_cast<std::size_t>(i)] == y;
    const auto rows = rows_where(in);
    const PanelDataset sub = data.select(rows);
    const auto w = entropy_balance(sub, treat, covars, tol);
    wv.max_gap = std::max(wv.max_gap, w.max_gap);
    wv.iterations = std::max(wv.iterations, w.iterations);
    for (Index i = 0; i < sub.rows(); ++i) {
      if (!sub.column(treat).has(i) || sub.column(treat).values[i] == 1.0 || w.weights[i] == 0.0) continue;
      auto& [s, c] = firm_sum[sub.firms()[static_cast<std::size_t>(i)]];
      s += w.weights[i];
      ++c;
    }
  }
  wv.weights = Vector::Zero(data.rows());
  std::set<std::string> defaulted;
  std::set<std::string> treated_firms, control_firms;
  for (Index i = 0; i < data.rows(); ++i) {
    const auto& t = data.column(treat);
    if (!t.has(i)) continue;
    const auto& f = data.firms()[static_cast<std::size_t>(i)];
    if (t.values[i] == 1.0) {
      wv.weights[i] = 1.0;
      treated_firms.insert(f);
      continue;
    }
    control_firms.insert(f);
    auto it = firm_sum.find(f);
    if (it == firm_sum.end()) {
      wv.weights[i] = 1.0;
      defaulted.insert(f);
    } else {
      wv.weights[i] = it->second.first / it->second.second;
    }
  }
  wv.n_treated = static_cast<Index>(treated_firms.size());
  wv.n_control = static_cast<Index>(control_firms.size());
  wv.defaulted_firms = static_cast<Index>(defaulted.size());
  wv.balance = balance_diagnostics(data, treat, covars, &wv.weights);
  return wv;
}

nlohmann::json HeckmanSpec::to_json() const {
  return {{"selection_outcome", selection_outcome}, {"regressors", regressors}, {"instruments", instruments}};
}

HeckmanSpec HeckmanSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("heckman spec must be an object");
  HeckmanSpec s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "selection_outcome") s.selection_outcome = v.get<std::string>();
      else if (key == "regressors") s.regressors = v.get<std::vector<std::string>>();
      else if (key == "instruments") s.instruments = v.get<std::vector<std::string>>();
      else throw ConfigError("unknown heckman key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("heckman spec: ") + e.what());
  }
  return s;
}

nlohmann::json HeckmanResult::to_json() const {
  return {{"first_stage", first_stage.to_json()},
          {"second_stage", second_stage.to_json()},
          {"imr", {{"estimate", imr_coef}, {"p", imr_p}, {"clamped", clamped}}},
          {"warnings", warnings}};
}

HeckmanResult heckman_two_stage(const PanelDataset& data, const HeckmanSpec& selection, const DidSpec& outcome) {
  if (selection.instruments.empty()) throw ConfigError("heckman: at least one instrument is required");
  for (const auto& z : selection.instruments) {
    if (std::find(selection.regressors.begin(), selection.regressors.end(), z) == selection.regressors.end())
      throw ConfigError("heckman: instrument " + z + " must appear in the selection equation");
    if (std::find(outcome.controls.begin(), outcome.controls.end(), z) != outcome.controls.end())
      throw ConfigError("heckman: instrument " + z + " must not appear in the outcome equation");
  }
  outcome.validate(data);
  if (!data.has_column(selection.selection_outcome))
    throw DataError("heckman: missing selection outcome " + selection.selection_outcome);
  const PanelDataset d = add_did_terms(data, outcome);

  HeckmanResult res;
  res.first_stage = binary_mle(d, selection.selection_outcome, selection.regressors, Link::probit, outcome.cluster);
  const Index n = static_cast<Index>(res.first_stage.rows.size());
  Matrix Z(n, static_cast<Index>(selection.regressors.size()));
  for (Index i = 0; i < n; ++i)
    for (std::size_t j = 0; j < selection.regressors.size(); ++j)
      Z(i, static_cast<Index>(j)) = d.column(selection.regressors[j]).values[res.first_stage.rows[static_cast<std::size_t>(i)]];
  const Vector eta = res.first_stage.linear_index(Z);
  static const double z_floor = stats::normal_quantile(1e-12);
  res.imr = Column(d.rows());
  for (Index i = 0; i < n; ++i) {
    const Index row = res.first_stage.rows[static_cast<std::size_t>(i)];
    if (d.column(selection.selection_outcome).values[row] != 1.0) continue;
    double z = eta[i];
    if (z < z_floor) {
      z = z_floor;
      ++res.clamped;
    }
    res.imr.set(row, inverse_mills(z));
  }
  if (res.clamped > 0)
    res.warnings.push_back(std::to_string(res.clamped) + " selected rows had Phi(index) < 1e-12; inverse Mills ratio clamped");

  DidSpec second = outcome;
  second.controls.push_back("IMR");
  res.second_stage = did_estimate(d.with_column("IMR", res.imr), second);
  if (res.second_stage.has("IMR")) {
    res.imr_coef = res.second_stage.coef("IMR");
    res.imr_p = res.second_stage.p("IMR");
  } else {
    res.imr_coef = res.imr_p = std::nan("");
    res.warnings.push_back("IMR dropped from the second stage as collinear");
  }
  return res;
}

RegressionResult moderated_did(const PanelDataset& data, const DidSpec& spec, const std::string& moderator,
                               bool demean_moderator) {
  if (!data.has_column(moderator)) throw DataError("missing moderator column " + moderator);
  PanelDataset d = data;
  if (demean_moderator) {
    Column c = data.column(moderator);
    double s = 0;
    Index k = 0;
    for (Index i = 0; i < c.size(); ++i)
      if (c.has(i)) {
        s += c.values[i];
        ++k;
      }
    if (k == 0) throw DataError("moderator " + moderator + " has no observations");
    for (Index i = 0; i < c.size(); ++i)
      if (c.has(i)) c.values[i] -= s / static_cast<double>(k);
    d = d.with_column(moderator, c);
  }
  DidSpec s = spec;
  s.interaction_terms = {moderator};
  return did_estimate(d, s);
}

nlohmann::json SubsampleComparison::to_json() const {
  auto coef = [](const RegressionResult& r) -> nlohmann::json {
    if (!r.has(kDidTerm)) return nullptr;
    return {{"estimate", r.coef(kDidTerm)}, {"se", r.se(kDidTerm)}, {"p", r.p(kDidTerm)},
            {"stars", stats::stars(r.p(kDidTerm))}, {"n_obs", r.n_obs}};
  };
  nlohmann::json j = {{"split", split},
                      {"low", coef(low)},
                      {"high", coef(high)},
                      {"difference", difference},
                      {"n_perm", n_perm},
                      {"failed", failed},
                      {"firms", {{"low", low_firms.size()}, {"high", high_firms.size()}}}};
  j["p"] = p ? nlohmann::json(*p) : nlohmann::json(nullptr);
  return j;
}

SubsampleComparison subsample_compare(const PanelDataset& data, const DidSpec& spec, const std::string& split,
                                      int n_perm, std::uint64_t seed, int threads) {
  if (n_perm < 0) throw ConfigError("split: n_perm must be non-negative");
  if (!data.has_column(split)) throw DataError("missing split column " + split);
  spec.validate(data);
  std::map<std::string, std::pair<double, int>, decltype(&firm_id_less)> pre(&firm_id_less);
  const auto& sc = data.column(split);
  for (Index i = 0; i < data.rows(); ++i) {
    if (!sc.has(i) || data.years()[static_cast<std::size_t>(i)] >= spec.policy_year) continue;
    auto& [s, c] = pre[data.firms()[static_cast<std::size_t>(i)]];
    s += sc.values[i];
    ++c;
  }
  std::vector<std::string> firms;
  std::vector<double> means;
  for (const auto& [f, sc2] : pre) {
    firms.push_back(f);
    means.push_back(sc2.first / sc2.second);
  }
  if (firms.size() < 4) throw DataError("split: too few firms with pre-period values of " + split);
  std::vector<std::size_t> order(firms.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (means[a] != means[b]) return means[a] < means[b];
    return firm_id_less(firms[a], firms[b]);
  });
  const std::size_t n_low = firms.size() / 2;

  auto estimate = [&](const std::vector<std::string>& low_set, RegressionResult* lo, RegressionResult* hi) {
    const std::set<std::string> low(low_set.begin(), low_set.end());
    const std::set<std::string> all(firms.begin(), firms.end());
    Mask ml(data.rows()), mh(data.rows());
    for (Index i = 0; i < data.rows(); ++i) {
      const auto& f = data.firms()[static_cast<std::size_t>(i)];
      ml[i] = low.count(f) > 0;
      mh[i] = !ml[i] && all.count(f) > 0;
    }
    *lo = did_estimate(data.filter(ml), spec);
    *hi = did_estimate(data.filter(mh), spec);
    if (!lo->has(kDidTerm) || !hi->has(kDidTerm)) throw EstimationError("split: DID term dropped in a subsample");
    return lo->coef(kDidTerm) - hi->coef(kDidTerm);
  };

  SubsampleComparison res;
  res.split = split;
  res.n_perm = n_perm;
  for (std::size_t r = 0; r < order.size(); ++r) (r < n_low ? res.low_firms : res.high_firms).push_back(firms[order[r]]);
  try {
    res.difference = estimate(res.low_firms, &res.low, &res.high);
  } catch (const EstimationError& e) {
    throw EstimationError(std::string("split: subsample too small to estimate: ") + e.what());
  }
  if (n_perm == 0) return res;

  std::vector<double> diffs(static_cast<std::size_t>(n_perm), std::nan(""));
  parallel_for(diffs.size(), resolve_threads(threads), [&](std::size_t d) {
    Rng rng = make_rng(seed, d);
    std::vector<std::string> perm = firms;
    std::shuffle(perm.begin(), perm.end(), rng);
    perm.resize(n_low);
    RegressionResult lo, hi;
    try {
      diffs[d] = estimate(perm, &lo, &hi);
    } catch (const EstimationError&) {
    } catch (const DataError&) {
    }
  });
  Index extreme = 0, ok = 0;
  for (double v : diffs) {
    if (std::isnan(v)) {
      ++res.failed;
      continue;
    }
    ++ok;
    extreme += std::abs(v) >= std::abs(res.difference);
  }
  if (ok > 0) res.p = static_cast<double>(extreme) / static_cast<double>(ok);
  return res;
}

}  // namespace panelcausal
