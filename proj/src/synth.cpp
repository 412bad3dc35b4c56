#include "panelcausal/synth.hpp"

#include "panelcausal/error.hpp"
#include "panelcausal/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

namespace panelcausal {

namespace {

struct ControlShape {
  double location, scale;
};

const std::vector<ControlShape> kControlShapes = {{22.0, 1.2}, {0.42, 0.2}, {0.04, 0.06}, {1.8, 1.0},
                                                  {0.5, 0.15}, {2.0, 1.0},  {2.2, 0.7}};

const std::vector<std::pair<Preset, std::string>> kPresetNames = {{Preset::did_parallel, "did_parallel"},
                                                                  {Preset::did_violated_pretrend, "did_violated_pretrend"},
                                                                  {Preset::selection, "selection"},
                                                                  {Preset::sur_system, "sur_system"},
                                                                  {Preset::persistence, "persistence"}};

std::string label(const char* prefix, int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, k + 1);
  return buf;
}

std::string firm_label(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", i + 1);
  return buf;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("sur_error_corr must be a non-empty array of rows");
  const auto m = static_cast<Index>(j.size());
  Matrix out(m, m);
  for (Index r = 0; r < m; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != m) throw ConfigError("sur_error_corr must be square");
    for (Index c = 0; c < m; ++c) out(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return out;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

nlohmann::json selection_to_json(const SelectionParams& s) {
  return {{"intercept", s.intercept}, {"treat_post", s.treat_post}, {"it_ratio", s.it_ratio}, {"no_entry", s.no_entry}};
}

}  // namespace

std::string to_string(Preset p) {
  for (const auto& [k, v] : kPresetNames)
    if (k == p) return v;
  return "?";
}

Preset preset_from_string(const std::string& s) {
  for (const auto& [k, v] : kPresetNames)
    if (v == s) return k;
  throw ConfigError("unknown preset '" + s + "'");
}

const std::vector<std::string>& control_names() {
  static const std::vector<std::string> names = {"Size", "Lev", "ROA", "Liquid", "Top5", "TobinQ", "ListAge"};
  return names;
}

DgpConfig DgpConfig::for_preset(Preset p) {
  DgpConfig c;
  c.preset = p;
  switch (p) {
    case Preset::did_parallel:
    case Preset::did_violated_pretrend:
      break;
    case Preset::selection:
      c.selection_rho = 0.5;
      break;
    case Preset::sur_system:
      c.sur_error_corr = Matrix::Constant(4, 4, 0.3);
      c.sur_error_corr.diagonal().setOnes();
      break;
    case Preset::persistence:
      c.washing_signal = 0.0;
      c.residual_ar = 0.5;
      break;
  }
  return c;
}

std::vector<int> DgpConfig::years() const {
  std::vector<int> y;
  for (int t = first_year; t <= last_year; ++t) y.push_back(t);
  return y;
}

void DgpConfig::validate() const {
  std::vector<std::string> errs;
  if (n_firms < 2) errs.push_back("n_firms must be at least 2");
  if (last_year < first_year) errs.push_back("year range is empty");
  if (policy_year <= first_year || policy_year > last_year)
    errs.push_back("policy_year must lie inside the year range with at least one pre-period year");
  if (n_industries < 1 || n_provinces < 1) errs.push_back("need at least one industry and one province");
  if (!(treated_share > 0 && treated_share < 1)) errs.push_back("treated_share must be in (0, 1)");
  if (noise_sd < 0 || residual_sd < 0) errs.push_back("noise scales must be non-negative");
  if (fe_scales.firm < 0 || fe_scales.year < 0 || fe_scales.industry_year < 0 || fe_scales.province_year < 0)
    errs.push_back("fe_scales must be non-negative");
  if (control_coefs.size() != control_names().size())
    errs.push_back("control_coefs needs " + std::to_string(control_names().size()) + " entries");
  if (!(selection_rho >= -1 && selection_rho <= 1)) errs.push_back("selection_rho must be in [-1, 1]");
  if (!(residual_ar >= 0 && residual_ar < 1)) errs.push_back("residual_ar must be in [0, 1)");
  if (!(missing_rate >= 0 && missing_rate < 1)) errs.push_back("missing_rate must be in [0, 1)");
  const Index m = sur_error_corr.rows();
  if (m != sur_error_corr.cols() || m == 0) {
    errs.push_back("sur_error_corr must be square");
  } else {
    if ((sur_error_corr - sur_error_corr.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      errs.push_back("sur_error_corr must be symmetric");
    if ((sur_error_corr.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12)
      errs.push_back("sur_error_corr must have a unit diagonal");
    Eigen::SelfAdjointEigenSolver<Matrix> es(sur_error_corr);
    if (es.eigenvalues().minCoeff() < -1e-10) errs.push_back("sur_error_corr must be positive semi-definite");
    if (static_cast<Index>(sur_coefs.size()) != m) errs.push_back("sur_coefs must match the size of sur_error_corr");
  }
  if (!errs.empty()) {
    std::string msg = "invalid simulation config: ";
    for (std::size_t i = 0; i < errs.size(); ++i) msg += (i ? "; " : "") + errs[i];
    throw ConfigError(msg);
  }
}

nlohmann::json DgpConfig::to_json() const {
  nlohmann::json ev = nlohmann::json::object();
  for (const auto& [tau, v] : event_effects) ev[std::to_string(tau)] = v;
  return {{"preset", to_string(preset)},
          {"n_firms", n_firms},
          {"first_year", first_year},
          {"last_year", last_year},
          {"policy_year", policy_year},
          {"n_industries", n_industries},
          {"n_provinces", n_provinces},
          {"treated_share", treated_share},
          {"beta_treat", beta_treat},
          {"event_effects", ev},
          {"pretrend_slope", pretrend_slope},
          {"noise_sd", noise_sd},
          {"fe_scales",
           {{"firm", fe_scales.firm},
            {"year", fe_scales.year},
            {"industry_year", fe_scales.industry_year},
            {"province_year", fe_scales.province_year}}},
          {"control_coefs", control_coefs},
          {"imbalance", imbalance},
          {"moderation_gamma", moderation_gamma},
          {"selection_rho", selection_rho},
          {"selection", selection_to_json(selection)},
          {"sur_error_corr", matrix_to_json(sur_error_corr)},
          {"sur_coefs", sur_coefs},
          {"residual_ar", residual_ar},
          {"washing_signal", washing_signal},
          {"residual_sd", residual_sd},
          {"validation_coef", validation_coef},
          {"missing_rate", missing_rate},
          {"seed", seed}};
}

DgpConfig DgpConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("simulation config must be an object");
  DgpConfig c = for_preset(preset_from_string(j.value("preset", std::string("did_parallel"))));
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "preset") continue;
      else if (key == "n_firms") c.n_firms = v.get<int>();
      else if (key == "first_year") c.first_year = v.get<int>();
      else if (key == "last_year") c.last_year = v.get<int>();
      else if (key == "years") {
        const auto r = v.get<std::vector<int>>();
        if (r.size() != 2) throw ConfigError("years must be [first, last]");
        c.first_year = r[0];
        c.last_year = r[1];
      } else if (key == "policy_year") c.policy_year = v.get<int>();
      else if (key == "n_industries") c.n_industries = v.get<int>();
      else if (key == "n_provinces") c.n_provinces = v.get<int>();
      else if (key == "treated_share") c.treated_share = v.get<double>();
      else if (key == "beta_treat") c.beta_treat = v.get<double>();
      else if (key == "event_effects") {
        c.event_effects.clear();
        for (const auto& [tau, e] : v.items()) c.event_effects[std::stoi(tau)] = e.get<double>();
      } else if (key == "pretrend_slope") c.pretrend_slope = v.get<double>();
      else if (key == "noise_sd") c.noise_sd = v.get<double>();
      else if (key == "fe_scales") {
        c.fe_scales.firm = v.value("firm", c.fe_scales.firm);
        c.fe_scales.year = v.value("year", c.fe_scales.year);
        c.fe_scales.industry_year = v.value("industry_year", c.fe_scales.industry_year);
        c.fe_scales.province_year = v.value("province_year", c.fe_scales.province_year);
      } else if (key == "control_coefs") c.control_coefs = v.get<std::vector<double>>();
      else if (key == "imbalance") c.imbalance = v.get<double>();
      else if (key == "moderation_gamma") c.moderation_gamma = v.get<double>();
      else if (key == "selection_rho") c.selection_rho = v.get<double>();
      else if (key == "selection") {
        c.selection.intercept = v.value("intercept", c.selection.intercept);
        c.selection.treat_post = v.value("treat_post", c.selection.treat_post);
        c.selection.it_ratio = v.value("it_ratio", c.selection.it_ratio);
        c.selection.no_entry = v.value("no_entry", c.selection.no_entry);
      } else if (key == "sur_error_corr") c.sur_error_corr = matrix_from_json(v);
      else if (key == "sur_coefs") c.sur_coefs = v.get<std::vector<double>>();
      else if (key == "residual_ar") c.residual_ar = v.get<double>();
      else if (key == "washing_signal") c.washing_signal = v.get<double>();
      else if (key == "residual_sd") c.residual_sd = v.get<double>();
      else if (key == "validation_coef") c.validation_coef = v.get<double>();
      else if (key == "missing_rate") c.missing_rate = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown simulation key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json GroundTruth::to_json() const {
  nlohmann::json labels = nlohmann::json::object();
  for (std::size_t i = 0; i < firms.size(); ++i) labels[firms[i]] = treat[i];
  nlohmann::json path = nlohmann::json::object();
  for (const auto& [tau, v] : event_path) path[std::to_string(tau)] = v;
  nlohmann::json controls = nlohmann::json::object();
  for (std::size_t k = 0; k < control_coefs.size(); ++k) controls[control_names()[k]] = control_coefs[k];
  return {{"preset", to_string(preset)},
          {"treat", labels},
          {"treated_share", treated_share},
          {"beta_treat", beta_treat},
          {"policy_year", policy_year},
          {"event_path", path},
          {"control_coefs", controls},
          {"moderation_gamma", moderation_gamma},
          {"selection", {{"rho", selection_rho}, {"gamma", selection_to_json(selection)}, {"rate", selection_rate}}},
          {"sur", {{"sigma", matrix_to_json(sur_sigma)}, {"coefficients", sur_coefs}}},
          {"residual",
           {{"ar", residual_ar}, {"lag1_corr", residual_lag1_corr}, {"spearman", residual_spearman}}},
          {"validation_coef", validation_coef}};
}

double gaussian_spearman(double r) { return 6.0 / std::numbers::pi * std::asin(r / 2.0); }

Simulated generate_panel(const DgpConfig& cfg) {
  cfg.validate();
  const int N = cfg.n_firms;
  const std::vector<int> years = cfg.years();
  const int T = static_cast<int>(years.size());
  const Index n = static_cast<Index>(N) * T;
  const auto nc = static_cast<Index>(control_names().size());
  const bool violated = cfg.preset == Preset::did_violated_pretrend;
  const bool selection = cfg.preset == Preset::selection;
  const bool sur = cfg.preset == Preset::sur_system;
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud;

  // Effects shared across firms come from substream 0, the treated set from
  // substream 1, everything firm-specific from substream 2 + firm index.
  Rng common = make_rng(cfg.seed, 0);
  Vector year_fe(T);
  for (int t = 0; t < T; ++t) year_fe[t] = cfg.fe_scales.year * nd(common);
  Matrix ind_year(cfg.n_industries, T), prov_year(cfg.n_provinces, T), word_ind(cfg.n_industries, T);
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < cfg.n_industries; ++k) ind_year(k, t) = cfg.fe_scales.industry_year * nd(common);
    for (int k = 0; k < cfg.n_provinces; ++k) prov_year(k, t) = cfg.fe_scales.province_year * nd(common);
    for (int k = 0; k < cfg.n_industries; ++k) word_ind(k, t) = 0.5 * nd(common);
  }
  const Vector word_coefs{{0.05, 0.2, 0.5, 0.02, -0.1, 0.03, 0.05}};

  std::vector<int> treat(static_cast<std::size_t>(N), 0);
  {
    Rng r = make_rng(cfg.seed, 1);
    std::vector<int> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), r);
    const int n_treat = std::clamp(static_cast<int>(std::lround(cfg.treated_share * N)), 1, N - 1);
    for (int k = 0; k < n_treat; ++k) treat[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = 1;
  }
  const double share = std::accumulate(treat.begin(), treat.end(), 0.0) / N;

  GroundTruth truth;
  truth.preset = cfg.preset;
  truth.treated_share = share;
  truth.beta_treat = cfg.beta_treat;
  truth.policy_year = cfg.policy_year;
  truth.control_coefs = cfg.control_coefs;
  truth.moderation_gamma = cfg.moderation_gamma;
  truth.selection_rho = cfg.selection_rho;
  truth.selection = cfg.selection;
  truth.sur_sigma = cfg.sur_error_corr * (cfg.noise_sd * cfg.noise_sd);
  truth.sur_coefs = cfg.sur_coefs;
  truth.residual_ar = cfg.residual_ar;
  truth.validation_coef = cfg.validation_coef;
  {
    const double off = cfg.washing_signal * cfg.washing_signal * share * (1 - share);
    const double s2 = cfg.residual_sd * cfg.residual_sd;
    truth.residual_lag1_corr = off + s2 > 0 ? (off + cfg.residual_ar * s2) / (off + s2) : 0.0;
    truth.residual_spearman = gaussian_spearman(truth.residual_lag1_corr);
  }
  for (int tau = cfg.first_year - cfg.policy_year; tau <= cfg.last_year - cfg.policy_year; ++tau) {
    double e;
    if (!cfg.event_effects.empty()) {
      auto it = cfg.event_effects.find(tau);
      e = it == cfg.event_effects.end() ? 0.0 : it->second;
    } else {
      e = tau >= 0 ? cfg.beta_treat : 0.0;
      if (violated) e += cfg.pretrend_slope * (tau + 1);
    }
    truth.event_path[tau] = e;
  }

  Eigen::LLT<Matrix> chol_llt(cfg.sur_error_corr);
  Matrix sur_chol;
  if (chol_llt.info() == Eigen::Success) {
    sur_chol = chol_llt.matrixL();
  } else {
    // Semi-definite: factor through the eigen decomposition.
    Eigen::SelfAdjointEigenSolver<Matrix> es(cfg.sur_error_corr);
    sur_chol = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  const Index m_sur = cfg.sur_error_corr.rows();

  std::vector<std::string> firm_col(static_cast<std::size_t>(n)), ind_col(static_cast<std::size_t>(n)),
      prov_col(static_cast<std::size_t>(n));
  std::vector<int> year_col(static_cast<std::size_t>(n));
  Matrix controls(n, nc);
  Mask control_missing = Mask::Constant(n * nc, false);
  Vector y(n), treat_col(n), mshare(n), it_ratio(n), no_entry(n), st(n), patent(n), patent_app(n), patent_stock(n),
      word(n), resid(n), violation(n), innov_sub(n), inquiry(n), selected(n);
  Matrix sur_y(n, m_sur);

  parallel_for(static_cast<std::size_t>(N), 1, [&](std::size_t fi) {
    const int i = static_cast<int>(fi);
    Rng r = make_rng(cfg.seed, 2 + fi);
    const int ind = std::uniform_int_distribution<int>(0, cfg.n_industries - 1)(r);
    const int prov = std::uniform_int_distribution<int>(0, cfg.n_provinces - 1)(r);
    const double alpha = cfg.fe_scales.firm * nd(r);
    const double innov = nd(r);
    const double ms = 0.5 * ud(r);
    Vector firm_mean(nc);
    for (Index k = 0; k < nc; ++k) firm_mean[k] = nd(r) + cfg.imbalance * treat[fi];
    Vector sur_alpha(m_sur);
    for (Index k = 0; k < m_sur; ++k) sur_alpha[k] = cfg.fe_scales.firm * nd(r);
    const double offset = cfg.washing_signal * (treat[fi] - share);
    double e_prev = cfg.residual_sd * nd(r);
    double stock = 0;
    for (int t = 0; t < T; ++t) {
      const Index row = static_cast<Index>(i) * T + t;
      const auto ur = static_cast<std::size_t>(row);
      firm_col[ur] = firm_label(i);
      ind_col[ur] = label("IND", ind);
      prov_col[ur] = label("PRV", prov);
      year_col[ur] = years[static_cast<std::size_t>(t)];
      const int tau = years[static_cast<std::size_t>(t)] - cfg.policy_year;
      const double post = tau >= 0 ? 1.0 : 0.0;
      const double tp = treat[fi] * post;

      double xb = 0;
      for (Index k = 0; k < nc; ++k) {
        const auto& shape = kControlShapes[static_cast<std::size_t>(k)];
        controls(row, k) = shape.location + shape.scale * (firm_mean[k] + 0.5 * nd(r)) / std::sqrt(1.25);
        xb += cfg.control_coefs[static_cast<std::size_t>(k)] * controls(row, k);
        if (cfg.missing_rate > 0 && ud(r) < cfg.missing_rate) control_missing[row * nc + k] = true;
      }
      treat_col[row] = treat[fi];
      mshare[row] = ms;
      it_ratio[row] = 0.3 + 0.15 * nd(r);
      no_entry[row] = ud(r) < 0.3 ? 1.0 : 0.0;
      st[row] = ud(r) < 0.02 ? 1.0 : 0.0;

      const double e = t == 0 ? e_prev
                              : cfg.residual_ar * e_prev +
                                    std::sqrt(1 - cfg.residual_ar * cfg.residual_ar) * cfg.residual_sd * nd(r);
      e_prev = e;
      const double u = offset + e;
      resid[row] = u;
      const double lambda = std::exp(0.2 + 0.6 * innov + 0.1 * (controls(row, 0) - 22.0));
      const double flow = std::poisson_distribution<int>(lambda)(r);
      const double extra = std::poisson_distribution<int>(0.5 * lambda)(r);
      stock += flow;
      patent[row] = std::log1p(flow);
      patent_app[row] = std::log1p(flow + extra);
      patent_stock[row] = std::log1p(stock);
      double w = 0.5 * patent[row] + word_ind(ind, t) + u;
      for (Index k = 0; k < nc; ++k) w += word_coefs[k] * controls(row, k);
      word[row] = w;
      violation[row] = (-1.0 + cfg.validation_coef * u + nd(r)) > 0 ? 1.0 : 0.0;
      innov_sub[row] = (-0.5 + cfg.validation_coef * u + 0.3 * innov + nd(r)) > 0 ? 1.0 : 0.0;
      inquiry[row] = (-1.2 + cfg.validation_coef * u + nd(r)) > 0 ? 1.0 : 0.0;

      const double base = alpha + year_fe[t] + ind_year(ind, t) + prov_year(prov, t) + xb +
                          truth.event_path.at(tau) * treat[fi] + cfg.moderation_gamma * tp * ms;
      if (selection) {
        const double v = nd(r);
        const double eps = nd(r);
        const auto& g = cfg.selection;
        const double s = g.intercept + g.treat_post * tp + g.it_ratio * it_ratio[row] + g.no_entry * no_entry[row] + v;
        selected[row] = s > 0 ? 1.0 : 0.0;
        y[row] = base + cfg.noise_sd * (cfg.selection_rho * v + std::sqrt(1 - cfg.selection_rho * cfg.selection_rho) * eps);
      } else {
        y[row] = base + cfg.noise_sd * nd(r);
      }
      if (sur) {
        Vector z(m_sur);
        for (Index k = 0; k < m_sur; ++k) z[k] = nd(r);
        const Vector err = cfg.noise_sd * (sur_chol * z);
        for (Index k = 0; k < m_sur; ++k)
          sur_y(row, k) = sur_alpha[k] + xb + cfg.sur_coefs[static_cast<std::size_t>(k)] * tp + err[k];
      }
    }
  });

  PanelDataset d(firm_col, year_col, ind_col, prov_col);
  auto add = [&](const std::string& name, const Vector& v, VariableRole role = VariableRole::regressor) {
    d = d.with_column(name, Column(v), VariableDef{name, role, Transform::none, ""});
  };
  Column outcome(y);
  if (selection) {
    for (Index i = 0; i < n; ++i)
      if (selected[i] == 0.0) outcome.clear(i);
    truth.selection_rate = selected.mean();
  }
  d = d.with_column("Debt_FC", outcome, VariableDef{"Debt_FC", VariableRole::outcome, Transform::none, "ratio"});
  add("Treat", treat_col, VariableRole::flag);
  add("AI_Word", word);
  add("AI_Patent", patent);
  add("AI_Patent_Stock", patent_stock);
  add("AI_Patent_App", patent_app);
  for (Index k = 0; k < nc; ++k) {
    Column c(Vector(controls.col(k)));
    for (Index i = 0; i < n; ++i)
      if (control_missing[i * nc + k]) c.clear(i);
    const auto& name = control_names()[static_cast<std::size_t>(k)];
    d = d.with_column(name, c, VariableDef{name, VariableRole::regressor, Transform::none, ""});
  }
  add("Mshare", mshare, VariableRole::moderator);
  add("IT_ratio", it_ratio);
  add("no_entry", no_entry);
  add("ST", st, VariableRole::flag);
  add("Violation", violation, VariableRole::outcome);
  add("Innov_Sub", innov_sub, VariableRole::outcome);
  add("Inquiry", inquiry, VariableRole::outcome);
  add("planted_residual", resid);
  if (selection) add("Selected", selected, VariableRole::outcome);
  if (sur) {
    static const std::vector<std::string> names = {"Cost", "Flow", "Word", "Patent"};
    for (Index k = 0; k < m_sur; ++k) {
      const std::string name = k < 4 ? names[static_cast<std::size_t>(k)] : "Y" + std::to_string(k + 1);
      add(name, sur_y.col(k), VariableRole::outcome);
    }
  }

  truth.firms.reserve(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) truth.firms.push_back(firm_label(i));
  truth.treat = treat;
  return {std::move(d), std::move(truth)};
}

void write_simulation(const Simulated& sim, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  write_panel(sim.data, dir / "panel.csv");
  std::ofstream out(dir / "ground_truth.json");
  if (!out) throw Error("cannot write " + (dir / "ground_truth.json").string());
  out << sim.truth.to_json().dump(2) << "\n";
}

}  // namespace panelcausal
