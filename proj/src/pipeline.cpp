#include "panelcausal/pipeline.hpp"

#include "panelcausal/binary.hpp"
#include "panelcausal/error.hpp"
#include "panelcausal/parallel.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace panelcausal {

namespace {

using json = nlohmann::json;

const char* kVersion = "1.0.0";

// Fixed substream per randomized stage so toggling one stage leaves the
// others' draws alone.
enum StageStream : std::uint64_t { kPlaceboStream = 1, kPsmStream = 2, kSplitStream = 100 };

template <typename T>
T as(const json& v, const std::string& where) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + " has the wrong type");
  }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : obj.items())
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) == allowed.end())
      throw ConfigError("unknown key '" + k + "' in " + where);
}

// `true`/`false`, or an object of settings meaning enabled.
bool toggle(const json& v, const std::string& where) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_object()) return true;
  throw ConfigError(where + " must be a boolean or an object");
}

InputConfig parse_input(const json& j) {
  reject_unknown(j, {"csv", "synthetic"}, "input");
  InputConfig in;
  if (j.contains("csv")) in.csv = as<std::string>(j["csv"], "input.csv");
  if (j.contains("synthetic")) in.synthetic = DgpConfig::from_json(j["synthetic"]);
  if (in.csv.has_value() == in.synthetic.has_value())
    throw ConfigError("input needs exactly one of 'csv' and 'synthetic'");
  return in;
}

WashingConfig parse_washing(const json& j) {
  reject_unknown(j, {"enabled", "pre_years", "patent_mode", "controls", "treatment"}, "washing");
  WashingConfig w;
  w.enabled = true;
  if (j.contains("enabled")) w.enabled = as<bool>(j["enabled"], "washing.enabled");
  if (j.contains("pre_years")) w.pre_years = as<std::vector<int>>(j["pre_years"], "washing.pre_years");
  if (j.contains("patent_mode")) w.patent_mode = patent_mode_from_string(as<std::string>(j["patent_mode"], "washing.patent_mode"));
  if (j.contains("controls")) w.controls = as<std::vector<std::string>>(j["controls"], "washing.controls");
  if (j.contains("treatment")) w.treatment = as<std::string>(j["treatment"], "washing.treatment");
  if (w.treatment != "input") assignment_mode_from_string(w.treatment);
  return w;
}

RobustnessConfig parse_robustness(const json& j) {
  reject_unknown(j,
                 {"psm", "eb", "heckman", "placebo", "event_study", "intensity", "quantile", "z_difference", "strict",
                  "single_year", "validation", "exclude_years", "policy_controls", "balance_covariates", "split_perm"},
                 "robustness");
  RobustnessConfig r;
  std::vector<std::string> errors;
  auto field = [&](const char* key, auto&& apply) {
    if (!j.contains(key)) return;
    try {
      apply(j[key], std::string("robustness.") + key);
    } catch (const ConfigError& e) {
      errors.push_back(e.what());
    }
  };
  field("psm", [&](const json& v, const std::string& w) {
    r.psm = toggle(v, w);
    if (v.is_object()) {
      reject_unknown(v, {"k", "caliper"}, w);
      if (v.contains("k")) r.psm_k = as<int>(v["k"], w + ".k");
      if (v.contains("caliper")) r.psm_caliper = as<double>(v["caliper"], w + ".caliper");
    }
    if (r.psm_k < 1) throw ConfigError(w + ".k must be at least 1");
    if (!(r.psm_caliper >= 0)) throw ConfigError(w + ".caliper must be non-negative");
  });
  field("eb", [&](const json& v, const std::string& w) { r.eb = as<bool>(v, w); });
  field("heckman", [&](const json& v, const std::string& w) {
    r.heckman = toggle(v, w);
    if (v.is_object()) r.heckman_spec = HeckmanSpec::from_json(v);
  });
  field("placebo", [&](const json& v, const std::string& w) {
    r.placebo = as<int>(v, w);
    if (r.placebo < 0) throw ConfigError(w + " must be non-negative");
  });
  field("event_study", [&](const json& v, const std::string& w) {
    r.event_study = toggle(v, w);
    if (v.is_object()) {
      reject_unknown(v, {"tau_min", "tau_max"}, w);
      if (v.contains("tau_min")) r.tau_min = as<int>(v["tau_min"], w + ".tau_min");
      if (v.contains("tau_max")) r.tau_max = as<int>(v["tau_max"], w + ".tau_max");
    }
    if (!(r.tau_min < -1 && -1 < r.tau_max)) throw ConfigError(w + " window must contain -1 strictly inside");
  });
  field("intensity", [&](const json& v, const std::string& w) { r.intensity = as<bool>(v, w); });
  field("quantile", [&](const json& v, const std::string& w) { r.quantile = as<bool>(v, w); });
  field("z_difference", [&](const json& v, const std::string& w) { r.z_difference = as<bool>(v, w); });
  field("strict", [&](const json& v, const std::string& w) { r.strict = as<bool>(v, w); });
  field("single_year", [&](const json& v, const std::string& w) { r.single_year = as<bool>(v, w); });
  field("validation", [&](const json& v, const std::string& w) {
    r.validation = toggle(v, w);
    if (v.is_object()) {
      reject_unknown(v, {"outcomes"}, w);
      if (v.contains("outcomes")) r.validation_outcomes = as<std::vector<std::string>>(v["outcomes"], w + ".outcomes");
    }
  });
  field("exclude_years", [&](const json& v, const std::string& w) { r.exclude_years = as<std::vector<int>>(v, w); });
  field("policy_controls",
        [&](const json& v, const std::string& w) { r.policy_controls = as<std::vector<std::string>>(v, w); });
  field("balance_covariates",
        [&](const json& v, const std::string& w) { r.balance_covariates = as<std::vector<std::string>>(v, w); });
  field("split_perm", [&](const json& v, const std::string& w) {
    r.split_perm = as<int>(v, w);
    if (r.split_perm < 0) throw ConfigError(w + " must be non-negative");
  });
  if (!errors.empty()) {
    std::string msg = errors.front();
    for (std::size_t k = 1; k < errors.size(); ++k) msg += "; " + errors[k];
    throw ConfigError(msg);
  }
  return r;
}

SurConfig parse_sur(const json& j) {
  if (!j.is_object()) throw ConfigError("sur must be an object");
  SurConfig s;
  s.enabled = true;
  json base = default_sur_system({}).spec_json();
  base["equations"] = json::array();
  for (const auto& [k, v] : j.items()) {
    if (k == "enabled") s.enabled = as<bool>(v, "sur.enabled");
    else if (k == "term") s.term = as<std::string>(v, "sur.term");
    else if (k == "signs") s.signs = as<std::vector<double>>(v, "sur.signs");
    else base[k] = v;
  }
  s.system = SurSystem::from_json(base);
  s.default_system = s.system.equations.empty();
  const std::size_t m = s.default_system ? 4 : s.system.equations.size();
  if (s.signs.size() != m) throw ConfigError("sur.signs needs one entry per equation");
  for (double x : s.signs)
    if (x != 1.0 && x != -1.0) throw ConfigError("sur.signs entries must be 1 or -1");
  return s;
}

std::string joined(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

json coefficient_json(const RegressionResult& fit, const std::string& name) {
  if (!fit.has(name)) return nullptr;
  return {{"estimate", fit.coef(name)}, {"se", fit.se(name)}, {"p", fit.p(name)}, {"stars", stats::stars(fit.p(name))}};
}

// DID on a continuous or multi-group treatment: outcome on term x Post
// columns plus controls.
RegressionResult interacted_did(const PanelDataset& data, const DidSpec& did, const std::vector<std::string>& terms,
                                const std::vector<std::string>& names) {
  PanelDataset d = data;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto& src = data.column(terms[k]);
    Column c(data.rows());
    for (Index i = 0; i < data.rows(); ++i)
      if (src.has(i)) c.set(i, src.values[i] * (data.years()[static_cast<std::size_t>(i)] >= did.policy_year ? 1.0 : 0.0));
    d = d.with_column(names[k], c);
  }
  std::vector<std::string> regs = names;
  regs.insert(regs.end(), did.controls.begin(), did.controls.end());
  return ols_cluster(d, did.outcome, regs, did.fe, did.cluster);
}

// Firm-level flag 1[mean of `col` over pre years > 0], broadcast to rows.
Column firm_positive_mean(const PanelDataset& data, const Column& col, const std::vector<int>& pre_years) {
  const std::set<int> pre(pre_years.begin(), pre_years.end());
  std::map<std::string, std::pair<double, int>> acc;
  for (Index i = 0; i < data.rows(); ++i)
    if (col.has(i) && pre.count(data.years()[static_cast<std::size_t>(i)])) {
      auto& [s, n] = acc[data.firms()[static_cast<std::size_t>(i)]];
      s += col.values[i];
      ++n;
    }
  Column out(data.rows());
  for (Index i = 0; i < data.rows(); ++i) {
    auto it = acc.find(data.firms()[static_cast<std::size_t>(i)]);
    if (it != acc.end()) out.set(i, it->second.first / it->second.second > 0 ? 1.0 : 0.0);
  }
  return out;
}

Table balance_table(const std::string& title, const std::vector<BalanceRow>& rows) {
  Table t{title, {"Covariate", "Mean treated", "Mean control", "Mean control (weighted)", "Bias before (%)", "Bias after (%)"}, {}};
  for (const auto& r : rows)
    t.rows.push_back({r.covariate, fixed4(r.mean_treated), fixed4(r.mean_control), fixed4(r.mean_control_weighted),
                      fixed4(r.bias_before), fixed4(r.bias_after)});
  return t;
}

void add_did_result(ReportBundle& bundle, const std::string& stage, const std::string& title,
                    const RegressionResult& fit, json extra = json::object()) {
  extra["did"] = fit.to_json();
  bundle.json[stage] = extra;
  bundle.add_table(stage, coefficient_table(title, fit));
}

const std::vector<std::string>& covariates(const PipelineConfig& cfg) {
  return cfg.robustness.balance_covariates.empty() ? cfg.did.controls : cfg.robustness.balance_covariates;
}

const WashingAssignment& need_assignment(const Prepared& prep) {
  if (!prep.assignment) throw ConfigError("this stage needs the washing section enabled");
  return *prep.assignment;
}

}  // namespace

ScreeningConfig screening_from_json(const json& j) {
  reject_unknown(j, {"drop_sectors", "drop_flags", "required_columns", "winsor_p", "winsorize_columns", "imputable_columns"},
                 "screening");
  ScreeningConfig s;
  if (j.contains("drop_sectors")) s.drop_sectors = as<std::vector<std::string>>(j["drop_sectors"], "screening.drop_sectors");
  if (j.contains("drop_flags")) s.drop_flags = as<std::vector<std::string>>(j["drop_flags"], "screening.drop_flags");
  if (j.contains("required_columns"))
    s.required_columns = as<std::vector<std::string>>(j["required_columns"], "screening.required_columns");
  if (j.contains("winsor_p")) s.winsor_p = as<double>(j["winsor_p"], "screening.winsor_p");
  if (j.contains("winsorize_columns"))
    s.winsorize_columns = as<std::vector<std::string>>(j["winsorize_columns"], "screening.winsorize_columns");
  if (j.contains("imputable_columns"))
    s.imputable_columns = as<std::vector<std::string>>(j["imputable_columns"], "screening.imputable_columns");
  if (!(s.winsor_p > 0 && s.winsor_p < 0.5)) throw ConfigError("screening.winsor_p must lie strictly between 0 and 0.5");
  return s;
}

json screening_to_json(const ScreeningConfig& s) {
  return {{"drop_sectors", s.drop_sectors},         {"drop_flags", s.drop_flags},
          {"required_columns", s.required_columns}, {"winsor_p", s.winsor_p},
          {"winsorize_columns", s.winsorize_columns}, {"imputable_columns", s.imputable_columns}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
  PipelineConfig c;
  std::vector<std::string> errors;
  bool have_input = false;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "input") {
        c.input = parse_input(v);
        have_input = true;
      } else if (key == "screening") c.screening = screening_from_json(v);
      else if (key == "washing") c.washing = parse_washing(v);
      else if (key == "did") c.did = DidSpec::from_json(v);
      else if (key == "robustness") c.robustness = parse_robustness(v);
      else if (key == "sur") c.sur = parse_sur(v);
      else if (key == "moderation") c.moderation = as<std::vector<std::string>>(v, "moderation");
      else if (key == "heterogeneity") c.heterogeneity = as<std::vector<std::string>>(v, "heterogeneity");
      else if (key == "describe") c.describe = as<std::vector<std::string>>(v, "describe");
      else if (key == "seed") c.seed = as<std::uint64_t>(v, "seed");
      else if (key == "threads") {
        c.threads = as<int>(v, "threads");
        if (c.threads < 0) throw ConfigError("threads must be non-negative");
      } else if (key == "output") c.output = as<std::string>(v, "output");
      else throw ConfigError("unknown top-level key '" + key + "'");
    } catch (const Error& e) {
      errors.push_back(e.what());
    } catch (const json::exception& e) {
      errors.push_back(key + ": " + e.what());
    }
  }
  if (!have_input) errors.push_back("missing 'input' section");
  try {
    c.did.fe.validate();
  } catch (const Error& e) {
    errors.push_back(std::string("did.fe: ") + e.what());
  }
  const auto& r = c.robustness;
  if (!c.washing.enabled) {
    std::vector<std::string> need;
    if (r.intensity) need.push_back("intensity");
    if (r.quantile) need.push_back("quantile");
    if (r.strict) need.push_back("strict");
    if (r.single_year) need.push_back("single_year");
    if (r.validation) need.push_back("validation");
    if (!need.empty()) errors.push_back("robustness toggles " + joined(need) + " need the washing section");
  }
  if (!errors.empty()) {
    std::string msg = "invalid pipeline config (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() > 1 ? "s" : "") + "):";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  PipelineConfig c = from_json(j);
  if (c.input.csv && c.input.csv->is_relative()) c.input.csv = path.parent_path() / *c.input.csv;
  return c;
}

json PipelineConfig::to_json() const {
  json j;
  if (input.csv) j["input"] = {{"csv", input.csv->generic_string()}};
  else if (input.synthetic) j["input"] = {{"synthetic", input.synthetic->to_json()}};
  if (screening) j["screening"] = screening_to_json(*screening);
  j["washing"] = {{"enabled", washing.enabled},
                  {"pre_years", washing.pre_years},
                  {"patent_mode", to_string(washing.patent_mode)},
                  {"controls", washing.controls},
                  {"treatment", washing.treatment}};
  j["did"] = did.to_json();
  const auto& r = robustness;
  j["robustness"] = {{"psm", {{"k", r.psm_k}, {"caliper", r.psm_caliper}}},
                     {"eb", r.eb},
                     {"heckman", r.heckman_spec.to_json()},
                     {"placebo", r.placebo},
                     {"event_study", {{"tau_min", r.tau_min}, {"tau_max", r.tau_max}}},
                     {"intensity", r.intensity},
                     {"quantile", r.quantile},
                     {"z_difference", r.z_difference},
                     {"strict", r.strict},
                     {"single_year", r.single_year},
                     {"validation", {{"outcomes", r.validation_outcomes}}},
                     {"exclude_years", r.exclude_years},
                     {"policy_controls", r.policy_controls},
                     {"balance_covariates", r.balance_covariates},
                     {"split_perm", r.split_perm}};
  // Object-valued toggles: record the on/off state separately.
  if (!r.psm) j["robustness"]["psm"] = false;
  if (!r.heckman) j["robustness"]["heckman"] = false;
  if (!r.event_study) j["robustness"]["event_study"] = false;
  if (!r.validation) j["robustness"]["validation"] = false;
  json s = sur.system.spec_json();
  if (sur.default_system) s["equations"] = json::array();
  s["enabled"] = sur.enabled;
  s["term"] = sur.term;
  s["signs"] = sur.signs;
  j["sur"] = s;
  j["moderation"] = moderation;
  j["heterogeneity"] = heterogeneity;
  j["describe"] = describe;
  j["seed"] = seed;
  j["threads"] = threads;
  j["output"] = output.generic_string();
  return j;
}

std::string PipelineConfig::hash() const {
  json j = to_json();
  j.erase("threads");
  j.erase("output");
  return fnv1a_hex(canonical_json(j));
}

PanelDataset load_input(const PipelineConfig& cfg) {
  if (cfg.input.csv) return load_panel(*cfg.input.csv);
  if (cfg.input.synthetic) return generate_panel(*cfg.input.synthetic).data;
  throw ConfigError("no input source");
}

Prepared prepare(const PipelineConfig& cfg, ReportBundle* bundle) {
  Prepared prep;
  in_stage("load", [&] {
    if (cfg.input.synthetic) {
      auto sim = generate_panel(*cfg.input.synthetic);
      prep.data = sim.data;
      prep.truth = sim.truth;
    } else {
      prep.data = load_input(cfg);
    }
    if (prep.data.rows() == 0) throw DataError("input panel is empty");
  });
  if (cfg.screening)
    in_stage("screen", [&] {
      ScreeningReport rep;
      prep.data = clean(prep.data, *cfg.screening, &rep);
      prep.screening = rep;
      if (bundle) bundle->json["screening"] = rep.to_json();
    });

  prep.pre_years = cfg.washing.pre_years;
  if (prep.pre_years.empty()) {
    std::set<int> ys;
    for (int y : prep.data.years())
      if (y < cfg.did.policy_year) ys.insert(y);
    prep.pre_years.assign(ys.begin(), ys.end());
  }
  if (!cfg.washing.enabled) return prep;

  in_stage("wash", [&] {
    WashingSpec ws;
    ws.pre_years = prep.pre_years;
    ws.patent_mode = cfg.washing.patent_mode;
    if (!cfg.washing.controls.empty()) ws.controls = cfg.washing.controls;
    ws.threads = resolve_threads(cfg.threads);
    prep.residuals = decoupling_residuals(prep.data, ws);
    prep.data = prep.data.with_column("Residual", prep.residuals);
  });
  in_stage("assign", [&] {
    prep.assignment = assign_treatment(prep.data, prep.residuals, prep.pre_years);
    if (cfg.washing.treatment != "input") {
      const auto mode = assignment_mode_from_string(cfg.washing.treatment);
      prep.data = prep.data.with_column(cfg.did.treat, treatment_column(prep.data, *prep.assignment, mode));
    }
    if (bundle) {
      json w = {{"assignment", prep.assignment->summary()}, {"treatment", cfg.washing.treatment}};
      if (prep.pre_years.size() >= 2) w["persistence"] = persistence_stats(prep.data, prep.residuals).to_json();
      if (prep.truth) {
        // Agreement of assigned and planted labels, synthetic input only.
        Index agree = 0, total = 0;
        for (const auto& f : prep.assignment->firms) {
          const auto it = std::find(prep.truth->firms.begin(), prep.truth->firms.end(), f.firm);
          if (it == prep.truth->firms.end()) continue;
          ++total;
          agree += (prep.truth->treat[static_cast<std::size_t>(it - prep.truth->firms.begin())] == 1) == f.treat_mean;
        }
        w["planted_agreement"] = total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
      }
      bundle->json["washing"] = w;
      bundle->files["assignment.csv"] = assignment_csv(*prep.assignment);
    }
  });
  return prep;
}

std::vector<std::string> pipeline_stages(const PipelineConfig& cfg) {
  const auto& r = cfg.robustness;
  std::vector<std::string> s = {"describe", "baseline"};
  if (r.validation) s.push_back("validation");
  if (r.event_study) s.push_back("event");
  if (r.placebo > 0) s.push_back("placebo");
  if (r.psm) s.push_back("psm");
  if (r.eb) s.push_back("eb");
  if (r.heckman) s.push_back("heckman");
  if (r.intensity) s.push_back("intensity");
  if (r.quantile) s.push_back("quantile");
  if (r.z_difference) s.push_back("z_difference");
  if (r.strict) s.push_back("strict");
  if (r.single_year) s.push_back("single_year");
  if (!r.exclude_years.empty()) s.push_back("exclude_years");
  if (!r.policy_controls.empty()) s.push_back("policy");
  if (!cfg.moderation.empty()) s.push_back("moderation");
  if (!cfg.heterogeneity.empty()) s.push_back("heterogeneity");
  if (cfg.sur.enabled) s.push_back("sur");
  return s;
}

void run_stage(const std::string& stage, const PipelineConfig& cfg, const Prepared& prep, ReportBundle& bundle) {
  const auto& did = cfg.did;
  const auto& r = cfg.robustness;
  const int threads = resolve_threads(cfg.threads);
  in_stage(stage, [&] {
    if (stage == "describe") {
      std::vector<std::string> cols = cfg.describe;
      if (cols.empty()) {
        cols = {did.outcome, kDidTerm};
        cols.insert(cols.end(), did.controls.begin(), did.controls.end());
      }
      const PanelDataset d = add_did_terms(prep.data, did);
      const auto desc = descriptive_table(d, cols);
      const auto corr = correlation_table(d, cols);
      bundle.json["describe"] = {{"descriptive", descriptive_to_json(desc)}, {"correlation", correlation_to_json(corr)}};
      bundle.add_table("table1_descriptive", descriptive_to_table(desc));
      bundle.add_table("table2_correlation", correlation_to_table(corr));
    } else if (stage == "baseline") {
      add_did_result(bundle, "baseline", "Baseline DID", did_estimate(prep.data, did));
    } else if (stage == "validation") {
      const std::set<int> pre(prep.pre_years.begin(), prep.pre_years.end());
      Mask keep(prep.data.rows());
      for (Index i = 0; i < prep.data.rows(); ++i) keep[i] = pre.count(prep.data.years()[static_cast<std::size_t>(i)]) > 0;
      const PanelDataset d = prep.data.filter(keep);
      std::vector<std::string> regs = {"Residual"};
      regs.insert(regs.end(), did.controls.begin(), did.controls.end());
      json out = json::object();
      Table t{"Residual validation (probit)", {"Outcome", "Coefficient", "SE", "AME", "AME SE", "Pseudo R2", "N"}, {}};
      for (const auto& y : r.validation_outcomes) {
        const auto fit = binary_mle(d, y, regs, Link::probit, did.cluster);
        Matrix X(static_cast<Index>(fit.rows.size()), static_cast<Index>(regs.size()));
        for (std::size_t k = 0; k < fit.rows.size(); ++k)
          for (std::size_t j = 0; j < regs.size(); ++j)
            X(static_cast<Index>(k), static_cast<Index>(j)) = d.column(regs[j]).values[fit.rows[k]];
        const auto ames = marginal_effects(fit, X);
        json ame = json::array();
        for (const auto& a : ames)
          ame.push_back({{"name", a.name}, {"effect", a.effect}, {"se", a.se}, {"p", a.p}, {"discrete", a.discrete}});
        out[y] = {{"probit", fit.to_json()}, {"ame", ame}};
        t.rows.push_back({y, fixed4(fit.coef("Residual")) + stats::stars(fit.p("Residual")), "(" + fixed4(fit.se("Residual")) + ")",
                          fixed4(ames.front().effect) + stats::stars(ames.front().p), "(" + fixed4(ames.front().se) + ")",
                          fixed4(fit.pseudo_r2), std::to_string(fit.n_obs)});
      }
      bundle.json["validation"] = out;
      bundle.add_table("validation", t);
    } else if (stage == "event") {
      const auto es = event_study(prep.data, did, r.tau_min, r.tau_max);
      bundle.json["event"] = es.to_json();
      bundle.files["event_study.csv"] = es.csv();
      Table t{"Event study", {"tau", "Estimate", "SE", "95% CI"}, {}};
      for (const auto& c : es.coefficients)
        t.rows.push_back({std::to_string(c.tau), fixed4(c.estimate) + stats::stars(c.p), "(" + fixed4(c.se) + ")",
                          "[" + fixed4(c.lower) + ", " + fixed4(c.upper) + "]"});
      bundle.add_table("event_study", t);
    } else if (stage == "placebo") {
      DidSpec plain = did;
      plain.interaction_terms.clear();
      const auto pl = placebo_permutation(prep.data, plain, r.placebo, substream_seed(cfg.seed, kPlaceboStream), threads);
      bundle.json["placebo"] = pl.to_json();
      bundle.files["placebo_draws.csv"] = pl.csv();
    } else if (stage == "psm") {
      const auto w = psm_match(prep.data, did.treat, covariates(cfg), r.psm_k, r.psm_caliper,
                               substream_seed(cfg.seed, kPsmStream));
      add_did_result(bundle, "psm", "PSM-weighted DID", did_estimate(prep.data, did, &w.weights), {{"weights", w.to_json()}});
      bundle.add_table("balance_psm", balance_table("Covariate balance, PSM", w.balance));
    } else if (stage == "eb") {
      const auto w = entropy_balance_yearly(prep.data, did.treat, covariates(cfg), prep.pre_years);
      add_did_result(bundle, "eb", "Entropy-balanced DID", did_estimate(prep.data, did, &w.weights), {{"weights", w.to_json()}});
      bundle.add_table("balance_eb", balance_table("Covariate balance, entropy balancing", w.balance));
    } else if (stage == "heckman") {
      const auto h = heckman_two_stage(prep.data, r.heckman_spec, did);
      bundle.json["heckman"] = h.to_json();
      auto t = coefficient_table("Heckman second stage", h.second_stage);
      bundle.add_table("heckman", t);
    } else if (stage == "intensity") {
      const auto& a = need_assignment(prep);
      const PanelDataset d = prep.data.with_column("Intensity", encoded_column(prep.data, a, EncodingScheme::raw))
                                 .with_column("Intensity_Std", encoded_column(prep.data, a, EncodingScheme::standardized));
      const auto raw = interacted_did(d, did, {"Intensity"}, {"Intensity_Post"});
      const auto std_fit = interacted_did(d, did, {"Intensity_Std"}, {"Intensity_Std_Post"});
      bundle.json["intensity"] = {{"raw", raw.to_json()}, {"standardized", std_fit.to_json()}};
      bundle.add_table("intensity_raw", coefficient_table("Intensity DID (raw)", raw));
      bundle.add_table("intensity_std", coefficient_table("Intensity DID (standardized)", std_fit));
    } else if (stage == "quantile") {
      const auto& a = need_assignment(prep);
      json out;
      for (const auto scheme : {EncodingScheme::median_split, EncodingScheme::terciles}) {
        const Column groups = encoded_column(prep.data, a, scheme);
        const int top = scheme == EncodingScheme::terciles ? 4 : 3;
        PanelDataset d = prep.data;
        std::vector<std::string> terms, names;
        for (int q = 2; q <= top; ++q) {
          Column ind(d.rows());
          for (Index i = 0; i < d.rows(); ++i)
            if (groups.has(i)) ind.set(i, groups.values[i] == q ? 1.0 : 0.0);
          terms.push_back("Q" + std::to_string(q));
          names.push_back("Q" + std::to_string(q) + "_Post");
          d = d.with_column(terms.back(), ind);
        }
        const auto fit = interacted_did(d, did, terms, names);
        out[to_string(scheme)] = fit.to_json();
        bundle.add_table("quantile_" + to_string(scheme), coefficient_table("Quantile DID (" + to_string(scheme) + ")", fit));
      }
      bundle.json["quantile"] = out;
    } else if (stage == "z_difference") {
      WashingSpec ws;
      ws.patent_mode = cfg.washing.patent_mode;
      const auto z = z_difference(prep.data, ws.word, ws.patent_column(), prep.pre_years);
      DidSpec alt = did;
      alt.treat = "Treat_Z";
      const PanelDataset d = prep.data.with_column("Treat_Z", firm_positive_mean(prep.data, z.z_diff, prep.pre_years));
      add_did_result(bundle, "z_difference", "DID, standardized-difference treatment", did_estimate(d, alt),
                     {{"flagged_industries", z.flagged_industries}});
    } else if (stage == "strict" || stage == "single_year") {
      const auto& a = need_assignment(prep);
      const auto mode = stage == "strict" ? AssignmentMode::strict : AssignmentMode::single_year;
      DidSpec alt = did;
      alt.treat = "Treat_" + stage;
      const PanelDataset d = prep.data.with_column(alt.treat, treatment_column(prep.data, a, mode));
      add_did_result(bundle, stage, stage == "strict" ? "DID, strict treatment" : "DID, final pre-year treatment",
                     did_estimate(d, alt));
    } else if (stage == "exclude_years") {
      const std::set<int> drop(r.exclude_years.begin(), r.exclude_years.end());
      Mask keep(prep.data.rows());
      for (Index i = 0; i < prep.data.rows(); ++i) keep[i] = !drop.count(prep.data.years()[static_cast<std::size_t>(i)]);
      add_did_result(bundle, "exclude_years", "DID excluding years", did_estimate(prep.data.filter(keep), did),
                     {{"excluded", r.exclude_years}});
    } else if (stage == "policy") {
      DidSpec with = did;
      with.controls.insert(with.controls.end(), r.policy_controls.begin(), r.policy_controls.end());
      json out = {{"controls", did_estimate(prep.data, with).to_json()}};
      bundle.add_table("policy_controls", coefficient_table("DID with competing-policy controls", did_estimate(prep.data, with)));
      json ddd = json::object();
      for (const auto& p : r.policy_controls) {
        const auto fit = moderated_did(prep.data, did, p);
        ddd[p] = fit.to_json();
        bundle.add_table("policy_ddd_" + p, coefficient_table("Triple difference with " + p, fit));
      }
      out["ddd"] = ddd;
      bundle.json["policy"] = out;
    } else if (stage == "moderation") {
      json out = json::object();
      for (const auto& m : cfg.moderation) {
        const auto fit = moderated_did(prep.data, did, m);
        out[m] = {{"did", fit.to_json()}, {"interaction", coefficient_json(fit, interaction_name(m))}};
        bundle.add_table("moderation_" + m, coefficient_table("Moderated DID: " + m, fit));
      }
      bundle.json["moderation"] = out;
    } else if (stage == "heterogeneity") {
      json out = json::object();
      Table t{"Split-sample DID", {"Split", "Low", "High", "Difference", "Empirical p"}, {}};
      for (std::size_t k = 0; k < cfg.heterogeneity.size(); ++k) {
        const auto& v = cfg.heterogeneity[k];
        const auto s = subsample_compare(prep.data, did, v, r.split_perm, substream_seed(cfg.seed, kSplitStream + k), threads);
        out[v] = s.to_json();
        auto cell = [](const RegressionResult& f) {
          return f.has(kDidTerm) ? fixed4(f.coef(kDidTerm)) + stats::stars(f.p(kDidTerm)) : std::string();
        };
        t.rows.push_back({v, cell(s.low), cell(s.high), fixed4(s.difference), s.p ? fixed4(*s.p) : ""});
      }
      bundle.json["heterogeneity"] = out;
      bundle.add_table("heterogeneity", t);
    } else if (stage == "sur") {
      SurSystem sys = cfg.sur.system;
      if (cfg.sur.default_system) sys.equations = default_sur_system(did.controls).equations;
      const auto fit = sur_fit(add_did_terms(prep.data, did), sys, threads);
      const auto tests = sur_tests(fit, cfg.sur.term, cfg.sur.signs);
      bundle.json["sur"] = sur_report(fit, tests);
      Table t{"SUR system", {"Equation", cfg.sur.term, "SE"}, {}};
      for (std::size_t g = 0; g < fit.equations.size(); ++g) {
        const double b = fit.coef(g, cfg.sur.term), s = fit.se(g, cfg.sur.term);
        t.rows.push_back({fit.equations[g].outcome, fixed4(b) + stats::stars(stats::t_two_sided_p(b / s, 0)), "(" + fixed4(s) + ")"});
      }
      bundle.add_table("sur", t);
      Table w{"Cross-equation tests", {"Test", "Chi2", "df", "p", "p (Bonferroni)"}, {}};
      auto add = [&](const CrossEquationTest& c) {
        w.rows.push_back({c.label, fixed4(c.wald.statistic), std::to_string(c.wald.df), fixed4(c.wald.p), fixed4(c.p_adjusted)});
      };
      for (const auto& c : tests.individual) add(c);
      add(tests.joint);
      add(tests.signed_equality);
      w.rows.push_back({"Breusch-Pagan independence", fixed4(tests.independence.statistic),
                        std::to_string(tests.independence.df), fixed4(tests.independence.p), ""});
      bundle.add_table("sur_tests", w);
    } else {
      throw ConfigError("unknown stage '" + stage + "'");
    }
  });
}

json run_manifest(const PipelineConfig& cfg, const Prepared& prep, const std::vector<std::string>& stages) {
  json cfg_json = cfg.to_json();
  cfg_json.erase("threads");
  cfg_json.erase("output");
  json m = {{"config_hash", cfg.hash()},
            {"config", cfg_json},
            {"seed", cfg.seed},
            {"stages", stages},
            {"rows", prep.data.rows()},
            {"versions",
             {{"panelcausal", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
  if (prep.truth) m["ground_truth"] = prep.truth->to_json();
  return m;
}

ReportBundle run_pipeline(const PipelineConfig& cfg) {
  ReportBundle bundle;
  const Prepared prep = prepare(cfg, &bundle);
  const auto stages = pipeline_stages(cfg);
  for (const auto& s : stages) run_stage(s, cfg, prep, bundle);
  bundle.json["manifest"] = run_manifest(cfg, prep, stages);
  return bundle;
}

}  // namespace panelcausal
