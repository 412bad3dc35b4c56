#include "panelcausal/error.hpp"
#include "panelcausal/parallel.hpp"
#include "panelcausal/pipeline.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

using namespace panelcausal;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string input;
  std::string preset;
  int firms = 0;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool data_flags = true) {
  app->add_option("--config", c.config, "JSON config file");
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--threads", c.threads, "Worker threads (0: PANELCAUSAL_THREADS or 1)")->check(CLI::NonNegativeNumber);
  app->add_option("--out", c.out, "Output directory");
  if (!data_flags) return;
  auto* in = app->add_option("--input", c.input, "Panel CSV");
  auto* pre = app->add_option("--preset", c.preset, "Synthetic preset instead of a CSV");
  in->excludes(pre);
  app->add_option("--firms", c.firms, "Firms in the synthetic panel")->needs(pre)->check(CLI::PositiveNumber);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

PipelineConfig build_config(const Common& c) {
  json j = json::object();
  std::filesystem::path base;
  if (!c.config.empty()) {
    j = read_json(c.config);
    base = std::filesystem::path(c.config).parent_path();
  }
  bool from_flags = false;
  if (!c.input.empty()) {
    j["input"] = {{"csv", c.input}};
    from_flags = true;
  } else if (!c.preset.empty()) {
    json syn = {{"preset", c.preset}};
    if (c.firms > 0) syn["n_firms"] = c.firms;
    j["input"] = {{"synthetic", syn}};
  }
  PipelineConfig cfg = PipelineConfig::from_json(j);
  if (!from_flags && cfg.input.csv && cfg.input.csv->is_relative()) cfg.input.csv = base / *cfg.input.csv;
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  if (!c.out.empty()) cfg.output = c.out;
  return cfg;
}

void emit(const ReportBundle& bundle, const std::filesystem::path& dir) {
  for (const auto& p : emit_report(bundle, dir)) std::cout << p.string() << "\n";
}

void run_stages(const PipelineConfig& cfg, const std::vector<std::string>& stages) {
  ReportBundle bundle;
  const Prepared prep = prepare(cfg, &bundle);
  for (const auto& s : stages) run_stage(s, cfg, prep, bundle);
  bundle.json["manifest"] = run_manifest(cfg, prep, stages);
  emit(bundle, cfg.output);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  std::cout << path.string() << "\n";
}

std::filesystem::path out_dir(const Common& c, const std::string& fallback) {
  std::filesystem::path d = c.out.empty() ? fallback : c.out;
  std::error_code ec;
  std::filesystem::create_directories(d, ec);
  if (ec) throw Error("cannot create output directory " + d.string() + ": " + ec.message());
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Panel causal-inference toolkit: treatment construction, DID and robustness, SUR."};
  app.require_subcommand(1);
  std::function<void()> action;

  Common sim_c;
  std::string sim_preset = "did_parallel";
  int sim_firms = 0;
  auto* sim = app.add_subcommand("simulate", "Draw a synthetic panel with planted ground truth");
  add_common(sim, sim_c, false);
  sim->add_option("--preset", sim_preset, "did_parallel, did_violated_pretrend, selection, sur_system, persistence");
  sim->add_option("--firms", sim_firms, "Number of firms")->check(CLI::PositiveNumber);
  sim->callback([&] {
    action = [&] {
      json j = sim_c.config.empty() ? json::object() : read_json(sim_c.config);
      if (!j.contains("preset") || sim->count("--preset")) j["preset"] = sim_preset;
      if (sim_firms > 0) j["n_firms"] = sim_firms;
      if (sim_c.seed) j["seed"] = *sim_c.seed;
      const auto s = generate_panel(DgpConfig::from_json(j));
      const auto dir = out_dir(sim_c, "panelcausal_sim");
      write_panel(s.data, dir / "panel.csv");
      std::cout << (dir / "panel.csv").string() << "\n";
      write_text(dir / "truth.json", canonical_json(s.truth.to_json()) + "\n");
    };
  });

  Common clean_c;
  auto* cln = app.add_subcommand("clean", "Screen, impute and winsorize a panel");
  add_common(cln, clean_c);
  cln->callback([&] {
    action = [&] {
      const auto cfg = build_config(clean_c);
      const auto data = load_input(cfg);
      ScreeningReport rep;
      const auto out = clean(data, cfg.screening.value_or(ScreeningConfig{}), &rep);
      const auto dir = out_dir(clean_c, cfg.output.string());
      write_panel(out, dir / "panel.csv");
      std::cout << (dir / "panel.csv").string() << "\n";
      write_text(dir / "screening.json", canonical_json(rep.to_json()) + "\n");
    };
  });

  Common wash_c;
  auto* wash = app.add_subcommand("wash", "Decoupling residuals and treatment assignment");
  add_common(wash, wash_c);
  wash->callback([&] {
    action = [&] {
      auto cfg = build_config(wash_c);
      cfg.washing.enabled = true;
      ReportBundle bundle;
      const auto prep = prepare(cfg, &bundle);
      bundle.json["manifest"] = run_manifest(cfg, prep, {});
      emit(bundle, cfg.output);
      write_panel(prep.data, cfg.output / "panel.csv");
      std::cout << (cfg.output / "panel.csv").string() << "\n";
    };
  });

  // Subcommands that run named pipeline stages.
  auto stage_command = [&](const std::string& name, const std::string& help, Common& c,
                           std::function<std::vector<std::string>(PipelineConfig&)> setup) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, c);
    sub->callback([&, setup, &c = c] {
      action = [&, setup] {
        auto cfg = build_config(c);
        run_stages(cfg, setup(cfg));
      };
    });
    return sub;
  };

  Common did_c, event_c, placebo_c, match_c, heck_c, mod_c, split_c, sur_c, report_c, pipe_c;
  stage_command("did", "Baseline two-way fixed-effects DID", did_c, [](PipelineConfig&) {
    return std::vector<std::string>{"baseline"};
  });

  std::optional<int> tau_min, tau_max;
  auto* ev = stage_command("event", "Event-study coefficients", event_c, [&](PipelineConfig& cfg) {
    if (tau_min) cfg.robustness.tau_min = *tau_min;
    if (tau_max) cfg.robustness.tau_max = *tau_max;
    if (!(cfg.robustness.tau_min < -1 && -1 < cfg.robustness.tau_max))
      throw ConfigError("event window must contain -1 strictly inside");
    return std::vector<std::string>{"event"};
  });
  ev->add_option("--tau-min", tau_min, "First event time (binned below)");
  ev->add_option("--tau-max", tau_max, "Last event time (binned above)");

  int n_perm = 0;
  auto* pl = stage_command("placebo", "Permutation placebo test", placebo_c, [&](PipelineConfig& cfg) {
    if (n_perm > 0) cfg.robustness.placebo = n_perm;
    if (cfg.robustness.placebo == 0) cfg.robustness.placebo = 1000;
    return std::vector<std::string>{"placebo"};
  });
  pl->add_option("--perm", n_perm, "Number of permutations (default 1000)")->check(CLI::PositiveNumber);

  std::optional<int> k;
  std::optional<double> caliper;
  auto* mt = stage_command("match", "Propensity-score matching and weighted DID", match_c, [&](PipelineConfig& cfg) {
    if (k) cfg.robustness.psm_k = *k;
    if (caliper) cfg.robustness.psm_caliper = *caliper;
    return std::vector<std::string>{"psm"};
  });
  mt->add_option("--k", k, "Neighbours per treated unit")->check(CLI::PositiveNumber);
  mt->add_option("--caliper", caliper, "Maximum score distance")->check(CLI::NonNegativeNumber);

  Common bal_c;
  std::string method = "eb";
  auto* bal = app.add_subcommand("balance", "Covariate balance before and after weighting");
  add_common(bal, bal_c);
  bal->add_option("--method", method, "none, psm or eb")->check(CLI::IsMember({"none", "psm", "eb"}));
  bal->callback([&] {
    action = [&] {
      const auto cfg = build_config(bal_c);
      ReportBundle bundle;
      const auto prep = prepare(cfg, &bundle);
      const auto& covars =
          cfg.robustness.balance_covariates.empty() ? cfg.did.controls : cfg.robustness.balance_covariates;
      std::vector<BalanceRow> rows;
      if (method == "none") {
        rows = balance_diagnostics(prep.data, cfg.did.treat, covars);
      } else {
        const auto w = method == "psm"
                           ? psm_match(prep.data, cfg.did.treat, covars, cfg.robustness.psm_k, cfg.robustness.psm_caliper,
                                       substream_seed(cfg.seed, 2))
                           : entropy_balance_yearly(prep.data, cfg.did.treat, covars, prep.pre_years);
        rows = w.balance;
        bundle.json["weights"] = w.to_json();
      }
      bundle.json["balance"] = balance_to_json(rows);
      Table t{"Covariate balance (" + method + ")",
              {"Covariate", "Mean treated", "Mean control", "Mean control (weighted)", "Bias before (%)", "Bias after (%)"},
              {}};
      for (const auto& r : rows)
        t.rows.push_back({r.covariate, fixed4(r.mean_treated), fixed4(r.mean_control), fixed4(r.mean_control_weighted),
                          fixed4(r.bias_before), fixed4(r.bias_after)});
      bundle.add_table("balance", t);
      bundle.json["manifest"] = run_manifest(cfg, prep, {"balance"});
      emit(bundle, cfg.output);
    };
  });

  stage_command("heckman", "Heckman two-step selection correction", heck_c, [](PipelineConfig&) {
    return std::vector<std::string>{"heckman"};
  });

  std::vector<std::string> moderators;
  auto* md = stage_command("moderate", "Moderated DID (treatment x moderator)", mod_c, [&](PipelineConfig& cfg) {
    if (!moderators.empty()) cfg.moderation = moderators;
    if (cfg.moderation.empty()) throw ConfigError("moderate needs --moderator or a moderation list in the config");
    return std::vector<std::string>{"moderation"};
  });
  md->add_option("--moderator", moderators, "Moderator column (repeatable)");

  std::vector<std::string> split_vars;
  int split_perm = -1;
  auto* sp = stage_command("split", "Split-sample DID with a permutation test of the difference", split_c,
                           [&](PipelineConfig& cfg) {
                             if (!split_vars.empty()) cfg.heterogeneity = split_vars;
                             if (split_perm >= 0) cfg.robustness.split_perm = split_perm;
                             if (cfg.heterogeneity.empty())
                               throw ConfigError("split needs --var or a heterogeneity list in the config");
                             return std::vector<std::string>{"heterogeneity"};
                           });
  sp->add_option("--var", split_vars, "Split variable (repeatable)");
  sp->add_option("--perm", split_perm, "Permutations of the difference")->check(CLI::NonNegativeNumber);

  stage_command("sur", "Seemingly unrelated regressions and cross-equation tests", sur_c, [](PipelineConfig&) {
    return std::vector<std::string>{"sur"};
  });
  stage_command("report", "Descriptive statistics and correlation tables", report_c, [](PipelineConfig&) {
    return std::vector<std::string>{"describe"};
  });

  auto* pipe = app.add_subcommand("pipeline", "Run the full configured study");
  add_common(pipe, pipe_c);
  pipe->callback([&] {
    action = [&] {
      const auto cfg = build_config(pipe_c);
      emit(run_pipeline(cfg), cfg.output);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    action();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
