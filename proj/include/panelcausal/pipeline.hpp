#pragma once

#include "panelcausal/causal.hpp"
#include "panelcausal/error.hpp"
#include "panelcausal/report.hpp"
#include "panelcausal/sur.hpp"
#include "panelcausal/synth.hpp"
#include "panelcausal/washing.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace panelcausal {

struct InputConfig {
  std::optional<std::filesystem::path> csv;
  std::optional<DgpConfig> synthetic;
};

struct WashingConfig {
  bool enabled = false;
  /// Empty means every panel year before the policy year.
  std::vector<int> pre_years;
  PatentMode patent_mode = PatentMode::flow;
  /// Residual-regression controls; empty keeps the WashingSpec default.
  std::vector<std::string> controls;
  /// "mean", "strict", "single_year", or "input" to keep the panel's
  /// treatment column.
  std::string treatment = "mean";
};

struct RobustnessConfig {
  bool psm = false;
  int psm_k = 2;
  double psm_caliper = 0.01;
  bool eb = false;
  bool heckman = false;
  HeckmanSpec heckman_spec;
  /// Placebo draws; 0 disables.
  int placebo = 0;
  bool event_study = false;
  int tau_min = -4, tau_max = 3;
  bool intensity = false;
  bool quantile = false;
  bool z_difference = false;
  bool strict = false;
  bool single_year = false;
  bool validation = false;
  std::vector<std::string> validation_outcomes = {"Violation", "Inquiry", "Innov_Sub"};
  std::vector<int> exclude_years;
  std::vector<std::string> policy_controls;
  /// Covariates for matching, weighting and balance; empty means the DID
  /// controls.
  std::vector<std::string> balance_covariates;
  /// Permutations per split variable.
  int split_perm = 1000;
};

struct SurConfig {
  bool enabled = false;
  /// Used when `equations` was not given: default_sur_system(did.controls).
  SurSystem system;
  bool default_system = true;
  std::string term = kDidTerm;
  std::vector<double> signs = {1, 1, -1, 1};
};

struct PipelineConfig {
  InputConfig input;
  std::optional<ScreeningConfig> screening;
  WashingConfig washing;
  DidSpec did;
  RobustnessConfig robustness;
  SurConfig sur;
  std::vector<std::string> moderation;
  std::vector<std::string> heterogeneity;
  /// Columns of the descriptive and correlation tables; empty means
  /// outcome, treatment, DID term and controls.
  std::vector<std::string> describe;
  std::uint64_t seed = 1;
  /// 0 means PANELCAUSAL_THREADS or 1.
  int threads = 0;
  std::filesystem::path output = "panelcausal_out";

  /// All problems are collected into one ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  /// Hash of the canonical config without threads and output directory.
  std::string hash() const;
};

ScreeningConfig screening_from_json(const nlohmann::json& j);
nlohmann::json screening_to_json(const ScreeningConfig& s);

/// Data after loading, screening and treatment assignment.
struct Prepared {
  PanelDataset data;
  std::optional<ScreeningReport> screening;
  std::optional<GroundTruth> truth;
  Column residuals;
  std::optional<WashingAssignment> assignment;
  std::vector<int> pre_years;
};

/// Runs `fn`, prefixing any library error with "[stage] " while keeping its
/// type.
template <typename Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn());

PanelDataset load_input(const PipelineConfig& cfg);
/// load -> screen -> wash -> assign. Stage outputs go to `bundle` when given.
Prepared prepare(const PipelineConfig& cfg, ReportBundle* bundle = nullptr);

/// Stage names in execution order for this config (after preparation).
std::vector<std::string> pipeline_stages(const PipelineConfig& cfg);
/// One estimation stage by name: describe, baseline, validation, event,
/// placebo, psm, eb, heckman, intensity, quantile, z_difference, strict,
/// single_year, exclude_years, policy, moderation, heterogeneity, sur.
void run_stage(const std::string& stage, const PipelineConfig& cfg, const Prepared& prep, ReportBundle& bundle);

/// Config hash (and canonical config), seed, stage list, row count and
/// library versions. Excludes the thread count.
nlohmann::json run_manifest(const PipelineConfig& cfg, const Prepared& prep, const std::vector<std::string>& stages);

/// Full study. Identical config and seed give identical bundles whatever
/// the thread count.
ReportBundle run_pipeline(const PipelineConfig& cfg);

// Implementation of the template above.
template <typename Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const SeparationError& e) {
    throw SeparationError("[" + stage + "] " + e.what());
  } catch (const EstimationError& e) {
    throw EstimationError("[" + stage + "] " + e.what());
  } catch (const DataError& e) {
    throw DataError("[" + stage + "] " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("[" + stage + "] " + e.what());
  } catch (const Error& e) {
    throw Error("[" + stage + "] " + e.what());
  }
}

}  // namespace panelcausal
