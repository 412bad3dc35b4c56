#pragma once

#include "panelcausal/binary.hpp"
#include "panelcausal/ols.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace panelcausal {

/// Name of the Treat x Post regressor.
inline const std::string kDidTerm = "AI_Washing";

struct DidSpec {
  std::string outcome = "Debt_FC";
  std::string treat = "Treat";
  /// Post = 1 for years >= policy_year.
  int policy_year = 2021;
  std::vector<std::string> controls;
  FixedEffectSpec fe = FixedEffectSpec::four_way();
  std::string cluster = "firm";
  /// Moderators: each adds its main effect and an interaction with the DID
  /// term named "AI_Washing_x_<moderator>".
  std::vector<std::string> interaction_terms;

  /// Columns exist; treat is 0/1 and constant within firm.
  void validate(const PanelDataset& data) const;

  nlohmann::json to_json() const;
  static DidSpec from_json(const nlohmann::json& j);
};

std::string interaction_name(const std::string& moderator);

/// Copy with "Post" and the DID term (plus moderator interactions) added.
PanelDataset add_did_terms(const PanelDataset& data, const DidSpec& spec);

/// Outcome on the DID term and controls with spec.fe absorbed. `weights`
/// (one per row, zero excludes the row) gives weighted least squares.
RegressionResult did_estimate(const PanelDataset& data, const DidSpec& spec, const Vector* weights = nullptr);

struct EventCoefficient {
  int tau = 0;
  double estimate = 0, se = 0, lower = 0, upper = 0, p = 0;
  /// Treated observations in the bin.
  Index treated_obs = 0;
};

struct EventStudyResult {
  std::vector<EventCoefficient> coefficients;
  int omitted = -1;
  int tau_min = -4, tau_max = 3;
  RegressionResult fit;

  const EventCoefficient& at(int tau) const;
  nlohmann::json to_json() const;
  /// One row per reported tau.
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Treat x 1[year - policy_year = tau] for tau in [tau_min, tau_max] except
/// `omitted`. Event times beyond the window are binned into the endpoints.
EventStudyResult event_study(const PanelDataset& data, const DidSpec& spec, int tau_min = -4, int tau_max = 3,
                             int omitted = -1);

struct PlaceboResult {
  double actual = 0;
  /// One entry per draw, NaN where the draw could not be estimated.
  std::vector<double> draws;
  Index failed = 0;
  /// Share of successful draws with |placebo| >= |actual|.
  double p = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  /// One row per draw.
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Shuffle firm-level treatment labels (treated count preserved) and
/// re-estimate the DID coefficient `n_perm` times. Draw d uses RNG
/// substream d of `seed`, so the result does not depend on `threads`.
PlaceboResult placebo_permutation(const PanelDataset& data, const DidSpec& spec, int n_perm, std::uint64_t seed,
                                  int threads = 1);

struct BalanceRow {
  std::string covariate;
  double mean_treated = 0, mean_control = 0;
  double mean_treated_weighted = 0, mean_control_weighted = 0;
  double var_treated = 0, var_control = 0;
  /// 100 (mean_T - mean_C) / sqrt((var_T + var_C) / 2), unweighted variances.
  double bias_before = 0, bias_after = 0;
};

std::vector<BalanceRow> balance_diagnostics(const PanelDataset& data, const std::string& treat,
                                            const std::vector<std::string>& covars, const Vector* weights = nullptr);
nlohmann::json balance_to_json(const std::vector<BalanceRow>& rows);

enum class WeightMethod { psm, eb };

struct WeightVector {
  WeightMethod method = WeightMethod::eb;
  /// One per data row; 0 for rows outside the weighted sample.
  Vector weights;
  Index n_treated = 0;
  Index n_control = 0;
  Index unmatched_treated = 0;
  /// EB: largest absolute post-weight moment gap; yearly EB: firms whose
  /// rows got weight 1 for lack of a pre-period weight.
  double max_gap = 0;
  Index defaulted_firms = 0;
  int iterations = 0;
  std::vector<BalanceRow> balance;

  nlohmann::json to_json() const;
};

/// k nearest controls (by |score difference|, ties to the smaller control
/// id) within `caliper` for each treated score, with replacement. Returns
/// control indices per treated unit; empty when none lies within caliper.
std::vector<std::vector<std::size_t>> match_on_scores(const std::vector<double>& treated,
                                                      const std::vector<double>& control,
                                                      const std::vector<std::string>& control_ids, int k,
                                                      double caliper);

/// Logit propensity scores, then match_on_scores. Matched treated rows get
/// weight 1, controls 1/k per use. Matching with replacement is
/// order-free, so `seed` is recorded but cannot change the matches.
WeightVector psm_match(const PanelDataset& data, const std::string& treat, const std::vector<std::string>& covars,
                       int k = 2, double caliper = 0.01, std::uint64_t seed = 0);

/// Control weights proportional to exp(lambda'x) with weighted control
/// means equal to treated means; control weights sum to the treated count,
/// treated rows weight 1.
WeightVector entropy_balance(const PanelDataset& data, const std::string& treat, const std::vector<std::string>& covars,
                             double tol = 1e-8, int max_iterations = 200);

/// Entropy balancing per year in `years`, then each firm's mean weight on
/// all its rows. Firms never weighted get weight 1.
WeightVector entropy_balance_yearly(const PanelDataset& data, const std::string& treat,
                                    const std::vector<std::string>& covars, std::span<const int> years,
                                    double tol = 1e-8);

struct HeckmanSpec {
  std::string selection_outcome = "Selected";
  /// Selection-equation regressors; the DID term is available.
  std::vector<std::string> regressors = {kDidTerm, "IT_ratio", "no_entry"};
  /// Excluded from the outcome equation.
  std::vector<std::string> instruments = {"IT_ratio"};

  nlohmann::json to_json() const;
  static HeckmanSpec from_json(const nlohmann::json& j);
};

struct HeckmanResult {
  MleResult first_stage;
  /// Inverse Mills ratio on selected rows.
  Column imr;
  RegressionResult second_stage;
  double imr_coef = 0;
  double imr_p = 0;
  Index clamped = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// Probit selection on all rows, IMR at the first-stage index for selected
/// rows (Phi floored at 1e-12), then the DID regression on selected rows
/// with IMR added.
HeckmanResult heckman_two_stage(const PanelDataset& data, const HeckmanSpec& selection, const DidSpec& outcome);

/// DID with the moderator's main effect and its interaction with the DID
/// term. With `demean_moderator` the moderator is centred at its mean over
/// observed rows first.
RegressionResult moderated_did(const PanelDataset& data, const DidSpec& spec, const std::string& moderator,
                               bool demean_moderator = false);

struct SubsampleComparison {
  std::string split;
  RegressionResult low, high;
  double difference = 0;
  /// Absent when n_perm = 0.
  std::optional<double> p;
  int n_perm = 0;
  Index failed = 0;
  std::vector<std::string> low_firms, high_firms;

  nlohmann::json to_json() const;
};

/// Median split of firms by their pre-period mean of `split` (lower half,
/// ties by firm id), DID per half, and a permutation p-value for
/// |b_low - b_high| from reshuffling firm halves.
SubsampleComparison subsample_compare(const PanelDataset& data, const DidSpec& spec, const std::string& split,
                                      int n_perm, std::uint64_t seed, int threads = 1);

}  // namespace panelcausal
