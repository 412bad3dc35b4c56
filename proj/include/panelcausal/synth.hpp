#pragma once

#include "panelcausal/panel.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace panelcausal {

enum class Preset { did_parallel, did_violated_pretrend, selection, sur_system, persistence };

std::string to_string(Preset p);
Preset preset_from_string(const std::string& s);

struct FeScales {
  double firm = 1.0;
  double year = 0.5;
  double industry_year = 0.3;
  double province_year = 0.3;
};

/// Coefficients of the selection index. The instrument (IT_ratio) and
/// no_entry enter selection only.
struct SelectionParams {
  double intercept = -1.0;
  double treat_post = 0.8;
  double it_ratio = 4.0;
  double no_entry = -0.5;
};

/// Names of the generated firm-year controls, in column order.
const std::vector<std::string>& control_names();

struct DgpConfig {
  Preset preset = Preset::did_parallel;
  int n_firms = 500;
  int first_year = 2015;
  int last_year = 2024;
  int policy_year = 2021;
  int n_industries = 10;
  int n_provinces = 8;
  double treated_share = 0.169;
  double beta_treat = 0.125;
  /// Treated-minus-control outcome effect by event time. Empty means a step
  /// of beta_treat from event time 0 on (plus pretrend_slope*(tau+1) under
  /// did_violated_pretrend).
  std::map<int, double> event_effects;
  double pretrend_slope = 0.03;
  double noise_sd = 1.0;
  FeScales fe_scales;
  /// One per control_names() entry.
  std::vector<double> control_coefs = {-0.02, 0.3, -0.5, -0.01, 0.1, -0.01, 0.02};
  /// Shift (in control SD units) of treated firms' control means.
  double imbalance = 0.0;
  /// Planted Treat x Post x Mshare coefficient.
  double moderation_gamma = 0.0;
  double selection_rho = 0.0;
  SelectionParams selection;
  /// Unit-diagonal error correlation of the four system outcomes.
  Matrix sur_error_corr = Matrix::Identity(4, 4);
  std::vector<double> sur_coefs = {0.018, -0.049, -0.044, 0.051};
  /// AR(1) coefficient of the planted decoupling residual.
  double residual_ar = 0.0;
  /// Firm-level offset of the residual: washing_signal * (Treat - share).
  double washing_signal = 2.0;
  double residual_sd = 0.5;
  /// Effect of the residual on the binary validation outcomes' probit index.
  double validation_coef = 0.6;
  /// Share of control cells blanked at random.
  double missing_rate = 0.0;
  std::uint64_t seed = 1;

  /// Defaults of a preset.
  static DgpConfig for_preset(Preset p);

  void validate() const;
  std::vector<int> years() const;

  nlohmann::json to_json() const;
  /// Starts from the preset named in j["preset"] (default did_parallel)
  /// and overrides the fields present.
  static DgpConfig from_json(const nlohmann::json& j);
};

struct GroundTruth {
  Preset preset = Preset::did_parallel;
  std::vector<std::string> firms;
  std::vector<int> treat;
  double treated_share = 0;
  double beta_treat = 0;
  int policy_year = 0;
  std::map<int, double> event_path;
  std::vector<double> control_coefs;
  double moderation_gamma = 0;
  double selection_rho = 0;
  SelectionParams selection;
  double selection_rate = 0;
  Matrix sur_sigma;
  std::vector<double> sur_coefs;
  double residual_ar = 0;
  /// Population lag-one correlation of the planted residual and its
  /// Spearman counterpart (exact for the Gaussian case, washing_signal = 0).
  double residual_lag1_corr = 0;
  double residual_spearman = 0;
  double validation_coef = 0;

  nlohmann::json to_json() const;
};

struct Simulated {
  PanelDataset data;
  GroundTruth truth;
};

/// Balanced firm-year panel drawn from `cfg`. Pure function of the config:
/// equal configs give bit-identical output.
Simulated generate_panel(const DgpConfig& cfg);

/// Population Spearman correlation of a bivariate normal with correlation r.
double gaussian_spearman(double r);

/// Writes `<dir>/panel.csv` and `<dir>/ground_truth.json`.
void write_simulation(const Simulated& sim, const std::filesystem::path& dir);

}  // namespace panelcausal
