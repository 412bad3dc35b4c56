#pragma once

#include "panelcausal/panel.hpp"

#include <span>
#include <string>
#include <vector>

namespace panelcausal {

/// Fixed-effect dimensions to absorb. Each dimension is a list of panel key
/// names; a single key is a one-way effect, several keys form an
/// interaction (industry x year). An empty key list absorbs the constant.
struct FixedEffectSpec {
  std::vector<std::vector<std::string>> dimensions;
  double tolerance = 1e-10;
  int max_iterations = 10000;

  void validate() const;

  static FixedEffectSpec constant() { return {{{}}}; }
  static FixedEffectSpec firm() { return {{{"firm"}}}; }
  static FixedEffectSpec two_way() { return {{{"firm"}, {"year"}}}; }
  static FixedEffectSpec four_way() { return {{{"firm"}, {"year"}, {"industry", "year"}, {"province", "year"}}}; }

  nlohmann::json to_json() const;
  static FixedEffectSpec from_json(const nlohmann::json& j);
};

std::vector<Factor> resolve_factors(const PanelDataset& data, const FixedEffectSpec& spec);

/// Factor restricted to `rows`, with levels renumbered densely.
Factor subset_factor(const Factor& f, std::span<const Index> rows);

struct Absorbed {
  /// Demeaned columns, one row per kept observation.
  Matrix data;
  /// Input row index of each kept observation.
  std::vector<Index> rows;
  Index dropped_singletons = 0;
  int iterations = 0;
  /// Rank of the fixed-effect indicator matrix on the kept rows (levels
  /// minus detected redundancies).
  Index absorbed_dof = 0;
  /// Factors restricted to the kept rows.
  std::vector<Factor> factors;
};

/// Rows to keep after recursively removing observations that are the only
/// member of a level in some dimension.
std::vector<Index> drop_singletons(std::span<const Factor> factors, Index n);

/// Iterated within-group (weighted) demeaning cycled over `factors` until
/// the largest change of any entry in a sweep falls below
/// spec.tolerance * max(1, column scale). Throws EstimationError when
/// max_iterations is exhausted.
Absorbed demean_absorb(const Eigen::Ref<const Matrix>& data, std::span<const Factor> factors,
                       const FixedEffectSpec& spec, const Vector* weights = nullptr, bool singletons = true);

/// Degrees of freedom used up by the indicator sets: nested dimensions are
/// redundant; each further dimension loses the largest number of connected
/// components it forms with an earlier one. Exact for up to two
/// non-nested dimensions, conservative beyond.
Index absorbed_degrees_of_freedom(std::span<const Factor> factors);

/// True when every level of `inner` occurs within a single level of `outer`.
bool nested_within(const Factor& inner, const Factor& outer);

}  // namespace panelcausal
