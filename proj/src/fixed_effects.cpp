#include "panelcausal/fixed_effects.hpp"

#include "panelcausal/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace panelcausal {

namespace {

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

int connected_components(const Factor& a, const Factor& b) {
  DisjointSets ds(a.levels + b.levels);
  for (std::size_t i = 0; i < a.codes.size(); ++i) ds.unite(a.codes[i], a.levels + b.codes[i]);
  int count = 0;
  for (int v = 0; v < a.levels + b.levels; ++v)
    if (ds.find(v) == v) ++count;
  return count;
}

}  // namespace

void FixedEffectSpec::validate() const {
  if (dimensions.empty()) throw ConfigError("fixed-effect spec needs at least one dimension");
  if (!(tolerance > 0)) throw ConfigError("fixed-effect tolerance must be positive");
  if (max_iterations < 1) throw ConfigError("fixed-effect max_iterations must be positive");
}

nlohmann::json FixedEffectSpec::to_json() const {
  return {{"dimensions", dimensions}, {"tolerance", tolerance}, {"max_iterations", max_iterations}};
}

FixedEffectSpec FixedEffectSpec::from_json(const nlohmann::json& j) {
  FixedEffectSpec s;
  if (j.is_array()) {
    s.dimensions = j.get<std::vector<std::vector<std::string>>>();
  } else {
    s.dimensions = j.at("dimensions").get<std::vector<std::vector<std::string>>>();
    s.tolerance = j.value("tolerance", s.tolerance);
    s.max_iterations = j.value("max_iterations", s.max_iterations);
  }
  s.validate();
  return s;
}

std::vector<Factor> resolve_factors(const PanelDataset& data, const FixedEffectSpec& spec) {
  spec.validate();
  std::vector<Factor> out;
  for (const auto& d : spec.dimensions) out.push_back(data.factor(d));
  return out;
}

Factor subset_factor(const Factor& f, std::span<const Index> rows) {
  Factor out;
  std::vector<int> remap(f.levels, -1);
  out.codes.reserve(rows.size());
  for (Index r : rows) {
    int& m = remap[f.codes[r]];
    if (m < 0) m = out.levels++;
    out.codes.push_back(m);
  }
  return out;
}

bool nested_within(const Factor& inner, const Factor& outer) {
  std::vector<int> owner(inner.levels, -1);
  for (std::size_t i = 0; i < inner.codes.size(); ++i) {
    int& o = owner[inner.codes[i]];
    if (o < 0) o = outer.codes[i];
    else if (o != outer.codes[i]) return false;
  }
  return true;
}

std::vector<Index> drop_singletons(std::span<const Factor> factors, Index n) {
  std::vector<char> keep(n, 1);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& f : factors) {
      std::vector<Index> count(f.levels, 0);
      for (Index i = 0; i < n; ++i)
        if (keep[i]) ++count[f.codes[i]];
      for (Index i = 0; i < n; ++i)
        if (keep[i] && count[f.codes[i]] == 1) {
          keep[i] = 0;
          changed = true;
        }
    }
  }
  std::vector<Index> rows;
  for (Index i = 0; i < n; ++i)
    if (keep[i]) rows.push_back(i);
  return rows;
}

Index absorbed_degrees_of_freedom(std::span<const Factor> factors) {
  const auto d = factors.size();
  std::vector<char> redundant(d, 0);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d && !redundant[a]; ++b) {
      if (a == b) continue;
      // a is a coarsening of b; identical partitions keep the first.
      if (nested_within(factors[b], factors[a]) && (!nested_within(factors[a], factors[b]) || b < a))
        redundant[a] = 1;
    }
  Index dof = 0;
  std::vector<std::size_t> used;
  for (std::size_t k = 0; k < d; ++k) {
    if (redundant[k]) continue;
    Index loss = 0;
    for (auto j : used) loss = std::max<Index>(loss, connected_components(factors[k], factors[j]));
    dof += factors[k].levels - loss;
    used.push_back(k);
  }
  return dof;
}

Absorbed demean_absorb(const Eigen::Ref<const Matrix>& data, std::span<const Factor> factors,
                       const FixedEffectSpec& spec, const Vector* weights, bool singletons) {
  spec.validate();
  const Index n = data.rows();
  for (const auto& f : factors)
    if (static_cast<Index>(f.codes.size()) != n) throw DataError("fixed-effect factor length does not match data");
  if (weights && weights->size() != n) throw DataError("weight vector length does not match data");

  Absorbed out;
  if (singletons) {
    out.rows = drop_singletons(factors, n);
  } else {
    out.rows.resize(n);
    std::iota(out.rows.begin(), out.rows.end(), Index{0});
  }
  out.dropped_singletons = n - static_cast<Index>(out.rows.size());
  const Index m = static_cast<Index>(out.rows.size());
  for (const auto& f : factors) out.factors.push_back(subset_factor(f, out.rows));

  out.data.resize(m, data.cols());
  Vector w = Vector::Ones(m);
  for (Index i = 0; i < m; ++i) {
    out.data.row(i) = data.row(out.rows[i]);
    if (weights) w[i] = (*weights)[out.rows[i]];
  }
  out.absorbed_dof = absorbed_degrees_of_freedom(out.factors);
  if (m == 0) return out;

  std::vector<Vector> level_weight;
  for (const auto& f : out.factors) {
    Vector lw = Vector::Zero(f.levels);
    for (Index i = 0; i < m; ++i) lw[f.codes[i]] += w[i];
    level_weight.push_back(std::move(lw));
  }

  const bool one_pass = out.factors.size() == 1;
  for (Index c = 0; c < out.data.cols(); ++c) {
    auto col = out.data.col(c);
    const double scale = std::max(1.0, col.cwiseAbs().maxCoeff());
    int it = 0;
    for (;;) {
      double change = 0.0;
      for (std::size_t d = 0; d < out.factors.size(); ++d) {
        const auto& codes = out.factors[d].codes;
        Vector sums = Vector::Zero(out.factors[d].levels);
        for (Index i = 0; i < m; ++i) sums[codes[i]] += w[i] * col[i];
        sums.array() /= level_weight[d].array();
        for (Index i = 0; i < m; ++i) {
          const double delta = sums[codes[i]];
          col[i] -= delta;
          change = std::max(change, std::abs(delta));
        }
      }
      ++it;
      if (one_pass || change < spec.tolerance * scale) break;
      if (it >= spec.max_iterations)
        throw EstimationError("fixed-effect absorption did not converge within " +
                              std::to_string(spec.max_iterations) + " iterations");
    }
    out.iterations = std::max(out.iterations, it);
  }
  return out;
}

}  // namespace panelcausal
