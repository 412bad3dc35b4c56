#include "panelcausal/washing.hpp"

#include "panelcausal/error.hpp"
#include "panelcausal/ols.hpp"
#include "panelcausal/parallel.hpp"
#include "panelcausal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <numeric>
#include <set>

namespace panelcausal {

namespace {

template <typename E>
E enum_from(const std::string& s, std::initializer_list<E> all, const char* what) {
  for (E e : all)
    if (to_string(e) == s) return e;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

// Rank position of each entry when sorted by (value, firm id).
std::vector<std::size_t> rank_with_firm_ties(const std::vector<double>& v, const std::vector<std::string>& firms) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (v[a] != v[b]) return v[a] < v[b];
    return firm_id_less(firms[a], firms[b]);
  });
  std::vector<std::size_t> rank(v.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string to_string(PatentMode m) {
  switch (m) {
    case PatentMode::flow: return "flow";
    case PatentMode::stock: return "stock";
    case PatentMode::application: return "application";
  }
  return "?";
}

std::string to_string(AssignmentMode m) {
  switch (m) {
    case AssignmentMode::mean: return "mean";
    case AssignmentMode::strict: return "strict";
    case AssignmentMode::single_year: return "single_year";
  }
  return "?";
}

std::string to_string(EncodingScheme s) {
  switch (s) {
    case EncodingScheme::raw: return "raw";
    case EncodingScheme::standardized: return "standardized";
    case EncodingScheme::median_split: return "median_split";
    case EncodingScheme::terciles: return "terciles";
  }
  return "?";
}

std::string to_string(StrictLabel s) {
  switch (s) {
    case StrictLabel::treated: return "treated";
    case StrictLabel::control: return "control";
    case StrictLabel::excluded: return "excluded";
  }
  return "?";
}

PatentMode patent_mode_from_string(const std::string& s) {
  return enum_from(s, {PatentMode::flow, PatentMode::stock, PatentMode::application}, "patent mode");
}
AssignmentMode assignment_mode_from_string(const std::string& s) {
  return enum_from(s, {AssignmentMode::mean, AssignmentMode::strict, AssignmentMode::single_year}, "treatment mode");
}
EncodingScheme encoding_from_string(const std::string& s) {
  return enum_from(s,
                   {EncodingScheme::raw, EncodingScheme::standardized, EncodingScheme::median_split,
                    EncodingScheme::terciles},
                   "encoding scheme");
}

const std::string& WashingSpec::patent_column() const {
  switch (patent_mode) {
    case PatentMode::stock: return patent_stock;
    case PatentMode::application: return patent_application;
    default: return patent_flow;
  }
}

void WashingSpec::validate(const PanelDataset& data) const {
  if (pre_years.empty()) throw ConfigError("washing: pre_years is empty");
  std::vector<std::string> missing;
  auto need = [&](const std::string& c) {
    if (!data.has_column(c)) missing.push_back(c);
  };
  need(word);
  if (patent_mode == PatentMode::stock && !data.has_column(patent_stock))
    need(patent_flow);
  else
    need(patent_column());
  for (const auto& c : controls) need(c);
  if (!missing.empty()) {
    std::string msg = "washing: missing columns";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
}

Column patent_stock_from_flow(const PanelDataset& data, const std::string& flow) {
  const auto& f = data.column(flow);
  std::vector<Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
    if (data.firms()[ua] != data.firms()[ub]) return firm_id_less(data.firms()[ua], data.firms()[ub]);
    return data.years()[ua] < data.years()[ub];
  });
  Column out(data.rows());
  double stock = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Index i = order[k];
    if (k == 0 || data.firms()[static_cast<std::size_t>(order[k - 1])] != data.firms()[static_cast<std::size_t>(i)])
      stock = 0;
    if (!f.has(i)) continue;
    stock += std::expm1(f.values[i]);
    out.set(i, std::log1p(stock));
  }
  return out;
}

Column decoupling_residuals(const PanelDataset& data, const WashingSpec& spec) {
  spec.validate(data);
  PanelDataset d = data;
  const std::string patent = spec.patent_column();
  if (!d.has_column(patent)) d = d.with_column(patent, patent_stock_from_flow(d, spec.patent_flow));

  std::vector<std::string> regs = {patent};
  regs.insert(regs.end(), spec.controls.begin(), spec.controls.end());
  std::vector<std::string> needed = regs;
  needed.push_back(spec.word);
  const Mask complete = complete_cases(d, needed);

  std::vector<std::vector<Index>> rows_by_year(spec.pre_years.size());
  for (Index i = 0; i < d.rows(); ++i) {
    auto it = std::find(spec.pre_years.begin(), spec.pre_years.end(), d.years()[static_cast<std::size_t>(i)]);
    if (it != spec.pre_years.end() && complete[i])
      rows_by_year[static_cast<std::size_t>(it - spec.pre_years.begin())].push_back(i);
  }
  Column out(d.rows());
  std::vector<Vector> resid(spec.pre_years.size());
  std::vector<std::vector<Index>> used(spec.pre_years.size());
  const FixedEffectSpec industry{{{"industry"}}};
  parallel_for(spec.pre_years.size(), resolve_threads(spec.threads), [&](std::size_t y) {
    const auto& rows = rows_by_year[y];
    const PanelDataset year_data = d.select(rows);
    const Index params = static_cast<Index>(regs.size()) + year_data.factor("industry").levels;
    if (static_cast<Index>(rows.size()) <= params)
      throw DataError("washing: year " + std::to_string(spec.pre_years[y]) + " has " + std::to_string(rows.size()) +
                      " complete observations for " + std::to_string(params) + " parameters");
    const auto fit = ols_cluster(year_data, spec.word, regs, industry, "");
    resid[y] = fit.residuals;
    used[y].reserve(fit.rows.size());
    for (Index r : fit.rows) used[y].push_back(rows[static_cast<std::size_t>(r)]);
  });
  for (std::size_t y = 0; y < used.size(); ++y)
    for (std::size_t k = 0; k < used[y].size(); ++k) out.set(used[y][k], resid[y][static_cast<Index>(k)]);
  return out;
}

const FirmAssignment* WashingAssignment::find(const std::string& firm) const {
  auto it = std::lower_bound(firms.begin(), firms.end(), firm,
                             [](const FirmAssignment& a, const std::string& f) { return firm_id_less(a.firm, f); });
  return it != firms.end() && it->firm == firm ? &*it : nullptr;
}

nlohmann::json WashingAssignment::summary() const {
  Index treated = 0, strict_t = 0, strict_c = 0, strict_x = 0, single_t = 0, single_n = 0;
  for (const auto& f : firms) {
    treated += f.treat_mean;
    strict_t += f.treat_strict == StrictLabel::treated;
    strict_c += f.treat_strict == StrictLabel::control;
    strict_x += f.treat_strict == StrictLabel::excluded;
    if (f.treat_single_year) {
      ++single_n;
      single_t += *f.treat_single_year;
    }
  }
  return {{"pre_years", pre_years},
          {"firms", firms.size()},
          {"excluded_no_residuals", excluded.size()},
          {"mean", {{"treated", treated}, {"control", static_cast<Index>(firms.size()) - treated}}},
          {"strict", {{"treated", strict_t}, {"control", strict_c}, {"excluded", strict_x}}},
          {"single_year", {{"treated", single_t}, {"control", single_n - single_t}}}};
}

WashingAssignment assign_treatment(const PanelDataset& data, const Column& residuals, std::span<const int> pre_years) {
  if (pre_years.empty()) throw ConfigError("assign_treatment: pre_years is empty");
  if (residuals.size() != data.rows()) throw DataError("assign_treatment: residual column length mismatch");
  WashingAssignment out;
  out.pre_years.assign(pre_years.begin(), pre_years.end());
  std::sort(out.pre_years.begin(), out.pre_years.end());
  const std::set<int> pre(out.pre_years.begin(), out.pre_years.end());
  const int last_pre = out.pre_years.back();

  std::map<std::string, std::map<int, double>, decltype(&firm_id_less)> by_firm(&firm_id_less);
  for (const auto& f : data.distinct_firms()) by_firm[f];
  for (Index i = 0; i < data.rows(); ++i) {
    const int y = data.years()[static_cast<std::size_t>(i)];
    if (residuals.has(i) && pre.count(y)) by_firm[data.firms()[static_cast<std::size_t>(i)]][y] = residuals.values[i];
  }
  for (auto& [firm, series] : by_firm) {
    if (series.empty()) {
      out.excluded.push_back(firm);
      continue;
    }
    FirmAssignment a;
    a.firm = firm;
    a.residuals = series;
    double sum = 0;
    bool all_pos = true, all_neg = true;
    for (const auto& [y, v] : series) {
      sum += v;
      all_pos = all_pos && v > 0;
      all_neg = all_neg && v < 0;
    }
    a.mean = sum / static_cast<double>(series.size());
    a.treat_mean = a.mean > 0;
    if (series.size() == pre.size()) a.treat_strict = all_pos ? StrictLabel::treated : all_neg ? StrictLabel::control : StrictLabel::excluded;
    if (auto it = series.find(last_pre); it != series.end()) a.treat_single_year = it->second > 0;
    a.intensity_raw = a.mean;
    out.firms.push_back(std::move(a));
  }
  if (!out.firms.empty()) {
    Vector m(static_cast<Index>(out.firms.size()));
    for (std::size_t k = 0; k < out.firms.size(); ++k) m[static_cast<Index>(k)] = out.firms[k].mean;
    const double mu = m.mean();
    const double sd = m.size() > 1 ? std::sqrt(stats::sample_variance(m)) : 0.0;
    for (auto& f : out.firms) f.intensity_std = sd > 0 ? (f.mean - mu) / sd : std::nan("");
  }
  return out;
}

std::vector<double> encode(const WashingAssignment& assignment, EncodingScheme scheme) {
  const auto& fs = assignment.firms;
  std::vector<double> out(fs.size());
  switch (scheme) {
    case EncodingScheme::raw:
      for (std::size_t k = 0; k < fs.size(); ++k) out[k] = fs[k].intensity_raw;
      return out;
    case EncodingScheme::standardized:
      for (std::size_t k = 0; k < fs.size(); ++k) {
        if (std::isnan(fs[k].intensity_std)) throw DataError("standardized intensity undefined: zero spread of firm means");
        out[k] = fs[k].intensity_std;
      }
      return out;
    case EncodingScheme::median_split:
    case EncodingScheme::terciles: {
      const std::size_t groups = scheme == EncodingScheme::terciles ? 3 : 2;
      std::vector<double> pos;
      std::vector<std::string> ids;
      std::vector<std::size_t> idx;
      for (std::size_t k = 0; k < fs.size(); ++k) {
        if (fs[k].mean > 0) {
          pos.push_back(fs[k].mean);
          ids.push_back(fs[k].firm);
          idx.push_back(k);
        } else {
          out[k] = 1;
        }
      }
      if (pos.size() < groups)
        throw DataError(to_string(scheme) + " needs at least " + std::to_string(groups) + " firms with positive mean residual");
      const auto rank = rank_with_firm_ties(pos, ids);
      for (std::size_t k = 0; k < pos.size(); ++k)
        out[idx[k]] = 2.0 + static_cast<double>(groups * rank[k] / pos.size());
      return out;
    }
  }
  return out;
}

Column treatment_column(const PanelDataset& data, const WashingAssignment& assignment, AssignmentMode mode) {
  Column out(data.rows());
  for (Index i = 0; i < data.rows(); ++i) {
    const auto* a = assignment.find(data.firms()[static_cast<std::size_t>(i)]);
    if (!a) continue;
    switch (mode) {
      case AssignmentMode::mean:
        out.set(i, a->treat_mean ? 1.0 : 0.0);
        break;
      case AssignmentMode::strict:
        if (a->treat_strict != StrictLabel::excluded) out.set(i, a->treat_strict == StrictLabel::treated ? 1.0 : 0.0);
        break;
      case AssignmentMode::single_year:
        if (a->treat_single_year) out.set(i, *a->treat_single_year ? 1.0 : 0.0);
        break;
    }
  }
  return out;
}

Column encoded_column(const PanelDataset& data, const WashingAssignment& assignment, EncodingScheme scheme) {
  const auto codes = encode(assignment, scheme);
  Column out(data.rows());
  for (Index i = 0; i < data.rows(); ++i) {
    const auto* a = assignment.find(data.firms()[static_cast<std::size_t>(i)]);
    if (a) out.set(i, codes[static_cast<std::size_t>(a - assignment.firms.data())]);
  }
  return out;
}

std::string assignment_csv(const WashingAssignment& assignment) {
  std::ostringstream out;
  std::vector<double> terc, med;
  try {
    terc = encode(assignment, EncodingScheme::terciles);
  } catch (const DataError&) {
  }
  try {
    med = encode(assignment, EncodingScheme::median_split);
  } catch (const DataError&) {
  }
  out << "firm_id";
  for (int y : assignment.pre_years) out << ",resid_" << y;
  out << ",mean,treat_mean,treat_strict,treat_single_year,intensity_raw,intensity_std,median_split,tercile\n";
  for (std::size_t k = 0; k < assignment.firms.size(); ++k) {
    const auto& f = assignment.firms[k];
    out << f.firm;
    for (int y : assignment.pre_years) {
      auto it = f.residuals.find(y);
      out << "," << (it == f.residuals.end() ? "NA" : fmt(it->second));
    }
    out << "," << fmt(f.mean) << "," << (f.treat_mean ? 1 : 0) << "," << to_string(f.treat_strict) << ","
        << (f.treat_single_year ? (*f.treat_single_year ? "1" : "0") : "NA") << "," << fmt(f.intensity_raw) << ","
        << fmt(f.intensity_std) << "," << (med.empty() ? "NA" : "Q" + std::to_string(static_cast<int>(med[k]))) << ","
        << (terc.empty() ? "NA" : "Q" + std::to_string(static_cast<int>(terc[k]))) << "\n";
  }
  return out.str();
}

void write_assignment_csv(const WashingAssignment& assignment, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << assignment_csv(assignment);
}

ZDifference z_difference(const PanelDataset& data, const std::string& word, const std::string& patent,
                         std::span<const int> pre_years) {
  for (const auto& c : {word, patent})
    if (!data.has_column(c)) throw DataError("z_difference: missing column " + c);
  const std::set<int> pre(pre_years.begin(), pre_years.end());
  const Factor ind = data.factor("industry");
  const auto& w = data.column(word);
  const auto& p = data.column(patent);

  auto moments = [&](const Column& c) {
    std::vector<std::vector<double>> vals(static_cast<std::size_t>(ind.levels));
    for (Index i = 0; i < data.rows(); ++i)
      if (c.has(i) && (pre.empty() || pre.count(data.years()[static_cast<std::size_t>(i)])))
        vals[static_cast<std::size_t>(ind.codes[static_cast<std::size_t>(i)])].push_back(c.values[i]);
    std::vector<std::pair<double, double>> out;
    for (const auto& v : vals) {
      if (v.size() < 2) {
        out.emplace_back(std::nan(""), 0.0);
        continue;
      }
      const Eigen::Map<const Vector> m(v.data(), static_cast<Index>(v.size()));
      out.emplace_back(m.mean(), std::sqrt(stats::sample_variance(m)));
    }
    return out;
  };
  const auto mw = moments(w), mp = moments(p);

  ZDifference z{Column(data.rows()), Column(data.rows()), Column(data.rows()), {}};
  std::vector<bool> flagged(static_cast<std::size_t>(ind.levels), false);
  for (std::size_t g = 0; g < flagged.size(); ++g) flagged[g] = !(mw[g].second > 0) || !(mp[g].second > 0);
  for (Index i = 0; i < data.rows(); ++i) {
    const auto g = static_cast<std::size_t>(ind.codes[static_cast<std::size_t>(i)]);
    if (flagged[g] || !w.has(i) || !p.has(i)) continue;
    const double zw = (w.values[i] - mw[g].first) / mw[g].second;
    const double zp = (p.values[i] - mp[g].first) / mp[g].second;
    z.z_word.set(i, zw);
    z.z_patent.set(i, zp);
    z.z_diff.set(i, zw - zp);
  }
  for (Index i = 0; i < data.rows(); ++i) {
    const auto g = static_cast<std::size_t>(ind.codes[static_cast<std::size_t>(i)]);
    const auto& label = data.industries()[static_cast<std::size_t>(i)];
    if (flagged[g] && std::find(z.flagged_industries.begin(), z.flagged_industries.end(), label) == z.flagged_industries.end())
      z.flagged_industries.push_back(label);
  }
  std::sort(z.flagged_industries.begin(), z.flagged_industries.end());
  return z;
}

nlohmann::json PersistenceStats::to_json() const {
  nlohmann::json t = nlohmann::json::array(), c = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    t.push_back({transition(r, 0), transition(r, 1), transition(r, 2)});
    c.push_back({counts(r, 0), counts(r, 1), counts(r, 2)});
  }
  return {{"transition", t}, {"counts", c}, {"spearman", spearman}, {"pairs", n_pairs}};
}

PersistenceStats persistence_stats(const PanelDataset& data, const Column& residuals) {
  if (residuals.size() != data.rows()) throw DataError("persistence_stats: residual column length mismatch");
  PersistenceStats out;
  out.terciles = Column(data.rows());
  std::map<int, std::vector<Index>> by_year;
  for (Index i = 0; i < data.rows(); ++i)
    if (residuals.has(i)) by_year[data.years()[static_cast<std::size_t>(i)]].push_back(i);
  for (const auto& [year, rows] : by_year) {
    std::vector<double> v;
    std::vector<std::string> ids;
    for (Index i : rows) {
      v.push_back(residuals.values[i]);
      ids.push_back(data.firms()[static_cast<std::size_t>(i)]);
    }
    const auto rank = rank_with_firm_ties(v, ids);
    for (std::size_t k = 0; k < rows.size(); ++k)
      out.terciles.set(rows[k], static_cast<double>(3 * rank[k] / rows.size()));
  }
  out.counts.setZero();
  std::vector<double> a, b;
  for (Index i = 0; i < data.rows(); ++i) {
    if (!residuals.has(i)) continue;
    const Index j = data.find(data.firms()[static_cast<std::size_t>(i)], data.years()[static_cast<std::size_t>(i)] + 1);
    if (j < 0 || !residuals.has(j)) continue;
    out.counts(static_cast<int>(out.terciles.values[i]), static_cast<int>(out.terciles.values[j])) += 1;
    a.push_back(residuals.values[i]);
    b.push_back(residuals.values[j]);
  }
  out.n_pairs = static_cast<Index>(a.size());
  if (out.n_pairs == 0) throw DataError("persistence_stats: no consecutive-year pairs");
  for (int r = 0; r < 3; ++r) {
    const double s = out.counts.row(r).sum();
    out.transition.row(r) = s > 0 ? Eigen::RowVector3d(out.counts.row(r) / s) : Eigen::RowVector3d::Constant(std::nan(""));
  }
  out.spearman = stats::spearman(Eigen::Map<Vector>(a.data(), out.n_pairs), Eigen::Map<Vector>(b.data(), out.n_pairs));
  return out;
}

}  // namespace panelcausal
