#include "panelcausal/panel.hpp"

#include "panelcausal/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace panelcausal {

namespace {

const std::vector<std::string> kKeyColumns = {"firm_id", "year", "industry", "province"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA" || s == "na" || s == "."; }

std::optional<double> parse_number(const std::string& s) {
  if (s == "true" || s == "TRUE" || s == "True") return 1.0;
  if (s == "false" || s == "FALSE" || s == "False") return 0.0;
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string format_cell(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Column::Column(Vector v) : values(std::move(v)), observed(Mask::Constant(values.size(), true)) {}

bool firm_id_less(const std::string& a, const std::string& b) {
  long long ia = 0, ib = 0;
  auto ra = std::from_chars(a.data(), a.data() + a.size(), ia);
  auto rb = std::from_chars(b.data(), b.data() + b.size(), ib);
  const bool na = ra.ec == std::errc() && ra.ptr == a.data() + a.size();
  const bool nb = rb.ec == std::errc() && rb.ptr == b.data() + b.size();
  if (na && nb) return ia < ib;
  if (na != nb) return na;
  return a < b;
}

PanelDataset::PanelDataset(std::vector<std::string> firm, std::vector<int> year, std::vector<std::string> industry,
                           std::vector<std::string> province) {
  const auto n = year.size();
  if (firm.size() != n || industry.size() != n || province.size() != n)
    throw DataError("panel key vectors differ in length");
  auto keys = std::make_shared<Keys>();
  for (std::size_t i = 0; i < n; ++i) {
    if (firm[i].empty() || industry[i].empty() || province[i].empty())
      throw DataError("row " + std::to_string(i) + ": missing key value");
    auto [it, inserted] = keys->lookup.emplace(std::make_pair(firm[i], year[i]), static_cast<Index>(i));
    if (!inserted)
      throw DataError("duplicate key (firm=" + firm[i] + ", year=" + std::to_string(year[i]) + ") at row " +
                      std::to_string(i));
  }
  keys->firm = std::move(firm);
  keys->year = std::move(year);
  keys->industry = std::move(industry);
  keys->province = std::move(province);
  keys_ = std::move(keys);
}

bool PanelDataset::has_column(std::string_view name) const { return columns_.find(name) != columns_.end(); }

const Column& PanelDataset::column(std::string_view name) const {
  auto it = columns_.find(name);
  if (it == columns_.end()) throw DataError("unknown column '" + std::string(name) + "'");
  return *it->second;
}

const VariableDef* PanelDataset::definition(std::string_view name) const {
  auto it = defs_.find(name);
  return it == defs_.end() ? nullptr : &it->second;
}

PanelDataset PanelDataset::with_column(const std::string& name, Column col, std::optional<VariableDef> def) const {
  if (col.size() != rows()) throw DataError("column '" + name + "' length does not match row count");
  if (std::find(kKeyColumns.begin(), kKeyColumns.end(), name) != kKeyColumns.end())
    throw DataError("'" + name + "' is a key column");
  PanelDataset out = *this;
  if (!out.has_column(name)) out.order_.push_back(name);
  out.columns_[name] = std::make_shared<const Column>(std::move(col));
  if (def) {
    def->name = name;
    out.defs_[name] = *def;
  }
  return out;
}

PanelDataset PanelDataset::without_column(const std::string& name) const {
  PanelDataset out = *this;
  out.columns_.erase(name);
  out.defs_.erase(name);
  std::erase(out.order_, name);
  return out;
}

PanelDataset PanelDataset::select(std::span<const Index> rows) const {
  std::vector<std::string> f, ind, prov;
  std::vector<int> y;
  f.reserve(rows.size());
  for (Index r : rows) {
    f.push_back(keys_->firm[r]);
    y.push_back(keys_->year[r]);
    ind.push_back(keys_->industry[r]);
    prov.push_back(keys_->province[r]);
  }
  PanelDataset out(std::move(f), std::move(y), std::move(ind), std::move(prov));
  out.defs_ = defs_;
  out.order_ = order_;
  const auto n = static_cast<Index>(rows.size());
  for (const auto& [name, col] : columns_) {
    Column c(n);
    for (Index i = 0; i < n; ++i)
      if (col->has(rows[i])) c.set(i, col->values[rows[i]]);
    out.columns_[name] = std::make_shared<const Column>(std::move(c));
  }
  return out;
}

PanelDataset PanelDataset::filter(const Mask& keep) const {
  std::vector<Index> rows;
  for (Index i = 0; i < keep.size(); ++i)
    if (keep[i]) rows.push_back(i);
  return select(rows);
}

Factor PanelDataset::factor(std::span<const std::string> keys) const {
  Factor f;
  const Index n = rows();
  f.codes.assign(n, 0);
  if (keys.empty()) {
    f.levels = n > 0 ? 1 : 0;
    return f;
  }
  auto label = [&](Index i) {
    std::string s;
    for (const auto& k : keys) {
      if (k == "firm" || k == "firm_id")
        s += keys_->firm[i];
      else if (k == "year")
        s += std::to_string(keys_->year[i]);
      else if (k == "industry")
        s += keys_->industry[i];
      else if (k == "province")
        s += keys_->province[i];
      else
        throw DataError("unknown key '" + k + "'");
      s += '\x1f';
    }
    return s;
  };
  std::vector<std::string> labels(n);
  for (Index i = 0; i < n; ++i) labels[i] = label(i);
  std::vector<std::string> uniq = labels;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::unordered_map<std::string, int> code;
  for (std::size_t i = 0; i < uniq.size(); ++i) code.emplace(uniq[i], static_cast<int>(i));
  for (Index i = 0; i < n; ++i) f.codes[i] = code.at(labels[i]);
  f.levels = static_cast<int>(uniq.size());
  return f;
}

Factor PanelDataset::factor(std::string_view key) const {
  const std::string k(key);
  return factor(std::span<const std::string>(&k, 1));
}

Index PanelDataset::find(const std::string& firm, int year) const {
  auto it = keys_->lookup.find({firm, year});
  return it == keys_->lookup.end() ? -1 : it->second;
}

std::vector<std::string> PanelDataset::distinct_firms() const {
  std::set<std::string> s(keys_->firm.begin(), keys_->firm.end());
  std::vector<std::string> out(s.begin(), s.end());
  std::sort(out.begin(), out.end(), firm_id_less);
  return out;
}

PanelDataset load_panel(const std::filesystem::path& path, std::span<const VariableDef> schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty panel file '" + path.string() + "'");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  std::map<std::string, std::size_t> pos;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (!pos.emplace(header[j], j).second) throw DataError("header mismatch: column '" + header[j] + "' repeated");
  for (const auto& k : kKeyColumns)
    if (!pos.count(k)) throw DataError("header mismatch: required key column '" + k + "' absent");

  std::vector<VariableDef> defs;
  if (schema.empty()) {
    for (const auto& h : header)
      if (std::find(kKeyColumns.begin(), kKeyColumns.end(), h) == kKeyColumns.end()) defs.push_back(VariableDef{h, VariableRole::regressor, Transform::none, ""});
  } else {
    defs.assign(schema.begin(), schema.end());
    std::set<std::string> expected(kKeyColumns.begin(), kKeyColumns.end());
    for (const auto& d : defs) expected.insert(d.name);
    for (const auto& d : defs)
      if (!pos.count(d.name)) throw DataError("header mismatch: schema column '" + d.name + "' absent");
    for (const auto& h : header)
      if (!expected.count(h)) throw DataError("header mismatch: column '" + h + "' not in schema");
  }

  std::vector<std::string> firm, industry, province;
  std::vector<int> year;
  std::vector<std::vector<std::optional<double>>> cells(defs.size());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError("row " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    for (auto& f : fields) f = trim(f);
    firm.push_back(fields[pos["firm_id"]]);
    const auto& ys = fields[pos["year"]];
    int y = 0;
    auto [ptr, ec] = std::from_chars(ys.data(), ys.data() + ys.size(), y);
    if (ec != std::errc() || ptr != ys.data() + ys.size())
      throw DataError("row " + std::to_string(lineno) + ", column 'year': unparseable cell '" + ys + "'");
    year.push_back(y);
    industry.push_back(fields[pos["industry"]]);
    province.push_back(fields[pos["province"]]);
    for (std::size_t j = 0; j < defs.size(); ++j) {
      const auto& s = fields[pos[defs[j].name]];
      if (is_missing_token(s)) {
        cells[j].push_back(std::nullopt);
        continue;
      }
      auto v = parse_number(s);
      if (!v)
        throw DataError("row " + std::to_string(lineno) + ", column '" + defs[j].name + "': unparseable cell '" + s +
                        "'");
      if (defs[j].transform == Transform::log1p) {
        if (*v < 0)
          throw DataError("row " + std::to_string(lineno) + ", column '" + defs[j].name +
                          "': log1p transform of negative value");
        *v = std::log1p(*v);
      }
      cells[j].push_back(v);
    }
  }
  for (std::size_t i = 0; i < firm.size(); ++i)
    if (firm[i].empty() || industry[i].empty() || province[i].empty())
      throw DataError("row " + std::to_string(i + 2) + ": missing key value");

  PanelDataset data(std::move(firm), std::move(year), std::move(industry), std::move(province));
  for (std::size_t j = 0; j < defs.size(); ++j) {
    Column c(data.rows());
    for (Index i = 0; i < data.rows(); ++i)
      if (cells[j][i]) c.set(i, *cells[j][i]);
    data = data.with_column(defs[j].name, std::move(c), defs[j]);
  }
  return data;
}

void write_panel(const PanelDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "firm_id,year,industry,province";
  for (const auto& c : data.column_names()) out << ',' << quote_if_needed(c);
  out << '\n';
  std::vector<const Column*> cols;
  for (const auto& c : data.column_names()) cols.push_back(&data.column(c));
  for (Index i = 0; i < data.rows(); ++i) {
    out << quote_if_needed(data.firms()[i]) << ',' << data.years()[i] << ',' << quote_if_needed(data.industries()[i])
        << ',' << quote_if_needed(data.provinces()[i]);
    for (const auto* c : cols) {
      out << ',';
      if (c->has(i)) out << format_cell(c->values[i]);
      else out << "NA";
    }
    out << '\n';
  }
}

void ScreeningConfig::validate(const PanelDataset& data) const {
  if (!(winsor_p > 0.0 && winsor_p < 0.5)) throw ConfigError("winsor_p must lie strictly between 0 and 0.5");
  std::set<std::string> sectors(data.industries().begin(), data.industries().end());
  for (const auto& s : drop_sectors)
    if (!sectors.count(s)) throw DataError("unknown sector code '" + s + "'");
  auto need = [&](const std::vector<std::string>& names, const char* what) {
    for (const auto& c : names)
      if (!data.has_column(c)) throw DataError(std::string("unknown ") + what + " column '" + c + "'");
  };
  need(drop_flags, "flag");
  need(required_columns, "required");
  need(winsorize_columns, "winsorize");
  need(imputable_columns, "imputable");
}

nlohmann::json ScreeningReport::to_json() const {
  return {{"input_rows", input_rows},
          {"dropped_sector", dropped_sector},
          {"dropped_flag", dropped_flag},
          {"dropped_missing", dropped_missing},
          {"output_rows", output_rows},
          {"imputed", imputation.imputed},
          {"unfilled", imputation.unfilled},
          {"winsorized", winsorized}};
}

PanelDataset screen(const PanelDataset& data, const ScreeningConfig& cfg, ScreeningReport* report) {
  cfg.validate(data);
  ScreeningReport rep;
  rep.input_rows = data.rows();
  const std::set<std::string> sectors(cfg.drop_sectors.begin(), cfg.drop_sectors.end());
  std::vector<Index> keep;
  for (Index i = 0; i < data.rows(); ++i) {
    if (sectors.count(data.industries()[i])) {
      ++rep.dropped_sector;
      continue;
    }
    bool flagged = false;
    for (const auto& f : cfg.drop_flags) {
      const auto& c = data.column(f);
      if (c.has(i) && c.values[i] != 0.0) flagged = true;
    }
    if (flagged) {
      ++rep.dropped_flag;
      continue;
    }
    bool missing = false;
    for (const auto& r : cfg.required_columns)
      if (!data.column(r).has(i)) missing = true;
    if (missing) {
      ++rep.dropped_missing;
      continue;
    }
    keep.push_back(i);
  }
  rep.output_rows = static_cast<Index>(keep.size());
  if (report) *report = rep;
  if (rep.output_rows == data.rows()) return data;
  return data.select(keep);
}

double empirical_quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DataError("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::pair<double, double> winsor_bounds(std::vector<double> v, double p) {
  if (v.empty()) throw DataError("winsorization of empty sample");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(static_cast<double>(n) * p - 1e-9)));
  return {v[std::min(k, n) - 1], v[n - std::min(k, n)]};
}

PanelDataset winsorize(const PanelDataset& data, std::span<const std::string> columns, double p,
                       std::map<std::string, Index>* clamped) {
  if (!(p > 0.0 && p < 0.5)) throw ConfigError("winsorization fraction must lie strictly between 0 and 0.5");
  PanelDataset out = data;
  for (const auto& name : columns) {
    const auto* def = data.definition(name);
    if (def && (def->role == VariableRole::key || def->role == VariableRole::flag))
      throw DataError("column '" + name + "' is not numeric");
    Column c = data.column(name);
    std::vector<double> obs;
    for (Index i = 0; i < c.size(); ++i)
      if (c.has(i)) obs.push_back(c.values[i]);
    if (obs.empty()) continue;
    const auto [lo, hi] = winsor_bounds(std::move(obs), p);
    Index n = 0;
    for (Index i = 0; i < c.size(); ++i) {
      if (!c.has(i)) continue;
      const double v = std::clamp(c.values[i], lo, hi);
      if (v != c.values[i]) ++n;
      c.values[i] = v;
    }
    if (clamped) (*clamped)[name] = n;
    out = out.with_column(name, std::move(c));
  }
  return out;
}

PanelDataset impute_group_mean(const PanelDataset& data, std::span<const std::string> columns,
                               ImputationReport* report) {
  const std::vector<std::string> keys = {"industry", "year"};
  const Factor g = data.factor(keys);
  PanelDataset out = data;
  for (const auto& name : columns) {
    const Column& src = data.column(name);
    std::vector<double> sum(g.levels, 0.0);
    std::vector<Index> cnt(g.levels, 0);
    for (Index i = 0; i < src.size(); ++i)
      if (src.has(i)) {
        sum[g.codes[i]] += src.values[i];
        ++cnt[g.codes[i]];
      }
    Column c = src;
    Index filled = 0, unfilled = 0;
    for (Index i = 0; i < c.size(); ++i) {
      if (c.has(i)) continue;
      const int k = g.codes[i];
      if (cnt[k] > 0) {
        c.set(i, sum[k] / static_cast<double>(cnt[k]));
        ++filled;
      } else {
        ++unfilled;
      }
    }
    if (report) {
      report->imputed[name] = filled;
      report->unfilled[name] = unfilled;
    }
    if (filled > 0) out = out.with_column(name, std::move(c));
  }
  return out;
}

PanelDataset clean(const PanelDataset& data, const ScreeningConfig& cfg, ScreeningReport* report) {
  ScreeningReport rep;
  PanelDataset out = screen(data, cfg, &rep);
  out = impute_group_mean(out, cfg.imputable_columns, &rep.imputation);
  out = winsorize(out, cfg.winsorize_columns, cfg.winsor_p, &rep.winsorized);
  if (report) *report = rep;
  return out;
}

Column lead_lag(const PanelDataset& data, std::string_view column, int k) {
  const Column& src = data.column(column);
  if (k == 0) return src;
  Column out(data.rows());
  for (Index i = 0; i < data.rows(); ++i) {
    const Index j = data.find(data.firms()[i], data.years()[i] + k);
    if (j >= 0 && src.has(j)) out.set(i, src.values[j]);
  }
  return out;
}

PanelDataset collapse_firm_means(const PanelDataset& data, std::span<const std::string> columns,
                                 std::span<const int> years) {
  const std::set<int> ys(years.begin(), years.end());
  const auto firms = data.distinct_firms();
  std::map<std::string, std::size_t> idx;
  for (std::size_t f = 0; f < firms.size(); ++f) idx[firms[f]] = f;
  std::vector<Index> first(firms.size(), -1);
  std::vector<std::vector<double>> sum(columns.size(), std::vector<double>(firms.size(), 0.0));
  std::vector<std::vector<Index>> cnt(columns.size(), std::vector<Index>(firms.size(), 0));
  for (Index i = 0; i < data.rows(); ++i) {
    if (!ys.empty() && !ys.count(data.years()[i])) continue;
    const auto f = idx[data.firms()[i]];
    if (first[f] < 0) first[f] = i;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& col = data.column(columns[c]);
      if (col.has(i)) {
        sum[c][f] += col.values[i];
        ++cnt[c][f];
      }
    }
  }
  std::vector<std::string> fo, io, po;
  std::vector<int> yo;
  std::vector<std::size_t> kept;
  for (std::size_t f = 0; f < firms.size(); ++f) {
    if (first[f] < 0) continue;
    kept.push_back(f);
    fo.push_back(firms[f]);
    yo.push_back(data.years()[first[f]]);
    io.push_back(data.industries()[first[f]]);
    po.push_back(data.provinces()[first[f]]);
  }
  PanelDataset out(std::move(fo), std::move(yo), std::move(io), std::move(po));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    Column col(out.rows());
    for (std::size_t r = 0; r < kept.size(); ++r)
      if (cnt[c][kept[r]] > 0) col.set(static_cast<Index>(r), sum[c][kept[r]] / static_cast<double>(cnt[c][kept[r]]));
    out = out.with_column(columns[c], std::move(col));
  }
  return out;
}

Mask complete_cases(const PanelDataset& data, std::span<const std::string> columns) {
  Mask m = Mask::Constant(data.rows(), true);
  for (const auto& c : columns) m = m && data.column(c).observed;
  return m;
}

}  // namespace panelcausal
