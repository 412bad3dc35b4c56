#include "panelcausal/report.hpp"

#include "panelcausal/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace panelcausal {

namespace {

void write_canonical(const nlohmann::json& j, std::string& out) {
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      out += '{';
      bool first = true;
      for (const auto& [k, v] : j.items()) {  // object_t is an ordered std::map
        if (!first) out += ',';
        first = false;
        out += nlohmann::json(k).dump();
        out += ':';
        write_canonical(v, out);
      }
      out += '}';
      break;
    }
    case nlohmann::json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ',';
        write_canonical(j[i], out);
      }
      out += ']';
      break;
    }
    case nlohmann::json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) {
        out += "null";
        break;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", v == 0.0 ? 0.0 : v);
      out += buf;
      break;
    }
    default: out += j.dump(); break;
  }
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::vector<double> observed(const Column& c) {
  std::vector<double> v;
  for (Index i = 0; i < c.size(); ++i)
    if (c.has(i)) v.push_back(c.values[i]);
  return v;
}

}  // namespace

std::string canonical_json(const nlohmann::json& j) {
  std::string out;
  write_canonical(j, out);
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fixed4(double v) {
  if (!std::isfinite(v)) return "";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4f", v == 0.0 ? 0.0 : v);
  return buf;
}

std::vector<DescriptiveRow> descriptive_table(const PanelDataset& data, const std::vector<std::string>& columns) {
  std::vector<DescriptiveRow> out;
  for (const auto& c : columns) {
    if (!data.has_column(c)) throw DataError("descriptive table: missing column " + c);
    const auto v = observed(data.column(c));
    if (v.empty()) throw DataError("descriptive table: column " + c + " has no observations");
    out.push_back({c, stats::summarize(v)});
  }
  return out;
}

CorrelationTable correlation_table(const PanelDataset& data, const std::vector<std::string>& columns) {
  const auto k = static_cast<Index>(columns.size());
  CorrelationTable t;
  t.variables = columns;
  t.r = Matrix::Identity(k, k);
  t.p = Matrix::Zero(k, k);
  t.n = Eigen::MatrixXi::Zero(k, k);
  for (const auto& c : columns)
    if (!data.has_column(c)) throw DataError("correlation table: missing column " + c);
  for (Index a = 0; a < k; ++a)
    for (Index b = 0; b <= a; ++b) {
      const auto& ca = data.column(columns[static_cast<std::size_t>(a)]);
      const auto& cb = data.column(columns[static_cast<std::size_t>(b)]);
      std::vector<double> x, y;
      for (Index i = 0; i < data.rows(); ++i)
        if (ca.has(i) && cb.has(i)) {
          x.push_back(ca.values[i]);
          y.push_back(cb.values[i]);
        }
      const auto n = static_cast<Index>(x.size());
      t.n(a, b) = t.n(b, a) = static_cast<int>(n);
      if (a == b) continue;
      double r = std::nan(""), p = std::nan("");
      if (n > 2) {
        r = stats::pearson(Eigen::Map<const Vector>(x.data(), n), Eigen::Map<const Vector>(y.data(), n));
        if (std::isfinite(r)) {
          const double tstat = std::abs(r) >= 1.0 ? INFINITY : r * std::sqrt((n - 2) / (1.0 - r * r));
          p = std::isinf(tstat) ? 0.0 : stats::t_two_sided_p(tstat, static_cast<double>(n - 2));
        }
      }
      t.r(a, b) = t.r(b, a) = r;
      t.p(a, b) = t.p(b, a) = p;
    }
  return t;
}

std::string Table::csv() const {
  std::string out;
  for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + csv_cell(header[j]);
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) out += (j ? "," : "") + csv_cell(row[j]);
    out += "\n";
  }
  return out;
}

std::string Table::markdown() const {
  std::string out = "## " + title + "\n\n|";
  for (const auto& h : header) out += " " + h + " |";
  out += "\n|";
  for (std::size_t j = 0; j < header.size(); ++j) out += j ? "---:|" : "---|";
  out += "\n";
  for (const auto& row : rows) {
    out += "|";
    for (const auto& c : row) out += " " + c + " |";
    out += "\n";
  }
  return out + "\n";
}

Table descriptive_to_table(const std::vector<DescriptiveRow>& rows) {
  Table t{"Descriptive statistics", {"Variable", "N", "Mean", "SD", "Min", "Median", "Max", "Kurtosis", "Skewness"}, {}};
  for (const auto& r : rows) {
    const auto& s = r.summary;
    t.rows.push_back({r.variable, std::to_string(s.n), fixed4(s.mean), fixed4(s.sd), fixed4(s.min), fixed4(s.median),
                      fixed4(s.max), fixed4(s.kurtosis), fixed4(s.skewness)});
  }
  return t;
}

Table correlation_to_table(const CorrelationTable& c) {
  Table t{"Pearson correlations", {"Variable"}, {}};
  for (const auto& v : c.variables) t.header.push_back(v);
  for (std::size_t a = 0; a < c.variables.size(); ++a) {
    std::vector<std::string> row = {c.variables[a]};
    for (std::size_t b = 0; b < c.variables.size(); ++b) {
      const auto ia = static_cast<Index>(a), ib = static_cast<Index>(b);
      if (b > a) row.push_back("");
      else if (a == b) row.push_back("1");
      else row.push_back(fixed4(c.r(ia, ib)) + (std::isfinite(c.p(ia, ib)) ? stats::stars(c.p(ia, ib)) : ""));
    }
    t.rows.push_back(row);
  }
  return t;
}

Table coefficient_table(const std::string& title, const RegressionResult& fit, const std::vector<std::string>& names) {
  Table t{title, {"Variable", "Estimate", "SE", "p"}, {}};
  const auto& list = names.empty() ? fit.names : names;
  for (const auto& n : list) {
    if (!fit.has(n)) continue;
    t.rows.push_back({n, fixed4(fit.coef(n)) + stats::stars(fit.p(n)), "(" + fixed4(fit.se(n)) + ")", fixed4(fit.p(n))});
  }
  t.rows.push_back({"N", std::to_string(fit.n_obs), "", ""});
  t.rows.push_back({"Clusters", std::to_string(fit.n_clusters), "", ""});
  t.rows.push_back({"Adj. R2", fixed4(fit.adj_r2), "", ""});
  return t;
}

nlohmann::json descriptive_to_json(const std::vector<DescriptiveRow>& rows) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& r : rows) {
    const auto& s = r.summary;
    out[r.variable] = {{"n", s.n},        {"mean", s.mean}, {"sd", s.sd},           {"min", s.min},
                       {"median", s.median}, {"max", s.max}, {"kurtosis", s.kurtosis}, {"skewness", s.skewness}};
  }
  return out;
}

nlohmann::json correlation_to_json(const CorrelationTable& c) {
  nlohmann::json r = nlohmann::json::array(), p = nlohmann::json::array();
  for (Index a = 0; a < c.r.rows(); ++a) {
    nlohmann::json rr = nlohmann::json::array(), pr = nlohmann::json::array();
    for (Index b = 0; b < c.r.cols(); ++b) {
      rr.push_back(c.r(a, b));
      pr.push_back(c.p(a, b));
    }
    r.push_back(rr);
    p.push_back(pr);
  }
  return {{"variables", c.variables}, {"r", r}, {"p", p}};
}

void ReportBundle::add_table(const std::string& stem, Table table) {
  if (!tables.count(stem)) table_order.push_back(stem);
  tables[stem] = std::move(table);
}

std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, const std::filesystem::path& dir,
                                               ReportFormats formats) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto write = [&](const std::filesystem::path& name, const std::string& contents) {
    const auto p = dir / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << contents;
    if (!out) throw Error("failed writing " + p.string());
    written.push_back(p);
  };
  if (formats.json) write("report.json", canonical_json(bundle.json) + "\n");
  if (formats.csv) {
    for (const auto& [stem, table] : bundle.tables) write(stem + ".csv", table.csv());
    for (const auto& [name, contents] : bundle.files) write(name, contents);
  }
  if (formats.markdown) {
    std::string md = "# Results\n\nSignificance: * p < 0.1, ** p < 0.05, *** p < 0.01.\n\n";
    std::vector<std::string> order = bundle.table_order;
    for (const auto& [stem, table] : bundle.tables)
      if (std::find(order.begin(), order.end(), stem) == order.end()) order.push_back(stem);
    for (const auto& stem : order)
      if (bundle.tables.count(stem)) md += bundle.tables.at(stem).markdown();
    write("report.md", md);
  }
  return written;
}

}  // namespace panelcausal
