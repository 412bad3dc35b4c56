#include <doctest.h>

#include "oracles.hpp"
#include "panelcausal/error.hpp"
#include "panelcausal/stats.hpp"
#include "panelcausal/synth.hpp"
#include "panelcausal/washing.hpp"

#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace panelcausal;

namespace {

const std::vector<int> kPre = {2015, 2016, 2017, 2018, 2019, 2020};

// Panel of `firms` x `years` with the given per-firm industry labels.
PanelDataset grid(int firms, const std::vector<int>& years, const std::vector<std::string>& industry) {
  std::vector<std::string> f, ind, prov;
  std::vector<int> y;
  for (int i = 0; i < firms; ++i)
    for (int t : years) {
      f.push_back(std::to_string(i + 1));
      y.push_back(t);
      ind.push_back(industry[static_cast<std::size_t>(i)]);
      prov.push_back("P");
    }
  return PanelDataset(f, y, ind, prov);
}

// Residual column holding `series[firm][k]` for year kPre[k] (NaN = missing).
Column residual_column(const PanelDataset& d, const std::vector<std::vector<double>>& series) {
  Column c(d.rows());
  for (Index i = 0; i < d.rows(); ++i) {
    const auto f = static_cast<std::size_t>(std::stoi(d.firms()[static_cast<std::size_t>(i)]) - 1);
    const auto k = static_cast<std::size_t>(d.years()[static_cast<std::size_t>(i)] - 2015);
    if (f < series.size() && k < series[f].size() && !std::isnan(series[f][k])) c.set(i, series[f][k]);
  }
  return c;
}

WashingAssignment with_means(const std::vector<double>& means) {
  WashingAssignment a;
  a.pre_years = {2020};
  for (std::size_t k = 0; k < means.size(); ++k) {
    FirmAssignment f;
    f.firm = std::to_string(k + 1);
    f.mean = f.intensity_raw = means[k];
    f.residuals[2020] = means[k];
    f.treat_mean = means[k] > 0;
    a.firms.push_back(f);
  }
  return a;
}

WashingSpec small_spec(std::vector<std::string> controls) {
  WashingSpec s;
  s.pre_years = kPre;
  s.controls = std::move(controls);
  return s;
}

}  // namespace

TEST_CASE("word measure equal to its fitted value leaves zero residuals") {
  std::vector<std::string> ind;
  for (int i = 0; i < 30; ++i) ind.push_back(i % 3 == 0 ? "A" : i % 3 == 1 ? "B" : "C");
  auto d = grid(30, kPre, ind);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Vector pat(d.rows()), size(d.rows()), word(d.rows());
  for (Index i = 0; i < d.rows(); ++i) {
    pat[i] = std::abs(nd(rng));
    size[i] = 22 + nd(rng);
    const double ie = d.industries()[static_cast<std::size_t>(i)] == "A" ? 0.3 : d.industries()[static_cast<std::size_t>(i)] == "B" ? -0.2 : 1.0;
    word[i] = 0.5 * pat[i] + 0.1 * size[i] + ie + 0.01 * d.years()[static_cast<std::size_t>(i)];
  }
  d = d.with_column("AI_Patent", Column(pat)).with_column("Size", Column(size)).with_column("AI_Word", Column(word));
  const auto r = decoupling_residuals(d, small_spec({"Size"}));
  CHECK(r.observed.all());
  CHECK(r.values.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("planted residuals are recovered with correlation above 0.99") {
  auto cfg = DgpConfig::for_preset(Preset::did_parallel);
  cfg.n_firms = 2000;
  cfg.seed = 11;
  const auto sim = generate_panel(cfg);
  WashingSpec spec;
  spec.pre_years = kPre;
  const auto r = decoupling_residuals(sim.data, spec);
  std::vector<double> a, b;
  for (Index i = 0; i < sim.data.rows(); ++i)
    if (r.has(i)) {
      a.push_back(r.values[i]);
      b.push_back(sim.data.column("planted_residual").values[i]);
    }
  CHECK(a.size() == 12000);
  const double corr = stats::pearson(Eigen::Map<Vector>(a.data(), 12000), Eigen::Map<Vector>(b.data(), 12000));
  CHECK(corr > 0.99);

  // Mean-mode treatment agrees with the planted labels for most firms.
  const auto asg = assign_treatment(sim.data, r, kPre);
  int agree = 0;
  for (std::size_t k = 0; k < asg.firms.size(); ++k) agree += asg.firms[k].treat_mean == (sim.truth.treat[k] == 1);
  CHECK(agree > 0.9 * 2000);
}

TEST_CASE("residuals sum to zero within each year-industry cell") {
  auto cfg = DgpConfig::for_preset(Preset::did_parallel);
  cfg.n_firms = 300;
  const auto sim = generate_panel(cfg);
  WashingSpec spec;
  spec.pre_years = kPre;
  spec.threads = 3;
  const auto r = decoupling_residuals(sim.data, spec);
  std::map<std::pair<int, std::string>, double> sums;
  for (Index i = 0; i < sim.data.rows(); ++i)
    if (r.has(i)) sums[{sim.data.years()[static_cast<std::size_t>(i)], sim.data.industries()[static_cast<std::size_t>(i)]}] += r.values[i];
  CHECK(sums.size() == 60);
  for (const auto& [cell, s] : sums) CHECK(std::abs(s) < 1e-9);
  // Thread count does not change the result.
  spec.threads = 1;
  const auto r1 = decoupling_residuals(sim.data, spec);
  CHECK((r1.values - r.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("inflating one firm's word measure raises its residual by 2(1 - leverage)") {
  std::vector<std::string> ind = {"A", "A", "A", "A", "A", "B", "B", "B", "B", "B", "B", "B"};
  auto d = grid(12, {2020}, ind);
  const Vector pat{{0.2, 1.1, 0.0, 2.3, 0.7, 1.5, 0.4, 0.9, 3.0, 0.1, 1.2, 0.6}};
  const Vector size{{21.0, 22.5, 20.1, 23.2, 21.7, 22.0, 20.5, 22.8, 24.0, 21.1, 22.2, 21.4}};
  const Vector word{{0.5, 1.0, 0.2, 1.9, 0.3, 1.4, 0.1, 0.8, 2.2, 0.4, 0.9, 0.7}};
  d = d.with_column("AI_Patent", Column(pat)).with_column("Size", Column(size));
  auto spec = small_spec({"Size"});
  spec.pre_years = {2020};
  const auto base = decoupling_residuals(d.with_column("AI_Word", Column(word)), spec);
  const Index k = 3;
  Vector bumped = word;
  bumped[k] += 2.0;
  const auto moved = decoupling_residuals(d.with_column("AI_Word", Column(bumped)), spec);

  const Matrix A = oracle::hcat({Matrix(pat), Matrix(size), oracle::dummies(ind)});
  const Matrix H = A * (A.transpose() * A).inverse() * A.transpose();
  CHECK(moved.values[k] - base.values[k] == doctest::Approx(2.0 * (1.0 - H(k, k))).epsilon(1e-10));
  CHECK(H(k, k) > 0.05);
}

TEST_CASE("too few observations for a pre-year is an error") {
  auto d = grid(3, {2020}, {"A", "A", "A"});
  d = d.with_column("AI_Patent", Column(Vector{{1.0, 2.0, 0.5}}))
          .with_column("Size", Column(Vector{{1.0, 2.0, 4.0}}))
          .with_column("AI_Word", Column(Vector{{1.0, 0.0, 3.0}}));
  auto spec = small_spec({"Size"});
  spec.pre_years = {2020};
  CHECK_THROWS_AS(decoupling_residuals(d, spec), DataError);
  spec.controls = {"Missing"};
  CHECK_THROWS_AS(decoupling_residuals(d, spec), DataError);
}

TEST_CASE("patent stock derived from log flows") {
  auto d = grid(2, {2015, 2016, 2017, 2018}, {"A", "A"});
  Column flow(Vector{{std::log1p(1.0), std::log1p(2.0), 0.0, std::log1p(3.0), 0.0, 0.0, std::log1p(4.0), 0.0}});
  flow.clear(2);
  d = d.with_column("AI_Patent", flow);
  const auto s = patent_stock_from_flow(d, "AI_Patent");
  CHECK(s.values[0] == doctest::Approx(std::log1p(1.0)));
  CHECK(s.values[1] == doctest::Approx(std::log1p(3.0)));
  CHECK_FALSE(s.has(2));
  CHECK(s.values[3] == doctest::Approx(std::log1p(6.0)));
  CHECK(s.values[6] == doctest::Approx(std::log1p(4.0)));
  CHECK(s.values[7] == doctest::Approx(std::log1p(4.0)));
}

TEST_CASE("treatment assignment on hand series") {
  const double na = std::nan("");
  const std::vector<std::vector<double>> series = {
      {1, 1, 1, 1, 1, 1},                     // uniform positive
      {3, -1, na, na, na, na},                // mixed, partially observed
      {-0.1, -0.1, -0.1, -0.1, -0.1, -0.1},  // uniform negative
      {0, 0, 0, 0, 0, 0},                     // boundary
      {-1, -2, -1, -1, -1, 0.5},             // negative mean, positive last year
      {2, 2, 2, 2, 2, na},                    // positive, last year missing
      {na, na, na, na, na, na},               // nothing observed
  };
  std::vector<std::string> ind(7, "A");
  const auto d = grid(7, kPre, ind);
  const auto a = assign_treatment(d, residual_column(d, series), kPre);
  REQUIRE(a.firms.size() == 6);
  CHECK(a.excluded == std::vector<std::string>{"7"});
  const auto* f1 = a.find("1");
  CHECK(f1->treat_mean);
  CHECK(f1->treat_strict == StrictLabel::treated);
  CHECK(*f1->treat_single_year);
  const auto* f2 = a.find("2");
  CHECK(f2->mean == doctest::Approx(1.0));
  CHECK(f2->treat_mean);
  CHECK(f2->treat_strict == StrictLabel::excluded);
  CHECK_FALSE(f2->treat_single_year.has_value());
  const auto* f3 = a.find("3");
  CHECK_FALSE(f3->treat_mean);
  CHECK(f3->treat_strict == StrictLabel::control);
  const auto* f4 = a.find("4");
  CHECK_FALSE(f4->treat_mean);
  CHECK(f4->treat_strict == StrictLabel::excluded);
  CHECK_FALSE(*f4->treat_single_year);
  const auto* f5 = a.find("5");
  CHECK_FALSE(f5->treat_mean);
  CHECK(*f5->treat_single_year);
  CHECK(a.find("6")->treat_strict == StrictLabel::excluded);

  const auto strict = treatment_column(d, a, AssignmentMode::strict);
  CHECK(strict.values[0] == 1.0);
  CHECK_FALSE(strict.has(6));       // firm 2 excluded
  CHECK(strict.values[12] == 0.0);  // firm 3 control
  const auto mean = treatment_column(d, a, AssignmentMode::mean);
  CHECK(mean.missing_count() == 6);  // only firm 7
  const auto single = treatment_column(d, a, AssignmentMode::single_year);
  CHECK_FALSE(single.has(30));  // firm 6
}

TEST_CASE("strict mode partitions firms") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> series(200, std::vector<double>(6));
  for (auto& s : series)
    for (auto& v : s) v = nd(rng) + (s.data() == series[0].data() ? 5 : 0);
  const auto d = grid(200, kPre, std::vector<std::string>(200, "A"));
  const auto a = assign_treatment(d, residual_column(d, series), kPre);
  const auto j = a.summary();
  CHECK(j["strict"]["treated"].get<int>() + j["strict"]["control"].get<int>() + j["strict"]["excluded"].get<int>() == 200);
  for (const auto& f : a.firms) {
    if (f.treat_strict == StrictLabel::treated) CHECK(f.treat_mean);
    if (f.treat_strict == StrictLabel::control) CHECK_FALSE(f.treat_mean);
  }
  // Standardized intensity has mean 0 and variance 1; same argmax as raw.
  const auto raw = encode(a, EncodingScheme::raw);
  const auto std_ = encode(a, EncodingScheme::standardized);
  const Eigen::Map<const Vector> s(std_.data(), 200);
  CHECK(std::abs(s.mean()) < 1e-12);
  CHECK(stats::sample_variance(s) == doctest::Approx(1.0));
  CHECK(std::max_element(raw.begin(), raw.end()) - raw.begin() == std::max_element(std_.begin(), std_.end()) - std_.begin());
}

TEST_CASE("quantile encodings") {
  const auto a = with_means({1, 2, 3, 4, 5, 6, 0, -1});
  CHECK(encode(a, EncodingScheme::terciles) == std::vector<double>{2, 2, 3, 3, 4, 4, 1, 1});
  CHECK(encode(a, EncodingScheme::median_split) == std::vector<double>{2, 2, 2, 3, 3, 3, 1, 1});

  // Invariant to strictly monotone transformations that keep the sign.
  const auto cubed = with_means({1, 8, 27, 64, 125, 216, 0, -1});
  CHECK(encode(cubed, EncodingScheme::terciles) == encode(a, EncodingScheme::terciles));

  // Ties at the boundary go by firm id.
  const auto ties = with_means({1, 1, 1, 1, 1, 1});
  CHECK(encode(ties, EncodingScheme::terciles) == std::vector<double>{2, 2, 3, 3, 4, 4});

  CHECK_THROWS_AS(encode(with_means({1, 2, -1}), EncodingScheme::terciles), DataError);
  auto flat = with_means({2, 2, 2});
  for (auto& f : flat.firms) f.intensity_std = std::nan("");
  CHECK_THROWS_AS(encode(flat, EncodingScheme::standardized), DataError);

  const auto d = grid(3, kPre, {"A", "A", "A"});
  const auto same = assign_treatment(d, residual_column(d, {{1, 1, 1, 1, 1, 1}, {1, 1, 1, 1, 1, 1}, {1, 1, 1, 1, 1, 1}}), kPre);
  CHECK_THROWS_AS(encode(same, EncodingScheme::standardized), DataError);
}

TEST_CASE("assignment CSV export") {
  const auto d = grid(4, kPre, std::vector<std::string>(4, "A"));
  const auto a = assign_treatment(d, residual_column(d, {{1, 2, 1, 1, 1, 1}, {-1, -1, -1, -1, -1, -1}, {2, 2, 2, 2, 2, 2}, {3, 3, 3, 3, 3, 3}}), kPre);
  const auto path = std::filesystem::temp_directory_path() / "panelcausal_tests" / "assign.csv";
  std::filesystem::create_directories(path.parent_path());
  write_assignment_csv(a, path);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header.rfind("firm_id,resid_2015,", 0) == 0);
  CHECK(first.rfind("1,1,2,1,1,1,1,", 0) == 0);
  CHECK(first.find(",treated,1,") != std::string::npos);
  CHECK(first.substr(first.size() - 3) == ",Q2");
}

TEST_CASE("z-difference") {
  // Industry A: word {1, 2, 3}, patent {4, 6, 8}; B is flat in patents.
  auto d = grid(5, {2020}, {"A", "A", "A", "B", "B"});
  d = d.with_column("AI_Word", Column(Vector{{1.0, 2.0, 3.0, 1.0, 2.0}}))
          .with_column("AI_Patent", Column(Vector{{4.0, 6.0, 8.0, 5.0, 5.0}}));
  const auto z = z_difference(d, "AI_Word", "AI_Patent");
  CHECK(z.z_diff.values[1] == 0.0);   // at both industry means
  CHECK(z.z_word.values[2] == doctest::Approx(1.0));
  CHECK(z.z_patent.values[0] == doctest::Approx(-1.0));
  CHECK(z.z_diff.values[0] == doctest::Approx(0.0));
  CHECK_FALSE(z.z_diff.has(3));
  CHECK(z.flagged_industries == std::vector<std::string>{"B"});

  // Word one SD above, patent one SD below gives 2.
  auto e = grid(3, {2020}, {"A", "A", "A"});
  e = e.with_column("AI_Word", Column(Vector{{1.0, 2.0, 3.0}})).with_column("AI_Patent", Column(Vector{{3.0, 2.0, 1.0}}));
  const auto ze = z_difference(e, "AI_Word", "AI_Patent");
  CHECK(ze.z_diff.values[2] == doctest::Approx(2.0));
  for (Index i = 0; i < 3; ++i) CHECK(ze.z_diff.values[i] == ze.z_word.values[i] - ze.z_patent.values[i]);

  // Location invariance within an industry.
  auto cfg = DgpConfig::for_preset(Preset::did_parallel);
  cfg.n_firms = 100;
  const auto sim = generate_panel(cfg);
  const auto z1 = z_difference(sim.data, "AI_Word", "AI_Patent", kPre);
  Vector shifted = sim.data.column("AI_Word").values;
  for (Index i = 0; i < shifted.size(); ++i)
    if (sim.data.industries()[static_cast<std::size_t>(i)] == "IND03") shifted[i] += 7.5;
  const auto z2 = z_difference(sim.data.with_column("AI_Word", Column(shifted)), "AI_Word", "AI_Patent", kPre);
  CHECK((z1.z_diff.values - z2.z_diff.values).cwiseAbs().maxCoeff() < 1e-12);

  // Pooled pre-period standardization: each industry's pre rows have mean 0, SD 1.
  std::map<std::string, std::vector<double>> pooled;
  for (Index i = 0; i < sim.data.rows(); ++i)
    if (sim.data.years()[static_cast<std::size_t>(i)] <= 2020) pooled[sim.data.industries()[static_cast<std::size_t>(i)]].push_back(z1.z_word.values[i]);
  for (const auto& [ind, v] : pooled) {
    const Eigen::Map<const Vector> m(v.data(), static_cast<Index>(v.size()));
    CHECK(std::abs(m.mean()) < 1e-12);
    CHECK(stats::sample_variance(m) == doctest::Approx(1.0));
  }
}

TEST_CASE("persistence: constant residuals give the identity transition and rho 1") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> series(90);
  for (auto& s : series) s.assign(6, nd(rng));
  const auto d = grid(90, kPre, std::vector<std::string>(90, "A"));
  const auto p = persistence_stats(d, residual_column(d, series));
  CHECK((p.transition - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(p.spearman == doctest::Approx(1.0));
  CHECK(p.n_pairs == 450);
}

TEST_CASE("persistence: independent residuals mix across terciles") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> series(3000, std::vector<double>(6));
  for (auto& s : series)
    for (auto& v : s) v = nd(rng);
  const auto d = grid(3000, kPre, std::vector<std::string>(3000, "A"));
  const auto p = persistence_stats(d, residual_column(d, series));
  for (int r = 0; r < 3; ++r) {
    CHECK(std::abs(p.transition.row(r).sum() - 1.0) < 1e-12);
    CHECK(1.0 - p.transition(r, r) == doctest::Approx(2.0 / 3.0).epsilon(0.03));
  }
  CHECK(std::abs(p.spearman) < 0.03);
}

TEST_CASE("persistence: spearman rises with planted AR persistence") {
  double prev = -1;
  for (double rho : {0.0, 0.4, 0.8}) {
    auto cfg = DgpConfig::for_preset(Preset::persistence);
    cfg.n_firms = 1500;
    cfg.residual_ar = rho;
    const auto sim = generate_panel(cfg);
    WashingSpec spec;
    spec.pre_years = kPre;
    const auto p = persistence_stats(sim.data, decoupling_residuals(sim.data, spec));
    CHECK(p.spearman > prev);
    CHECK(p.spearman == doctest::Approx(gaussian_spearman(rho)).epsilon(0.05).scale(1));
    prev = p.spearman;
  }
}

TEST_CASE("persistence without consecutive pairs is an error") {
  const auto d = grid(3, {2015, 2017}, {"A", "A", "A"});
  Column r(Vector::Ones(6));
  CHECK_THROWS_AS(persistence_stats(d, r), DataError);
}
