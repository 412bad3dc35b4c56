#include <doctest.h>

#include "oracles.hpp"
#include "panelcausal/binary.hpp"
#include "panelcausal/error.hpp"

#include <algorithm>
#include <random>

using namespace panelcausal;

namespace {

// Log-likelihood written directly from the Bernoulli density.
double bernoulli_loglik(Link link, const Vector& y, const Vector& x, double a, double b) {
  double ll = 0;
  for (Index i = 0; i < y.size(); ++i) {
    const double eta = a + b * x[i];
    const double p = link == Link::probit ? 0.5 * std::erfc(-eta / std::sqrt(2.0)) : 1.0 / (1.0 + std::exp(-eta));
    ll += y[i] > 0.5 ? std::log(p) : std::log(1.0 - p);
  }
  return ll;
}

double mean_probability(Link link, const Vector& b, const Matrix& X) {
  double s = 0;
  for (Index i = 0; i < X.rows(); ++i) {
    const double eta = X.row(i).dot(b.head(X.cols())) + b[X.cols()];
    s += link == Link::probit ? 0.5 * std::erfc(-eta / std::sqrt(2.0)) : 1.0 / (1.0 + std::exp(-eta));
  }
  return s / static_cast<double>(X.rows());
}

const Vector kX{{-1.6, -1.1, -0.9, -0.7, -0.4, -0.3, -0.1, 0.0, 0.2, 0.3,
                 0.4, 0.6, 0.7, 0.9, 1.0, 1.2, 1.5, 1.7, 2.0, 2.4}};
const Vector kY{{0, 0, 1, 0, 0, 1, 0, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 0, 1}};

}  // namespace

TEST_CASE("20-row probit and logit agree with a grid search of the log-likelihood") {
  for (Link link : {Link::probit, Link::logit}) {
    const auto fit = binary_mle(kY, Matrix(kX), {"x"}, link);
    CHECK(fit.converged);
    CHECK(fit.gradient_norm < 1e-8);
    const auto [a, b] = oracle::grid_argmax(
        [&](double a0, double b0) { return bernoulli_loglik(link, kY, kX, a0, b0); }, 0.0, 0.0, 4.0, 14);
    CHECK(std::abs(fit.coef("x") - b) < 1e-4);
    CHECK(std::abs(fit.coef("_cons") - a) < 1e-4);
    CHECK(fit.log_likelihood == doctest::Approx(bernoulli_loglik(link, kY, kX, a, b)).epsilon(1e-9));
    CHECK(fit.pseudo_r2 > 0.0);
    CHECK(fit.pseudo_r2 < 1.0);
  }
}

TEST_CASE("McFadden pseudo R2 uses the intercept-only likelihood") {
  const auto fit = binary_mle(kY, Matrix(kX), {"x"}, Link::probit);
  const double p = kY.mean(), n = static_cast<double>(kY.size());
  const double ll0 = n * (p * std::log(p) + (1 - p) * std::log(1 - p));
  CHECK(fit.log_likelihood_null == doctest::Approx(ll0));
  CHECK(fit.pseudo_r2 == doctest::Approx(1.0 - fit.log_likelihood / ll0));
}

TEST_CASE("covariance without clusters is the inverse information; with clusters it is a sandwich") {
  const auto fit = binary_mle(kY, Matrix(kX), {"x"}, Link::logit);
  Matrix A(20, 2);
  A << kX, Vector::Ones(20);
  Vector w(20);
  for (Index i = 0; i < 20; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-A.row(i).dot(fit.coefficients)));
    w[i] = p * (1 - p);
  }
  const Matrix info = A.transpose() * w.asDiagonal() * A;
  CHECK((fit.vcov - info.inverse()).cwiseAbs().maxCoeff() < 1e-8);

  Factor cl;
  for (int i = 0; i < 20; ++i) cl.codes.push_back(i / 4);
  cl.levels = 5;
  const auto cfit = binary_mle(kY, Matrix(kX), {"x"}, Link::logit, &cl);
  Matrix meat = Matrix::Zero(2, 2);
  for (int g = 0; g < 5; ++g) {
    Vector s = Vector::Zero(2);
    for (int i = 4 * g; i < 4 * g + 4; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-A.row(i).dot(fit.coefficients)));
      s += (kY[i] - p) * A.row(i).transpose();
    }
    meat += s * s.transpose();
  }
  const Matrix bread = info.inverse();
  const Matrix V = 1.25 * bread * meat * bread;
  CHECK((cfit.vcov - V).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(cfit.n_clusters == 5);
}

TEST_CASE("average marginal effects match finite differences of the mean probability") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution coin(0.4);
  const int n = 400;
  Matrix X(n, 3);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = nd(rng);
    X(i, 1) = nd(rng) + 0.3 * X(i, 0);
    X(i, 2) = coin(rng) ? 1.0 : 0.0;
    y[i] = (0.2 + 0.7 * X(i, 0) - 0.4 * X(i, 1) + 0.5 * X(i, 2) + nd(rng) > 0) ? 1.0 : 0.0;
  }
  for (Link link : {Link::probit, Link::logit}) {
    const auto fit = binary_mle(y, X, {"a", "b", "d"}, link);
    const auto me = marginal_effects(fit, X);
    REQUIRE(me.size() == 3);
    const double h = 1e-5;
    for (int j = 0; j < 2; ++j) {
      Matrix Xp = X, Xm = X;
      Xp.col(j).array() += h;
      Xm.col(j).array() -= h;
      const double fd = (mean_probability(link, fit.coefficients, Xp) - mean_probability(link, fit.coefficients, Xm)) / (2 * h);
      CHECK(std::abs(me[static_cast<std::size_t>(j)].effect - fd) < 1e-6);
      CHECK_FALSE(me[static_cast<std::size_t>(j)].discrete);
    }
    Matrix X1 = X, X0 = X;
    X1.col(2).setOnes();
    X0.col(2).setZero();
    CHECK(me[2].discrete);
    CHECK(me[2].effect == doctest::Approx(mean_probability(link, fit.coefficients, X1) -
                                          mean_probability(link, fit.coefficients, X0)));

    // Delta-method SE against a numerical gradient of the AME in b.
    auto ame_a = [&](const Vector& b) {
      Matrix Xp = X, Xm = X;
      Xp.col(0).array() += h;
      Xm.col(0).array() -= h;
      return (mean_probability(link, b, Xp) - mean_probability(link, b, Xm)) / (2 * h);
    };
    Vector g(4);
    for (int k = 0; k < 4; ++k) {
      Vector bp = fit.coefficients, bm = fit.coefficients;
      bp[k] += 1e-4;
      bm[k] -= 1e-4;
      g[k] = (ame_a(bp) - ame_a(bm)) / 2e-4;
    }
    CHECK(me[0].se == doctest::Approx(std::sqrt(g.dot(fit.vcov * g))).epsilon(1e-3));
  }
}

TEST_CASE("probit AME at a covariate fixed at zero is b times the density at the intercept") {
  MleResult fit;
  fit.names = {"x", "_cons"};
  fit.coefficients = Vector{{0.8, -0.3}};
  fit.vcov = Matrix::Identity(2, 2) * 0.01;
  fit.link = Link::probit;
  fit.converged = true;
  const Matrix X = Matrix::Zero(10, 1);
  const auto me = marginal_effects(fit, X);
  const double phi = std::exp(-0.5 * 0.09) / std::sqrt(2 * 3.141592653589793);
  CHECK(me[0].effect == doctest::Approx(0.8 * phi).epsilon(1e-12));

  fit.coefficients[0] = 0.0;
  CHECK(marginal_effects(fit, Matrix(kX))[0].effect == 0.0);
}

TEST_CASE("inverse Mills ratio") {
  CHECK(inverse_mills(0.0) == doctest::Approx(0.79788).epsilon(5e-6));
  CHECK(std::abs(inverse_mills(0.0) - 0.79788) < 5e-6);
  // Lower tail behaves like -z.
  CHECK(inverse_mills(-40.0) == doctest::Approx(40.0).epsilon(1e-3));
  CHECK(std::isfinite(inverse_mills(-1e4)));
  CHECK(inverse_mills(8.0) < 1e-13);
  // Continuity across the switch to the asymptotic form.
  CHECK(inverse_mills(-34.999) == doctest::Approx(inverse_mills(-35.001)).epsilon(1e-4));
}

TEST_CASE("independent outcome gives slopes and pseudo R2 near zero") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution coin(0.3);
  const int n = 20000;
  Matrix X(n, 2);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = nd(rng);
    X(i, 1) = nd(rng);
    y[i] = coin(rng) ? 1.0 : 0.0;
  }
  const auto fit = binary_mle(y, X, {"a", "b"}, Link::probit);
  CHECK(std::abs(fit.coef("a")) < 0.05);
  CHECK(std::abs(fit.coef("b")) < 0.05);
  CHECK(fit.pseudo_r2 < 1e-3);
  CHECK(fit.pseudo_r2 >= 0.0);
}

TEST_CASE("perfect separation is reported, not estimated") {
  const Vector x{{-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0}};
  const Vector y{{0, 0, 0, 0, 1, 1, 1, 1}};
  CHECK_THROWS_AS(binary_mle(y, Matrix(x), {"x"}, Link::probit), SeparationError);
  CHECK_THROWS_AS(binary_mle(y, Matrix(x), {"x"}, Link::logit), SeparationError);
}

TEST_CASE("input validation") {
  const Vector ones = Vector::Ones(20);
  CHECK_THROWS_AS(binary_mle(ones, Matrix(kX), {"x"}, Link::probit), DataError);
  Vector bad = kY;
  bad[0] = 0.5;
  CHECK_THROWS_AS(binary_mle(bad, Matrix(kX), {"x"}, Link::probit), DataError);
  Matrix twin(20, 2);
  twin << kX, 2 * kX;
  CHECK_THROWS_AS(binary_mle(kY, twin, {"x", "x2"}, Link::probit), EstimationError);
  CHECK_THROWS_AS(link_from_string("cloglog"), ConfigError);
  CHECK(link_from_string("logit") == Link::logit);
}

TEST_CASE("dataset wrapper skips incomplete rows") {
  std::vector<std::string> firm;
  std::vector<int> year;
  for (int i = 0; i < 20; ++i) {
    firm.push_back(std::to_string(i / 2));
    year.push_back(2015 + i % 2);
  }
  PanelDataset d(firm, year, std::vector<std::string>(20, "C"), std::vector<std::string>(20, "P"));
  Column x(kX);
  x.clear(3);
  d = d.with_column("x", x).with_column("y", Column(kY));
  const auto fit = binary_mle(d, "y", {"x"}, Link::probit, "firm");
  CHECK(fit.n_obs == 19);
  CHECK(fit.n_clusters == 10);
  CHECK(std::find(fit.rows.begin(), fit.rows.end(), 3) == fit.rows.end());
}
