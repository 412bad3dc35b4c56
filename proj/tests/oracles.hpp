#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the estimation code under test.

#include "panelcausal/panel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Indicator matrix of a label vector (levels in order of first sight).
inline MatrixXd dummies(const std::vector<std::string>& labels) {
  std::map<std::string, int> code;
  for (const auto& l : labels) code.emplace(l, static_cast<int>(code.size()));
  MatrixXd D = MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(code.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) D(static_cast<Eigen::Index>(i), code[labels[i]]) = 1.0;
  return D;
}

/// Least squares via complete orthogonal decomposition (handles the rank
/// deficiency of stacked dummy blocks).
inline VectorXd least_squares(const MatrixXd& A, const VectorXd& y) {
  return A.completeOrthogonalDecomposition().solve(y);
}

/// Residual of y after projecting on span(A).
inline VectorXd residual(const MatrixXd& A, const VectorXd& y) { return y - A * least_squares(A, y); }

/// Slopes on X from OLS of y on [X, D].
inline VectorXd dummy_ols_slopes(const MatrixXd& X, const MatrixXd& D, const VectorXd& y) {
  MatrixXd A(X.rows(), X.cols() + D.cols());
  A << X, D;
  return least_squares(A, y).head(X.cols());
}

inline MatrixXd hcat(const std::vector<MatrixXd>& blocks) {
  Eigen::Index cols = 0;
  for (const auto& b : blocks) cols += b.cols();
  MatrixXd out(blocks.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& b : blocks) {
    out.middleCols(c, b.cols()) = b;
    c += b.cols();
  }
  return out;
}

/// Cluster-robust sandwich with the CR1 factor written out term by term.
inline MatrixXd cr1_sandwich(const MatrixXd& X, const VectorXd& u, const std::vector<int>& cluster, double k_total) {
  const MatrixXd bread = (X.transpose() * X).inverse();
  std::map<int, VectorXd> sums;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    auto [it, fresh] = sums.try_emplace(cluster[static_cast<std::size_t>(i)], VectorXd::Zero(X.cols()));
    it->second += X.row(i).transpose() * u[i];
  }
  MatrixXd meat = MatrixXd::Zero(X.cols(), X.cols());
  for (const auto& [g, s] : sums) meat += s * s.transpose();
  const double G = static_cast<double>(sums.size());
  const double N = static_cast<double>(X.rows());
  return (G / (G - 1.0)) * ((N - 1.0) / (N - k_total)) * bread * meat * bread;
}

/// Brute-force maximizer of a 2-D function over a grid refined around the
/// incumbent best point.
inline std::pair<double, double> grid_argmax(const std::function<double(double, double)>& f, double cx, double cy,
                                             double half_width, int levels = 12, int points = 41) {
  double bx = cx, by = cy, best = f(cx, cy);
  double hw = half_width;
  for (int l = 0; l < levels; ++l) {
    const double ox = bx, oy = by;
    for (int i = 0; i < points; ++i)
      for (int j = 0; j < points; ++j) {
        const double x = ox - hw + 2.0 * hw * i / (points - 1);
        const double y = oy - hw + 2.0 * hw * j / (points - 1);
        const double v = f(x, y);
        if (v > best) {
          best = v;
          bx = x;
          by = y;
        }
      }
    hw *= 4.0 / (points - 1);
  }
  return {bx, by};
}

inline std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
  const auto dir = std::filesystem::temp_directory_path() / "panelcausal_tests";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p) << contents;
  return p;
}

/// Kolmogorov distribution upper tail, asymptotic series with the
/// Stephens small-sample adjustment.
inline double ks_uniform_p(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0;
  for (std::size_t i = 0; i < u.size(); ++i)
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - u[i], u[i] - static_cast<double>(i) / n});
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0;
  for (int j = 1; j <= 100; ++j) p += 2.0 * std::pow(-1.0, j - 1) * std::exp(-2.0 * j * j * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace oracle
