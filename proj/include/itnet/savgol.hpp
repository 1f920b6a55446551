#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace itnet {

// Least-squares polynomial fit of degree p over sample offsets `offsets`, returning
// the weights that map window values to the fitted value at `at`:
//   w = e(at)^T (D^T D)^{-1} D^T,  D[n][m] = offsets[n]^m.
// The offsets are scaled to [-1, 1] before forming D to keep the QR well conditioned.
inline std::vector<double> polyfit_weights(const std::vector<double>& offsets, std::size_t p, double at) {
  const auto n = static_cast<Eigen::Index>(offsets.size());
  if (offsets.size() < p + 1) {
    throw std::invalid_argument("savgol: " + std::to_string(offsets.size()) + " points cannot determine a degree-" +
                                std::to_string(p) + " polynomial");
  }
  // Degree 0 is the window mean; the closed form keeps 1/n exact.
  if (p == 0) return std::vector<double>(offsets.size(), 1.0 / static_cast<double>(offsets.size()));
  double scale = 0.0;
  for (double o : offsets) scale = std::max(scale, std::abs(o));
  if (scale == 0.0) scale = 1.0;
  Eigen::MatrixXd D(n, static_cast<Eigen::Index>(p + 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = 1.0;
    for (std::size_t m = 0; m <= p; ++m, v *= offsets[i] / scale) D(i, static_cast<Eigen::Index>(m)) = v;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  if (qr.rank() < static_cast<Eigen::Index>(p + 1)) throw std::invalid_argument("savgol: design matrix is rank deficient");
  // Row vector e(at)^T (D^T D)^{-1} D^T equals (D^+)^T e(at).
  Eigen::VectorXd e(static_cast<Eigen::Index>(p + 1));
  double v = 1.0;
  for (std::size_t m = 0; m <= p; ++m, v *= at / scale) e(static_cast<Eigen::Index>(m)) = v;
  // Solve D^T w = e in the minimum-norm sense: w = Q R^{-T} P^T e.
  const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p + 1, p + 1).template triangularView<Eigen::Upper>();
  const Eigen::VectorXd pe = qr.colsPermutation().transpose() * e;
  const Eigen::VectorXd y = R.transpose().triangularView<Eigen::Lower>().solve(pe);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(n);
  full.head(static_cast<Eigen::Index>(p + 1)) = y;
  const Eigen::VectorXd w = qr.householderQ() * full;
  return std::vector<double>(w.data(), w.data() + n);
}

// Central smoothing weights of a (2l+1)-point window and degree-p polynomial.
inline std::vector<double> savgol_coeffs(std::size_t l, std::size_t p) {
  if (p > 2 * l) {
    throw std::invalid_argument("savgol: order " + std::to_string(p) + " exceeds 2*half_width (" +
                                std::to_string(2 * l) + "); the normal equations are rank deficient");
  }
  std::vector<double> offsets;
  for (long n = -static_cast<long>(l); n <= static_cast<long>(l); ++n) offsets.push_back(static_cast<double>(n));
  return polyfit_weights(offsets, p, 0.0);
}

enum class SavgolEdge {
  Truncated,  // fit on the one-sided window that fits inside the series
  Shifted,    // fit on the full-length window pushed against the boundary
  Raw,        // leave edge samples untouched
};

inline std::vector<double> savgol_smooth(const std::vector<double>& x, std::size_t l, std::size_t p,
                                         SavgolEdge edge = SavgolEdge::Truncated) {
  const std::size_t w = 2 * l + 1;
  if (x.size() < w) {
    throw std::invalid_argument("savgol: series of length " + std::to_string(x.size()) + " is shorter than the " +
                                std::to_string(w) + "-point window");
  }
  const auto c = savgol_coeffs(l, p);
  const std::size_t n = x.size();
  std::vector<double> y(x);
  for (std::size_t i = l; i + l < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < w; ++k) acc += c[k] * x[i - l + k];
    y[i] = acc;
  }
  if (edge == SavgolEdge::Raw) return y;
  auto fit_edge = [&](std::size_t i) {
    std::size_t lo, hi;  // inclusive window
    if (edge == SavgolEdge::Truncated) {
      lo = i >= l ? i - l : 0;
      hi = std::min(n - 1, i + l);
    } else {
      lo = i < l ? 0 : n - w;
      hi = lo + w - 1;
    }
    std::vector<double> offsets;
    for (std::size_t k = lo; k <= hi; ++k) offsets.push_back(static_cast<double>(k) - static_cast<double>(i));
    // A truncated window may hold fewer than p+1 points; fit the highest degree it supports.
    const std::size_t deg = std::min(p, offsets.size() - 1);
    const auto wts = polyfit_weights(offsets, deg, 0.0);
    double acc = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) acc += wts[k - lo] * x[k];
    return acc;
  };
  for (std::size_t i = 0; i < l; ++i) {
    y[i] = fit_edge(i);
    y[n - 1 - i] = fit_edge(n - 1 - i);
  }
  return y;
}

}  // namespace itnet
