#ifndef ADUNIT__LANE__POLYFIT_HPP_
#define ADUNIT__LANE__POLYFIT_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "adunit/error.hpp"

namespace adunit::lane
{

/// Coefficients a_0..a_k of a_0 + a_1 x + ... + a_k x^k.
struct PolyCoeffs
{
  std::vector<double> a;

  std::size_t degree() const noexcept {return a.empty() ? 0 : a.size() - 1;}

  double operator()(double x) const noexcept
  {
    double y = 0.0;
    for (auto it = a.rbegin(); it != a.rend(); ++it) {
      y = y * x + *it;
    }
    return y;
  }

  friend bool operator==(const PolyCoeffs &, const PolyCoeffs &) = default;
};

struct Sample
{
  double x {0.0};
  double y {0.0};
};

namespace detail
{

/// Solves the n x n system (row-major `m`) in place by Gaussian elimination
/// with partial pivoting.
inline std::vector<double> gauss_solve(std::vector<double> m, std::vector<double> rhs)
{
  const std::size_t n = rhs.size();
  double scale = 0.0;
  for (double v : m) {
    scale = std::max(scale, std::abs(v));
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(Errc::singular_system, "zero or non-finite matrix");
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m[r * n + col]) > std::abs(m[pivot * n + col])) {
        pivot = r;
      }
    }
    if (std::abs(m[pivot * n + col]) <= 1e-13 * scale) {
      throw Error(Errc::singular_system, "matrix is singular to working precision");
    }
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(m[col * n + c], m[pivot * n + c]);
      }
      std::swap(rhs[col], rhs[pivot]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m[r * n + col] / m[col * n + col];
      if (f == 0.0) {
        continue;
      }
      for (std::size_t c = col; c < n; ++c) {
        m[r * n + c] -= f * m[col * n + c];
      }
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0; ) {
    double s = rhs[i];
    for (std::size_t c = i + 1; c < n; ++c) {
      s -= m[i * n + c] * x[c];
    }
    x[i] = s / m[i * n + i];
  }
  return x;
}

inline std::size_t count_distinct_x(std::span<const Sample> pts, std::size_t enough)
{
  std::vector<double> xs;
  xs.reserve(pts.size());
  for (const auto & p : pts) {
    xs.push_back(p.x);
  }
  std::sort(xs.begin(), xs.end());
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < xs.size() && distinct < enough; ++i) {
    if (i == 0 || xs[i] != xs[i - 1]) {
      ++distinct;
    }
  }
  return distinct;
}

// Power sums sum x^j for j = 0..2k and sum y x^j for j = 0..k.
inline void power_sums(
  std::span<const Sample> pts, std::size_t k, double x_scale, std::vector<double> & sx,
  std::vector<double> & sxy)
{
  sx.assign(2 * k + 1, 0.0);
  sxy.assign(k + 1, 0.0);
  for (const auto & p : pts) {
    const double x = p.x / x_scale;
    double xp = 1.0;
    for (std::size_t j = 0; j <= 2 * k; ++j) {
      sx[j] += xp;
      if (j <= k) {
        sxy[j] += p.y * xp;
      }
      xp *= x;
    }
  }
}

inline std::vector<double> normal_matrix(const std::vector<double> & sx, std::size_t k)
{
  const std::size_t n = k + 1;
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m[i * n + j] = sx[i + j];
    }
  }
  return m;
}

}  // namespace detail

/// Least-squares polynomial of degree k through `pts` via the normal
/// equations (matrix of power sums times a = moment vector). Abscissae are
/// scaled by max|x| before accumulation and the coefficients rescaled after.
inline PolyCoeffs polyfit(std::span<const Sample> pts, std::size_t k)
{
  if (pts.size() < k + 1 || detail::count_distinct_x(pts, k + 1) < k + 1) {
    throw Error(Errc::singular_system, "need at least k+1 distinct abscissae");
  }
  double x_scale = 0.0;
  for (const auto & p : pts) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw Error(Errc::singular_system, "non-finite sample");
    }
    x_scale = std::max(x_scale, std::abs(p.x));
  }
  if (x_scale == 0.0) {
    x_scale = 1.0;
  }
  std::vector<double> sx;
  std::vector<double> sxy;
  detail::power_sums(pts, k, x_scale, sx, sxy);
  std::vector<double> a = detail::gauss_solve(detail::normal_matrix(sx, k), sxy);
  double s = 1.0;
  for (double & c : a) {
    c /= s;
    s *= x_scale;
  }
  return {std::move(a)};
}

/// Normwise relative residual ||A a - b|| / (||A|| ||a|| + ||b||) of the
/// unscaled normal equations, infinity norms.
inline double normal_equation_residual(std::span<const Sample> pts, const PolyCoeffs & coeffs)
{
  const std::size_t k = coeffs.degree();
  const std::size_t n = k + 1;
  std::vector<double> sx;
  std::vector<double> sxy;
  detail::power_sums(pts, k, 1.0, sx, sxy);
  const auto m = detail::normal_matrix(sx, k);
  double r_norm = 0.0;
  double m_norm = 0.0;
  double a_norm = 0.0;
  double b_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    long double acc = 0.0L;
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += static_cast<long double>(m[i * n + j]) * coeffs.a[j];
      row += std::abs(m[i * n + j]);
    }
    r_norm = std::max(r_norm, static_cast<double>(std::abs(acc - sxy[i])));
    m_norm = std::max(m_norm, row);
    a_norm = std::max(a_norm, std::abs(coeffs.a[i]));
    b_norm = std::max(b_norm, std::abs(sxy[i]));
  }
  const double denom = m_norm * a_norm + b_norm;
  return denom > 0.0 ? r_norm / denom : 0.0;
}

}  // namespace adunit::lane

#endif  // ADUNIT__LANE__POLYFIT_HPP_
