#ifndef TASFAR_TESTS_ORACLES_HPP
#define TASFAR_TESTS_ORACLES_HPP

// Independent reference computations for the test suites. Everything here
// deliberately avoids the library's own numeric paths.

#include <cmath>
#include <functional>
#include <vector>

#include "tasfar/types.hpp"

namespace oracles {

using tasfar::Scalar;

// Adaptive Simpson quadrature with interval-halving error control.
inline Scalar simpson(const std::function<Scalar(Scalar)>& f, Scalar a, Scalar b, Scalar fa,
                      Scalar fb, Scalar fm, Scalar eps, int depth) {
  const Scalar m = 0.5 * (a + b);
  const Scalar lm = 0.5 * (a + m);
  const Scalar rm = 0.5 * (m + b);
  const Scalar flm = f(lm);
  const Scalar frm = f(rm);
  const Scalar whole = (b - a) / 6.0 * (fa + 4 * fm + fb);
  const Scalar left = (m - a) / 6.0 * (fa + 4 * flm + fm);
  const Scalar right = (b - m) / 6.0 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15 * eps) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson(f, a, m, fa, fm, flm, eps / 2, depth - 1) +
         simpson(f, m, b, fm, fb, frm, eps / 2, depth - 1);
}

inline Scalar integrate(const std::function<Scalar(Scalar)>& f, Scalar a, Scalar b,
                        Scalar eps = 1e-13) {
  if (a >= b) return 0.0;
  const Scalar m = 0.5 * (a + b);
  return simpson(f, a, b, f(a), f(b), f(m), eps, 48);
}

inline Scalar gaussian_pdf(Scalar y, Scalar mu, Scalar sigma) {
  const Scalar z = (y - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
}

// Gaussian interval mass by quadrature of the density itself.
inline Scalar gaussian_cell_mass_quadrature(Scalar mu, Scalar sigma, Scalar lo, Scalar hi) {
  // clip to +-10 sigma; the remainder is below 1e-23
  const Scalar a = std::max(lo, mu - 10 * sigma);
  const Scalar b = std::min(hi, mu + 10 * sigma);
  if (a >= b) return 0.0;
  return integrate([=](Scalar y) { return gaussian_pdf(y, mu, sigma); }, a, b);
}

inline Scalar pearson(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  const auto n = static_cast<Scalar>(a.size());
  Scalar ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  Scalar sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace oracles

#endif
