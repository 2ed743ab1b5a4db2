#include "flavars/sph_harm.hpp"

#include <cmath>
#include <numbers>

namespace flavars {

namespace {

// Associated Legendre P_l^m(x) for m >= 0, without the Condon-Shortley
// phase, via the standard stable recurrences.
double assoc_legendre(int l, int m, double x) {
  double pmm = 1.0;
  if (m > 0) {
    const double somx2 = std::sqrt((1.0 - x) * (1.0 + x));
    double fact = 1.0;
    for (int i = 1; i <= m; ++i) {
      pmm *= fact * somx2;
      fact += 2.0;
    }
  }
  if (l == m) return pmm;
  double pmmp1 = x * (2.0 * m + 1.0) * pmm;
  if (l == m + 1) return pmmp1;
  double pll = 0.0;
  for (int ll = m + 2; ll <= l; ++ll) {
    pll = (x * (2.0 * ll - 1.0) * pmmp1 - (ll + m - 1.0) * pmm) / (ll - m);
    pmm = pmmp1;
    pmmp1 = pll;
  }
  return pll;
}

double norm_factor(int l, int m) {
  double fact = 1.0;
  for (int i = l - m + 1; i <= l + m; ++i) fact *= i;
  return std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi) / fact);
}

}  // namespace

std::vector<double> spherical_harmonic_features(const GeoCoordinate& coord, int max_degree) {
  if (max_degree < 0) throw ConfigError("spherical_harmonic_features: max_degree < 0");
  const double deg2rad = std::numbers::pi / 180.0;
  const double lon = (coord.lon == -180.0) ? 180.0 : coord.lon;
  const double theta = (90.0 - coord.lat) * deg2rad;
  const double lambda = lon * deg2rad;
  const double ct = std::cos(theta);

  const int count = (max_degree + 1) * (max_degree + 1);
  std::vector<double> feats(static_cast<std::size_t>(count));
  const double sqrt2 = std::numbers::sqrt2;
  for (int l = 0; l <= max_degree; ++l) {
    for (int m = -l; m <= l; ++m) {
      const int am = std::abs(m);
      const double base = norm_factor(l, am) * assoc_legendre(l, am, ct);
      double v;
      if (m == 0)
        v = base;
      else if (m > 0)
        v = sqrt2 * base * std::cos(am * lambda);
      else
        v = sqrt2 * base * std::sin(am * lambda);
      feats[static_cast<std::size_t>(l * l + l + m)] = v;
    }
  }
  return feats;
}

}  // namespace flavars
