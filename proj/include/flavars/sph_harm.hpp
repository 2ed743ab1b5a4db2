#pragma once

#include <vector>

#include "flavars/common.hpp"

namespace flavars {

// Geographic coordinate in degrees. Ranges are enforced at construction.
struct GeoCoordinate {
  double lat = 0.0;  // [-90, 90]
  double lon = 0.0;  // [-180, 180]

  GeoCoordinate() = default;
  GeoCoordinate(double lat_deg, double lon_deg) : lat(lat_deg), lon(lon_deg) {
    if (!(lat >= -90.0 && lat <= 90.0))
      throw DataError("GeoCoordinate: lat out of [-90, 90]");
    if (!(lon >= -180.0 && lon <= 180.0))
      throw DataError("GeoCoordinate: lon out of [-180, 180]");
  }
};

// Real orthonormal spherical harmonics Y_l^m for 0 <= l <= max_degree,
// -l <= m <= l, evaluated at colatitude theta = (90 - lat) * pi/180 and
// azimuth lambda = lon * pi/180. Feature index of (l, m) is l^2 + l + m;
// the vector has (max_degree+1)^2 entries. lon = -180 is canonicalized to
// +180 so antimeridian coordinates produce identical features.
std::vector<double> spherical_harmonic_features(const GeoCoordinate& coord, int max_degree);

}  // namespace flavars
