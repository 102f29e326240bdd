#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "camnet/errors.hpp"

namespace camnet::geo {

// WGS84 / UTM constants
inline constexpr double kSemiMajorAxis = 6378137.0;
inline constexpr double kFlattening = 1.0 / 298.257223563;
inline constexpr double kScale = 0.9996;
inline constexpr double kFalseEasting = 500000.0;
inline constexpr double kFalseNorthingSouth = 10000000.0;
inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

enum class Hemisphere { North, South };

struct GeoPoint {
  double lat = 0.0;  // degrees WGS84, [-90, 90]
  double lon = 0.0;  // degrees WGS84, [-180, 180)
};

struct UtmPoint {
  double easting = 0.0;   // meters
  double northing = 0.0;  // meters
  int zone = 0;           // 1..60
  Hemisphere hemisphere = Hemisphere::North;
};

// Heading in degrees clockwise from true north, canonicalized to [0, 360).
class Heading {
 public:
  Heading() = default;
  explicit Heading(double degrees) {
    if (!std::isfinite(degrees))
      throw_error(ErrorKind::InvalidCoordinate, "heading must be finite");
    deg_ = std::fmod(degrees, 360.0);
    if (deg_ < 0.0) deg_ += 360.0;
    if (deg_ >= 360.0) deg_ = 0.0;  // fmod can round up to 360
  }
  double degrees() const { return deg_; }

  // math convention: radians counterclockwise from +x (east)
  double radians_math() const {
    double r = (90.0 - deg_) * kDegToRad;
    if (r <= -kPi) r += 2.0 * kPi;
    return r;
  }

 private:
  double deg_ = 0.0;
};

// Smallest absolute angular separation, in [0, 180].
inline double angle_diff(Heading a, Heading b) {
  double d = std::fabs(a.degrees() - b.degrees());
  return d > 180.0 ? 360.0 - d : d;
}

inline int zone_from_lon(double lon) {
  int z = static_cast<int>(std::floor((lon + 180.0) / 6.0)) + 1;
  if (z < 1) z = 1;
  if (z > 60) z = 60;
  return z;
}

inline double central_meridian_deg(int zone) { return zone * 6.0 - 183.0; }

namespace detail {

// Krueger series in the third flattening n, 6th order (Karney 2011).
struct TmCoeffs {
  double n;
  double e;         // first eccentricity
  double e2;        // e^2
  double rect_radius;  // rectifying radius A
  double alpha[6];
  double beta[6];
};

inline const TmCoeffs& tm() {
  static const TmCoeffs c = [] {
    TmCoeffs t{};
    const double f = kFlattening;
    const double n = f / (2.0 - f);
    const double n2 = n * n, n3 = n2 * n, n4 = n3 * n, n5 = n4 * n, n6 = n5 * n;
    t.n = n;
    t.e2 = f * (2.0 - f);
    t.e = std::sqrt(t.e2);
    t.rect_radius =
        kSemiMajorAxis / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
    t.alpha[0] = n / 2.0 - 2.0 / 3.0 * n2 + 5.0 / 16.0 * n3 + 41.0 / 180.0 * n4 -
                 127.0 / 288.0 * n5 + 7891.0 / 37800.0 * n6;
    t.alpha[1] = 13.0 / 48.0 * n2 - 3.0 / 5.0 * n3 + 557.0 / 1440.0 * n4 +
                 281.0 / 630.0 * n5 - 1983433.0 / 1935360.0 * n6;
    t.alpha[2] = 61.0 / 240.0 * n3 - 103.0 / 140.0 * n4 + 15061.0 / 26880.0 * n5 +
                 167603.0 / 181440.0 * n6;
    t.alpha[3] = 49561.0 / 161280.0 * n4 - 179.0 / 168.0 * n5 +
                 6601661.0 / 7257600.0 * n6;
    t.alpha[4] = 34729.0 / 80640.0 * n5 - 3418889.0 / 1995840.0 * n6;
    t.alpha[5] = 212378941.0 / 319334400.0 * n6;
    t.beta[0] = n / 2.0 - 2.0 / 3.0 * n2 + 37.0 / 96.0 * n3 - 1.0 / 360.0 * n4 -
                81.0 / 512.0 * n5 + 96199.0 / 604800.0 * n6;
    t.beta[1] = 1.0 / 48.0 * n2 + 1.0 / 15.0 * n3 - 437.0 / 1440.0 * n4 +
                46.0 / 105.0 * n5 - 1118711.0 / 3870720.0 * n6;
    t.beta[2] = 17.0 / 480.0 * n3 - 37.0 / 840.0 * n4 - 209.0 / 4480.0 * n5 +
                5569.0 / 90720.0 * n6;
    t.beta[3] = 4397.0 / 161280.0 * n4 - 11.0 / 504.0 * n5 -
                830251.0 / 7257600.0 * n6;
    t.beta[4] = 4583.0 / 161280.0 * n5 - 108847.0 / 3991680.0 * n6;
    t.beta[5] = 20648693.0 / 638668800.0 * n6;
    return t;
  }();
  return c;
}

inline double wrap_deg180(double d) {
  d = std::fmod(d, 360.0);
  if (d < -180.0) d += 360.0;
  if (d >= 180.0) d -= 360.0;
  return d;
}

}  // namespace detail

inline void validate(const GeoPoint& p) {
  if (!std::isfinite(p.lat) || !std::isfinite(p.lon))
    throw_error(ErrorKind::InvalidCoordinate, "lat/lon must be finite");
  if (p.lat < -90.0 || p.lat > 90.0)
    throw_error(ErrorKind::InvalidCoordinate,
                "latitude out of range: " + std::to_string(p.lat));
  if (p.lon < -180.0 || p.lon >= 180.0)
    throw_error(ErrorKind::InvalidCoordinate,
                "longitude out of range: " + std::to_string(p.lon));
}

inline void validate(const UtmPoint& p) {
  if (!std::isfinite(p.easting) || !std::isfinite(p.northing))
    throw_error(ErrorKind::InvalidCoordinate, "easting/northing must be finite");
  if (p.zone < 1 || p.zone > 60)
    throw_error(ErrorKind::InvalidCoordinate,
                "zone out of range: " + std::to_string(p.zone));
}

// Transverse Mercator forward, Krueger 6th-order series. Series error is
// well below 1 cm anywhere inside the zone (plus the 1 degree overlap
// margin); standard UTM constants. Zone is computed from lon unless forced.
inline UtmPoint to_utm(const GeoPoint& p, std::optional<int> forced_zone = std::nullopt) {
  validate(p);
  if (std::fabs(p.lat) > 84.5)
    throw_error(ErrorKind::InvalidCoordinate,
                "latitude outside the supported UTM band: " + std::to_string(p.lat));
  int zone = forced_zone.value_or(zone_from_lon(p.lon));
  if (forced_zone) {
    if (*forced_zone < 1 || *forced_zone > 60)
      throw_error(ErrorKind::InvalidCoordinate,
                  "forced zone out of range: " + std::to_string(*forced_zone));
    double off = detail::wrap_deg180(p.lon - central_meridian_deg(zone));
    if (std::fabs(off) >= 7.0)  // half zone width + 1 degree overlap margin
      throw_error(ErrorKind::OutOfZone,
                  "longitude " + std::to_string(p.lon) + " too far from zone " +
                      std::to_string(zone) + " central meridian");
  }
  const auto& c = detail::tm();
  const double phi = p.lat * kDegToRad;
  const double lam = detail::wrap_deg180(p.lon - central_meridian_deg(zone)) * kDegToRad;

  const double tau = std::tan(phi);
  const double sigma = std::sinh(c.e * std::atanh(c.e * tau / std::sqrt(1.0 + tau * tau)));
  const double taup = tau * std::sqrt(1.0 + sigma * sigma) - sigma * std::sqrt(1.0 + tau * tau);

  const double xi_p = std::atan2(taup, std::cos(lam));
  const double eta_p = std::asinh(std::sin(lam) / std::hypot(taup, std::cos(lam)));

  double xi = xi_p, eta = eta_p;
  for (int j = 1; j <= 6; ++j) {
    xi += c.alpha[j - 1] * std::sin(2.0 * j * xi_p) * std::cosh(2.0 * j * eta_p);
    eta += c.alpha[j - 1] * std::cos(2.0 * j * xi_p) * std::sinh(2.0 * j * eta_p);
  }

  UtmPoint out;
  out.zone = zone;
  out.hemisphere = p.lat < 0.0 ? Hemisphere::South : Hemisphere::North;
  out.easting = kFalseEasting + kScale * c.rect_radius * eta;
  out.northing = kScale * c.rect_radius * xi +
                 (out.hemisphere == Hemisphere::South ? kFalseNorthingSouth : 0.0);
  return out;
}

// Inverse projection; round-trips with to_utm to well under 0.01 m.
inline GeoPoint from_utm(const UtmPoint& p) {
  validate(p);
  const auto& c = detail::tm();
  const double y = p.northing - (p.hemisphere == Hemisphere::South ? kFalseNorthingSouth : 0.0);
  const double xi = y / (kScale * c.rect_radius);
  const double eta = (p.easting - kFalseEasting) / (kScale * c.rect_radius);

  double xi_p = xi, eta_p = eta;
  for (int j = 1; j <= 6; ++j) {
    xi_p -= c.beta[j - 1] * std::sin(2.0 * j * xi) * std::cosh(2.0 * j * eta);
    eta_p -= c.beta[j - 1] * std::cos(2.0 * j * xi) * std::sinh(2.0 * j * eta);
  }

  const double taup = std::sin(xi_p) / std::sqrt(std::sinh(eta_p) * std::sinh(eta_p) +
                                                 std::cos(xi_p) * std::cos(xi_p));
  const double lam = std::atan2(std::sinh(eta_p), std::cos(xi_p));

  // Newton inversion of taup(tau)
  const double e2m = 1.0 - c.e2;
  double tau = taup / e2m;
  for (int i = 0; i < 8; ++i) {
    const double tau1 = std::sqrt(1.0 + tau * tau);
    const double sig = std::sinh(c.e * std::atanh(c.e * tau / tau1));
    const double taupa = tau * std::sqrt(1.0 + sig * sig) - sig * tau1;
    const double dtau = (taup - taupa) * (1.0 + e2m * tau * tau) /
                        (e2m * tau1 * std::sqrt(1.0 + taupa * taupa));
    tau += dtau;
    if (std::fabs(dtau) < 1e-14 * std::max(1.0, std::fabs(tau))) break;
  }

  GeoPoint out;
  out.lat = std::atan(tau) * kRadToDeg;
  out.lon = detail::wrap_deg180(central_meridian_deg(p.zone) + lam * kRadToDeg);
  if (!std::isfinite(out.lat) || !std::isfinite(out.lon))
    throw_error(ErrorKind::InvalidCoordinate, "inverse projection diverged");
  return out;
}

// Planar displacement (dx, dy) of b relative to a, both projected into the
// zone of a. Used by the CAM trigger logic (Table-1 style l2 comparisons).
inline std::pair<double, double> planar_delta(const GeoPoint& a, const GeoPoint& b) {
  UtmPoint ua = to_utm(a);
  UtmPoint ub = to_utm(b, ua.zone);
  double dn = ub.northing - ua.northing;
  if (ua.hemisphere != ub.hemisphere) {
    // equator crossing: remove the south false northing bias
    dn = (ub.hemisphere == Hemisphere::South ? ub.northing - kFalseNorthingSouth
                                             : ub.northing) -
         (ua.hemisphere == Hemisphere::South ? ua.northing - kFalseNorthingSouth
                                             : ua.northing);
  }
  return {ub.easting - ua.easting, dn};
}

inline double planar_distance(const GeoPoint& a, const GeoPoint& b) {
  auto [dx, dy] = planar_delta(a, b);
  return std::hypot(dx, dy);
}

}  // namespace camnet::geo
