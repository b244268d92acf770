#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "snerf/common.hpp"

namespace snerf {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr bool operator==(const Vec3&) const = default;

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  if (!(n > 0.0)) throw Error("normalized: zero-length vector");
  return v / n;
}
inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

/// Sun position: elevation above the horizon and azimuth of the horizontal
/// propagation direction of sunlight (0 = +x, counterclockwise), in degrees.
class SolarDirection {
 public:
  SolarDirection() = default;
  SolarDirection(double elevation_deg, double azimuth_deg) {
    if (!(elevation_deg > 0.0 && elevation_deg <= 90.0))
      throw Error(concat("solar elevation must be in (0, 90], got ", elevation_deg));
    if (!std::isfinite(azimuth_deg)) throw Error("solar azimuth must be finite");
    elevation_ = elevation_deg;
    azimuth_ = std::fmod(azimuth_deg, 360.0);
    if (azimuth_ < 0.0) azimuth_ += 360.0;
    if (azimuth_ >= 360.0) azimuth_ = 0.0;
  }

  double elevation() const { return elevation_; }
  double azimuth() const { return azimuth_; }

  bool operator==(const SolarDirection&) const = default;

 private:
  double elevation_ = 90.0;
  double azimuth_ = 0.0;
};

/// Downward unit propagation direction of sunlight.
inline Vec3 solar_to_vector(const SolarDirection& d) {
  const double el = deg_to_rad(d.elevation());
  const double az = deg_to_rad(d.azimuth());
  if (d.elevation() == 90.0) return {0.0, 0.0, -1.0};
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), -std::sin(el)};
}

/// Inverse of solar_to_vector; azimuth is 0 for a zenith sun.
inline SolarDirection vector_to_solar(const Vec3& v) {
  const Vec3 u = normalized(v);
  if (!(u.z < 0.0)) throw Error("vector_to_solar: sunlight must travel downward");
  const double el = rad_to_deg(std::asin(std::min(1.0, -u.z)));
  const double horiz = std::hypot(u.x, u.y);
  const double az = horiz < 1e-15 ? 0.0 : rad_to_deg(std::atan2(u.y, u.x));
  return SolarDirection(std::min(90.0, el), az);
}

struct Ray {
  Vec3 origin;
  Vec3 direction;
  double h_min = 0.0;
  double h_max = 1.0;

  Vec3 at_altitude(double h) const {
    return origin + direction * ((h - origin.z) / direction.z);
  }

  void validate() const {
    if (!is_finite(origin) || !is_finite(direction)) throw Error("ray: non-finite component");
    if (std::abs(norm(direction) - 1.0) > 1e-9) throw Error("ray: direction is not unit length");
    if (!(direction.z < 0.0)) throw Error("ray: direction must point downward");
    if (!(h_min < h_max)) throw Error("ray: h_min must be below h_max");
  }
};

/// Axis-aligned scene region: horizontal footprint plus the altitude slab.
struct SceneBounds {
  double x_min = -1.0;
  double x_max = 1.0;
  double y_min = -1.0;
  double y_max = 1.0;
  double h_min = 0.0;
  double h_max = 1.0;
};

/// Parallel-ray camera. Pixel (row, col) sees the footprint point at
/// mid-slab altitude; row 0 is the +y edge of the footprint.
struct OrthoCamera {
  Vec3 view_direction{0.0, 0.0, -1.0};
  Vec3 center;
  double extent_x = 1.0;
  double extent_y = 1.0;
  int width = 1;
  int height = 1;

  /// View direction from an off-nadir angle and the azimuth the ray travels toward.
  static Vec3 direction_from_angles(double off_nadir_deg, double azimuth_deg) {
    const double t = deg_to_rad(off_nadir_deg);
    const double a = deg_to_rad(azimuth_deg);
    return normalized(Vec3{std::sin(t) * std::cos(a), std::sin(t) * std::sin(a), -std::cos(t)});
  }

  Vec3 footprint_point(int row, int col, double altitude) const {
    return {center.x - 0.5 * extent_x + (col + 0.5) * extent_x / width,
            center.y + 0.5 * extent_y - (row + 0.5) * extent_y / height, altitude};
  }
};

struct PixelRay {
  std::size_t pixel = 0;  // row * width + col
  Ray ray;
};

inline std::vector<PixelRay> generate_view_rays(const OrthoCamera& cam, double h_min, double h_max) {
  if (cam.width < 1 || cam.height < 1) throw Error("camera resolution must be at least 1x1");
  if (!(h_min < h_max)) throw Error("generate_view_rays: h_min must be below h_max");
  const Vec3 dir = normalized(cam.view_direction);
  if (!(dir.z < 0.0)) throw Error("generate_view_rays: view direction must point downward");
  const double mid = 0.5 * (h_min + h_max);
  std::vector<PixelRay> rays;
  rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const Vec3 p = cam.footprint_point(r, c, mid);
      const Vec3 origin = p + dir * ((h_max - mid) / dir.z);
      rays.push_back({static_cast<std::size_t>(r) * cam.width + c, Ray{origin, dir, h_min, h_max}});
    }
  }
  return rays;
}

/// Integration points along one ray, ordered by decreasing altitude.
struct SamplePoints {
  Ray ray;
  std::vector<Vec3> positions;
  std::vector<double> altitudes;
  std::vector<double> deltas;
  double bin_width = 0.0;  // altitude width of one stratification bin

  std::size_t size() const { return altitudes.size(); }
};

namespace detail {

inline void check_parameterizable(const Ray& ray) {
  if (std::abs(ray.direction.z) < 1e-6)
    throw Error("near-horizontal ray cannot be parameterized by altitude");
}

// Fills positions and segment lengths from altitudes. The last segment spans
// one stratification bin.
inline void finish_samples(SamplePoints& sp) {
  const double inv_dz = 1.0 / std::abs(sp.ray.direction.z);
  const std::size_t n = sp.altitudes.size();
  sp.positions.resize(n);
  sp.deltas.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sp.positions[i] = sp.ray.at_altitude(sp.altitudes[i]);
    sp.deltas[i] = (i + 1 < n ? sp.altitudes[i] - sp.altitudes[i + 1] : sp.bin_width) * inv_dz;
  }
}

}  // namespace detail

/// Stratified altitudes: one per equal-width bin of [h_min, h_max], at the
/// bin center, or uniformly placed within the bin when jitter is given.
inline SamplePoints sample_altitudes(const Ray& ray, std::size_t n, Rng* jitter = nullptr) {
  if (n < 2) throw Error("sample_altitudes: need at least 2 samples");
  detail::check_parameterizable(ray);
  SamplePoints sp;
  sp.ray = ray;
  sp.bin_width = (ray.h_max - ray.h_min) / static_cast<double>(n);
  sp.altitudes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = jitter ? jitter->uniform() : 0.5;
    sp.altitudes[i] = ray.h_max - (static_cast<double>(i) + u) * sp.bin_width;
  }
  detail::finish_samples(sp);
  return sp;
}

/// Draws m extra altitudes from the piecewise-constant density proportional
/// to the coarse weights and merges them with the coarse samples.
///
/// Weight w_k belongs to the interval between sample k-1 (h_max for k = 0)
/// and sample k: a large w_k means the ray became opaque somewhere between
/// those two altitudes, so that is where the surface lies. Without an rng
/// the draws sit at the quantiles (j + 0.5) / m.
inline SamplePoints importance_resample(const SamplePoints& coarse, std::span<const double> weights,
                                        std::size_t m, Rng* rng = nullptr) {
  const std::size_t n = coarse.size();
  if (weights.size() != n) throw Error("importance_resample: weight count mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error("importance_resample: weights must be non-negative");
    total += w;
  }

  std::vector<double> extra;
  extra.reserve(m);
  if (!(total > 0.0)) {
    extra = sample_altitudes(coarse.ray, std::max<std::size_t>(m, 2), rng).altitudes;
    extra.resize(m);
  } else {
    std::vector<double> cdf(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) cdf[k + 1] = cdf[k] + weights[k] / total;
    cdf[n] = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double u = (static_cast<double>(j) + (rng ? rng->uniform() : 0.5)) / static_cast<double>(m);
      std::size_t k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      k = std::clamp<std::size_t>(k, 1, n) - 1;
      const double top = k == 0 ? coarse.ray.h_max : coarse.altitudes[k - 1];
      const double bottom = coarse.altitudes[k];
      const double span = cdf[k + 1] - cdf[k];
      const double f = span > 0.0 ? std::clamp((u - cdf[k]) / span, 0.0, 1.0) : 0.5;
      extra.push_back(top - f * (top - bottom));
    }
  }

  SamplePoints out;
  out.ray = coarse.ray;
  out.bin_width = coarse.bin_width;
  out.altitudes.reserve(n + m);
  out.altitudes = coarse.altitudes;
  out.altitudes.insert(out.altitudes.end(), extra.begin(), extra.end());
  std::sort(out.altitudes.begin(), out.altitudes.end(), std::greater<>());
  // Keep the ordering strict when a draw lands exactly on another sample.
  for (std::size_t i = 1; i < out.altitudes.size(); ++i)
    if (!(out.altitudes[i] < out.altitudes[i - 1]))
      out.altitudes[i] = std::nextafter(out.altitudes[i - 1], -std::numeric_limits<double>::infinity());
  detail::finish_samples(out);
  return out;
}

/// Spherical linear interpolation between two sun positions.
inline SolarDirection interpolate_solar_path(const SolarDirection& a, const SolarDirection& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error("interpolate_solar_path: t must be in [0, 1]");
  if (t == 0.0) return a;
  if (t == 1.0) return b;
  const Vec3 va = solar_to_vector(a);
  const Vec3 vb = solar_to_vector(b);
  const double c = std::clamp(dot(va, vb), -1.0, 1.0);
  if (c < -1.0 + 1e-12) throw Error("interpolate_solar_path: antipodal directions");
  const double omega = std::acos(c);
  if (omega < 1e-12) return a;
  const double so = std::sin(omega);
  const Vec3 v = va * (std::sin((1.0 - t) * omega) / so) + vb * (std::sin(t * omega) / so);
  return vector_to_solar(v);
}

/// Horizontal region holding the origins of solar-correction rays: the
/// footprint extended up-sun by the horizontal run of a sunbeam across the slab.
inline SceneBounds solar_correction_region(const SceneBounds& bounds, const SolarDirection& sun) {
  const Vec3 dir = solar_to_vector(sun);
  const double horiz = std::hypot(dir.x, dir.y);
  SceneBounds r = bounds;
  if (horiz < 1e-12) return r;
  const double run = (bounds.h_max - bounds.h_min) / std::tan(deg_to_rad(sun.elevation()));
  const double ux = -dir.x / horiz * run;
  const double uy = -dir.y / horiz * run;
  if (ux < 0) r.x_min += ux; else r.x_max += ux;
  if (uy < 0) r.y_min += uy; else r.y_max += uy;
  return r;
}

inline std::vector<Ray> generate_solar_correction_rays(const SceneBounds& bounds, const SolarDirection& sun,
                                                       std::size_t count, Rng& rng) {
  if (count < 1) throw Error("generate_solar_correction_rays: count must be at least 1");
  const Vec3 dir = solar_to_vector(sun);
  const SceneBounds region = solar_correction_region(bounds, sun);
  std::vector<Ray> rays;
  rays.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double x = rng.uniform(region.x_min, region.x_max);
    const double y = rng.uniform(region.y_min, region.y_max);
    rays.push_back(Ray{Vec3{x, y, bounds.h_max}, dir, bounds.h_min, bounds.h_max});
  }
  return rays;
}

}  // namespace snerf
