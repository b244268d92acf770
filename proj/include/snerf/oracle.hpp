#pragma once

// Synthetic scenes and an analytic Lambertian ray tracer.
//
// Scenes are a flat ground plane plus axis-aligned boxes standing on it. The
// image formation is the model's own shading law with a binary sun term,
//   c = a * (s + (1 - s) * sky),   s in {0, 1},
// so a perfect fit exists by construction.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "snerf/common.hpp"
#include "snerf/field.hpp"
#include "snerf/geometry.hpp"
#include "snerf/raster.hpp"

namespace snerf {

using Json = nlohmann::ordered_json;

struct Box {
  Vec3 center;
  Vec3 size;
  Rgb albedo{0.5, 0.5, 0.5};
  bool transient = false;
  std::vector<int> present_in;  // acquisitions showing a transient box

  Vec3 lo() const { return center - size * 0.5; }
  Vec3 hi() const { return center + size * 0.5; }
};

struct Acquisition {
  double off_nadir = 0.0;     // degrees
  double view_azimuth = 0.0;  // degrees, horizontal direction the view rays travel toward
  SolarDirection sun;
};

inline constexpr double kShadowOffset = 1e-4;

struct SceneSpec {
  std::string preset = "custom";
  std::uint64_t seed = 0;
  double extent_x = 64.0;
  double extent_y = 64.0;
  double h_min = -4.0;
  double h_max = 20.0;
  double ground_z = 0.0;
  int image_size = 64;
  double dem_spacing = 1.0;
  Rgb ground_albedo{0.55, 0.5, 0.42};
  Rgb sky{0.2, 0.3, 0.5};
  std::vector<Box> boxes;
  std::vector<Acquisition> acquisitions;
  SolarDirection path_start;
  SolarDirection path_end;
  SolarDirection held_out_sun;

  SceneBounds bounds() const {
    return {-0.5 * extent_x, 0.5 * extent_x, -0.5 * extent_y, 0.5 * extent_y, h_min, h_max};
  }

  /// Whether box k exists in acquisition acq; acq < 0 is the static scene.
  bool box_active(std::size_t k, int acq) const {
    const Box& b = boxes[k];
    if (!b.transient) return true;
    return acq >= 0 && std::find(b.present_in.begin(), b.present_in.end(), acq) != b.present_in.end();
  }

  void validate() const {
    auto in_unit = [](const Rgb& c) {
      return std::all_of(c.begin(), c.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
    };
    if (!(extent_x > 0.0 && extent_y > 0.0)) throw Error("scene: extents must be positive");
    if (!(h_min < h_max)) throw Error("scene: h_min must be below h_max");
    if (!(ground_z > h_min && ground_z < h_max)) throw Error("scene: ground must lie inside the altitude slab");
    if (image_size < 1) throw Error("scene: image_size must be positive");
    if (!(dem_spacing > 0.0)) throw Error("scene: dem_spacing must be positive");
    if (!in_unit(ground_albedo) || !in_unit(sky)) throw Error("scene: colors must lie in [0,1]");
    if (acquisitions.empty()) throw Error("scene: at least one acquisition is required");
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const Box& b = boxes[k];
      if (!(b.size.x > 0.0 && b.size.y > 0.0 && b.size.z > 0.0))
        throw Error(concat("scene: box ", k, " has a non-positive size"));
      if (b.lo().z < h_min || b.hi().z > h_max)
        throw Error(concat("scene: box ", k, " leaves the altitude slab"));
      if (!in_unit(b.albedo)) throw Error(concat("scene: box ", k, " albedo outside [0,1]"));
      for (int a : b.present_in)
        if (a < 0 || a >= static_cast<int>(acquisitions.size()))
          throw Error(concat("scene: box ", k, " refers to a missing acquisition"));
    }
  }
};

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }
inline Json to_json(const Rgb& c) { return Json::array({c[0], c[1], c[2]}); }
inline Json to_json(const SolarDirection& s) {
  return Json{{"elevation", s.elevation()}, {"azimuth", s.azimuth()}};
}

inline Vec3 vec3_from_json(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
inline Rgb rgb_from_json(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
inline SolarDirection sun_from_json(const Json& j) {
  return SolarDirection(j.at("elevation").get<double>(), j.at("azimuth").get<double>());
}

inline Json scene_to_json(const SceneSpec& s) {
  Json boxes = Json::array();
  for (const Box& b : s.boxes) {
    boxes.push_back(Json{{"center", to_json(b.center)},
                         {"size", to_json(b.size)},
                         {"albedo", to_json(b.albedo)},
                         {"transient", b.transient},
                         {"present_in", b.present_in}});
  }
  Json acqs = Json::array();
  for (const Acquisition& a : s.acquisitions)
    acqs.push_back(Json{{"off_nadir", a.off_nadir}, {"view_azimuth", a.view_azimuth}, {"sun", to_json(a.sun)}});
  return Json{{"preset", s.preset},
              {"seed", s.seed},
              {"extent", {s.extent_x, s.extent_y}},
              {"altitude_bounds", {s.h_min, s.h_max}},
              {"ground_z", s.ground_z},
              {"image_size", s.image_size},
              {"dem_spacing", s.dem_spacing},
              {"ground_albedo", to_json(s.ground_albedo)},
              {"sky", to_json(s.sky)},
              {"boxes", boxes},
              {"acquisitions", acqs},
              {"path_start", to_json(s.path_start)},
              {"path_end", to_json(s.path_end)},
              {"held_out_sun", to_json(s.held_out_sun)}};
}

inline SceneSpec scene_from_json(const Json& j) {
  SceneSpec s;
  try {
    s.preset = j.value("preset", std::string("custom"));
    s.seed = j.value("seed", std::uint64_t{0});
    s.extent_x = j.at("extent").at(0).get<double>();
    s.extent_y = j.at("extent").at(1).get<double>();
    s.h_min = j.at("altitude_bounds").at(0).get<double>();
    s.h_max = j.at("altitude_bounds").at(1).get<double>();
    s.ground_z = j.value("ground_z", 0.0);
    s.image_size = j.at("image_size").get<int>();
    s.dem_spacing = j.at("dem_spacing").get<double>();
    s.ground_albedo = rgb_from_json(j.at("ground_albedo"));
    s.sky = rgb_from_json(j.at("sky"));
    for (const auto& b : j.at("boxes")) {
      Box box;
      box.center = vec3_from_json(b.at("center"));
      box.size = vec3_from_json(b.at("size"));
      box.albedo = rgb_from_json(b.at("albedo"));
      box.transient = b.value("transient", false);
      if (b.contains("present_in")) box.present_in = b.at("present_in").get<std::vector<int>>();
      s.boxes.push_back(std::move(box));
    }
    for (const auto& a : j.at("acquisitions"))
      s.acquisitions.push_back({a.at("off_nadir").get<double>(), a.at("view_azimuth").get<double>(),
                                sun_from_json(a.at("sun"))});
    s.path_start = sun_from_json(j.at("path_start"));
    s.path_end = sun_from_json(j.at("path_end"));
    s.held_out_sun = sun_from_json(j.at("held_out_sun"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(concat("invalid scene JSON: ", e.what()));
  }
  s.validate();
  return s;
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(concat("cannot open ", path.string()));
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(concat("cannot parse ", path.string(), ": ", e.what()));
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(concat("cannot open ", path.string(), " for writing"));
  os << text;
  if (!os) throw Error(concat("write failed: ", path.string()));
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(concat("cannot open ", path.string()));
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline SceneSpec load_scene(const std::filesystem::path& path) { return scene_from_json(read_json(path)); }

// ---------------------------------------------------------------------------
// Ray tracing

struct Hit {
  double t = 0.0;
  Vec3 point;
  Vec3 normal;
  Rgb albedo{};
  int primitive = 0;  // 0 = ground, k + 1 = box k
  int face = 0;       // box faces: 0 -x, 1 +x, 2 -y, 3 +y, 4 -z, 5 +z; ground: 5

  int id() const { return primitive * 8 + face; }
};

namespace detail {

/// Slab test for t >= 0. Returns the entry distance and the face it enters through.
inline std::optional<std::pair<double, int>> intersect_box(const Vec3& lo, const Vec3& hi, const Vec3& o,
                                                           const Vec3& d) {
  const double os[3] = {o.x, o.y, o.z}, ds[3] = {d.x, d.y, d.z};
  const double los[3] = {lo.x, lo.y, lo.z}, his[3] = {hi.x, hi.y, hi.z};
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int face = -1;
  for (int a = 0; a < 3; ++a) {
    if (ds[a] == 0.0) {
      if (os[a] < los[a] || os[a] > his[a]) return std::nullopt;
      continue;
    }
    double t0 = (los[a] - os[a]) / ds[a];
    double t1 = (his[a] - os[a]) / ds[a];
    int f = 2 * a;  // entering through the low face when travelling in +a
    if (t0 > t1) {
      std::swap(t0, t1);
      f = 2 * a + 1;
    }
    if (t0 > t_near) {
      t_near = t0;
      face = f;
    }
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_far < 0.0 || t_near < 0.0) return std::nullopt;
  return std::make_pair(t_near, face);
}

inline Vec3 face_normal(int face) {
  static constexpr double n[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  return {n[face][0], n[face][1], n[face][2]};
}

}  // namespace detail

/// Nearest intersection of the ray (origin + t * direction, t >= 0) with the
/// ground plane and the boxes present in acquisition `acq`.
inline std::optional<Hit> trace_primary(const SceneSpec& scene, const Vec3& origin, const Vec3& direction,
                                        int acq = -1) {
  std::optional<Hit> best;
  if (direction.z < 0.0 && origin.z >= scene.ground_z) {
    const double t = (scene.ground_z - origin.z) / direction.z;
    Hit h;
    h.t = t;
    h.point = origin + direction * t;
    h.point.z = scene.ground_z;
    h.normal = {0.0, 0.0, 1.0};
    h.albedo = scene.ground_albedo;
    h.primitive = 0;
    h.face = 5;
    best = h;
  }
  for (std::size_t k = 0; k < scene.boxes.size(); ++k) {
    if (!scene.box_active(k, acq)) continue;
    const Box& b = scene.boxes[k];
    const auto r = detail::intersect_box(b.lo(), b.hi(), origin, direction);
    if (!r || (best && r->first >= best->t)) continue;
    Hit h;
    h.t = r->first;
    h.point = origin + direction * r->first;
    h.normal = detail::face_normal(r->second);
    h.albedo = b.albedo;
    h.primitive = static_cast<int>(k) + 1;
    h.face = r->second;
    best = h;
  }
  return best;
}

inline std::optional<Hit> trace_primary(const SceneSpec& scene, const Ray& ray, int acq = -1) {
  return trace_primary(scene, ray.origin, ray.direction, acq);
}

/// 1 if the point sees the sun, 0 otherwise. The shadow ray starts
/// kShadowOffset along the surface normal.
inline double sun_visibility(const SceneSpec& scene, const Vec3& point, const Vec3& normal,
                             const SolarDirection& sun, int acq = -1) {
  const Vec3 to_sun = -solar_to_vector(sun);
  const Vec3 o = point + normal * kShadowOffset;
  return trace_primary(scene, o, to_sun, acq) ? 0.0 : 1.0;
}

inline double sun_visibility(const SceneSpec& scene, const Vec3& point, const SolarDirection& sun, int acq = -1) {
  return sun_visibility(scene, point, Vec3{0.0, 0.0, 1.0}, sun, acq);
}

inline Rgb shade(const SceneSpec& scene, const Hit& hit, const SolarDirection& sun, int acq = -1) {
  const double s = sun_visibility(scene, hit.point, hit.normal, sun, acq);
  Rgb c;
  for (int k = 0; k < 3; ++k) c[k] = hit.albedo[k] * (s + (1.0 - s) * scene.sky[k]);
  return c;
}

inline OrthoCamera camera_for(const SceneSpec& scene, const Acquisition& a) {
  OrthoCamera cam;
  cam.view_direction = OrthoCamera::direction_from_angles(a.off_nadir, a.view_azimuth);
  cam.center = {0.0, 0.0, 0.5 * (scene.h_min + scene.h_max)};
  cam.extent_x = scene.extent_x;
  cam.extent_y = scene.extent_y;
  cam.width = scene.image_size;
  cam.height = scene.image_size;
  return cam;
}

/// Nadir camera whose pixels coincide with DEM cells.
inline OrthoCamera dem_camera(const SceneSpec& scene) {
  OrthoCamera cam;
  cam.center = {0.0, 0.0, 0.5 * (scene.h_min + scene.h_max)};
  cam.extent_x = scene.extent_x;
  cam.extent_y = scene.extent_y;
  cam.width = static_cast<int>(std::lround(scene.extent_x / scene.dem_spacing));
  cam.height = static_cast<int>(std::lround(scene.extent_y / scene.dem_spacing));
  return cam;
}

// ---------------------------------------------------------------------------
// Ground truth

struct DemGrid {
  double origin_x = 0.0;  // x of the left edge
  double origin_y = 0.0;  // y of the top (+y) edge
  double spacing = 1.0;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // row-major, row 0 at +y

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  Vec3 cell_center(int r, int c) const {
    return {origin_x + (c + 0.5) * spacing, origin_y - (r + 0.5) * spacing, 0.0};
  }
  Raster raster() const {
    Raster out(cols, rows, 1);
    out.data = values;
    return out;
  }
  void validate() const {
    if (!(spacing > 0.0)) throw Error("DEM spacing must be positive");
    if (values.size() != static_cast<std::size_t>(rows) * cols) throw Error("DEM size mismatch");
    for (double v : values)
      if (!std::isfinite(v)) throw Error("DEM contains a non-finite value");
  }
};

struct GroundTruthView {
  Raster rgb;
  Raster shadow;  // 1 where the visible surface is in shadow
  Raster albedo;
  std::vector<int> ids;  // Hit::id() per pixel, -1 on a miss
};

struct GroundTruthBundle {
  std::vector<GroundTruthView> views;
  DemGrid dem;
  Raster dem_albedo;          // albedo of the static surface per DEM cell
  std::vector<Hit> surface;   // nadir hit per DEM cell, static scene
};

inline GroundTruthView render_oracle_view(const SceneSpec& scene, const OrthoCamera& cam, const SolarDirection& sun,
                                          int acq, int threads = 0) {
  const auto rays = generate_view_rays(cam, scene.h_min, scene.h_max);
  GroundTruthView v;
  v.rgb = Raster(cam.width, cam.height, 3);
  v.shadow = Raster(cam.width, cam.height, 1);
  v.albedo = Raster(cam.width, cam.height, 3);
  v.ids.assign(rays.size(), -1);
  parallel_for(rays.size(), resolve_threads(threads), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto hit = trace_primary(scene, rays[i].ray, acq);
      if (!hit) continue;
      const double s = sun_visibility(scene, hit->point, hit->normal, sun, acq);
      for (int c = 0; c < 3; ++c) {
        v.rgb.data[i * 3 + c] = hit->albedo[c] * (s + (1.0 - s) * scene.sky[c]);
        v.albedo.data[i * 3 + c] = hit->albedo[c];
      }
      v.shadow.data[i] = 1.0 - s;
      v.ids[i] = hit->id();
    }
  });
  return v;
}

inline GroundTruthBundle render_ground_truth(const SceneSpec& scene, int threads = 0) {
  scene.validate();
  GroundTruthBundle gt;
  for (std::size_t a = 0; a < scene.acquisitions.size(); ++a) {
    const Acquisition& acq = scene.acquisitions[a];
    gt.views.push_back(render_oracle_view(scene, camera_for(scene, acq), acq.sun, static_cast<int>(a), threads));
  }
  const OrthoCamera dc = dem_camera(scene);
  gt.dem.origin_x = -0.5 * scene.extent_x;
  gt.dem.origin_y = 0.5 * scene.extent_y;
  gt.dem.spacing = scene.dem_spacing;
  gt.dem.rows = dc.height;
  gt.dem.cols = dc.width;
  gt.dem.values.assign(static_cast<std::size_t>(dc.width) * dc.height, scene.ground_z);
  gt.dem_albedo = Raster(dc.width, dc.height, 3);
  gt.surface.resize(gt.dem.values.size());
  for (int r = 0; r < dc.height; ++r) {
    for (int c = 0; c < dc.width; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * dc.width + c;
      Vec3 o = gt.dem.cell_center(r, c);
      o.z = scene.h_max;
      const auto hit = trace_primary(scene, o, Vec3{0.0, 0.0, -1.0}, -1);
      if (!hit) throw Error("render_ground_truth: nadir ray missed the ground");
      gt.dem.values[i] = hit->point.z;
      gt.surface[i] = *hit;
      for (int k = 0; k < 3; ++k) gt.dem_albedo.data[i * 3 + k] = hit->albedo[k];
    }
  }
  return gt;
}

/// Per DEM cell: 1 if the static surface there is shadowed under `sun`.
inline Raster dem_shadow_mask(const SceneSpec& scene, const GroundTruthBundle& gt, const SolarDirection& sun) {
  Raster m(gt.dem.cols, gt.dem.rows, 1);
  for (std::size_t i = 0; i < gt.surface.size(); ++i)
    m.data[i] = 1.0 - sun_visibility(scene, gt.surface[i].point, gt.surface[i].normal, sun, -1);
  return m;
}

/// Cells shadowed under every sun in the list (persistent shadow), or under at
/// least one of them when `any` is set.
inline Raster dem_shadow_mask(const SceneSpec& scene, const GroundTruthBundle& gt,
                              std::span<const SolarDirection> suns, bool any) {
  Raster m(gt.dem.cols, gt.dem.rows, 1, any ? 0.0 : 1.0);
  for (const auto& sun : suns) {
    const Raster one = dem_shadow_mask(scene, gt, sun);
    for (std::size_t i = 0; i < m.data.size(); ++i)
      m.data[i] = any ? std::max(m.data[i], one.data[i]) : std::min(m.data[i], one.data[i]);
  }
  return m;
}

/// Pixels within one pixel (8-neighbourhood) of a change in visible surface
/// or in shadow state: occlusion edges and shadow edges.
inline Raster boundary_mask(const GroundTruthView& v) {
  const int w = v.rgb.width, h = v.rgb.height;
  Raster m(w, h, 1);
  auto key = [&](int r, int c) {
    const std::size_t i = static_cast<std::size_t>(r) * w + c;
    return std::make_pair(v.ids[i], v.shadow.data[i]);
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          if (key(rr, cc) != key(r, c)) m.at(r, c) = 1.0;
        }
  return m;
}

// ---------------------------------------------------------------------------
// Scene presets

inline const std::vector<std::string>& scene_presets() {
  static const std::vector<std::string> names = {"slab", "single_box", "blocks", "courtyard", "transient"};
  return names;
}

namespace detail {

inline Rgb random_albedo(Rng& rng) {
  return {rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9)};
}

inline Box ground_box(double x0, double y0, double sx, double sy, double height, const Rgb& albedo, double ground) {
  return Box{{x0 + 0.5 * sx, y0 + 0.5 * sy, ground + 0.5 * height}, {sx, sy, height}, albedo, false, {}};
}

inline bool overlaps(const Box& a, const Box& b, double gap) {
  return a.lo().x < b.hi().x + gap && b.lo().x < a.hi().x + gap && a.lo().y < b.hi().y + gap &&
         b.lo().y < a.hi().y + gap;
}

/// City blocks: 4 to 6 integer-aligned boxes separated by streets.
inline void add_blocks(SceneSpec& s, Rng& rng) {
  const int want = 4 + static_cast<int>(rng.uniform_index(3));
  const double margin = 4.0;
  for (int attempt = 0; attempt < 500 && static_cast<int>(s.boxes.size()) < want; ++attempt) {
    const double sx = 8.0 + static_cast<double>(rng.uniform_index(9));
    const double sy = 8.0 + static_cast<double>(rng.uniform_index(9));
    const double h = 5.0 + static_cast<double>(rng.uniform_index(10));
    const double x_span = s.extent_x - 2 * margin - sx;
    const double y_span = s.extent_y - 2 * margin - sy;
    const double x0 = -0.5 * s.extent_x + margin + std::floor(rng.uniform() * (x_span + 1.0));
    const double y0 = -0.5 * s.extent_y + margin + std::floor(rng.uniform() * (y_span + 1.0));
    Box b = ground_box(x0, y0, sx, sy, h, random_albedo(rng), s.ground_z);
    bool clash = false;
    for (const Box& o : s.boxes) clash = clash || overlaps(b, o, 4.0);
    if (!clash) s.boxes.push_back(b);
  }
}

}  // namespace detail

/// Procedural scene. Suns come in two clusters (morning and afternoon); the
/// held-out sun sits halfway along the path between the cluster centres.
inline SceneSpec generate_scene(const std::string& preset, std::uint64_t seed) {
  const auto& names = scene_presets();
  if (std::find(names.begin(), names.end(), preset) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw Error(concat("unknown preset '", preset, "' (available: ", list, ")"));
  }
  SceneSpec s;
  s.preset = preset;
  s.seed = seed;
  Rng rng = Rng::stream(seed, "scene/" + preset);

  if (preset == "single_box") {
    s.boxes.push_back(detail::ground_box(-6.0, -6.0, 12.0, 12.0, 12.0, {0.8, 0.75, 0.7}, s.ground_z));
  } else if (preset == "blocks" || preset == "transient") {
    detail::add_blocks(s, rng);
  } else if (preset == "courtyard") {
    const double h = 6.0 + static_cast<double>(rng.uniform_index(5));
    const Rgb a = detail::random_albedo(rng);
    s.boxes.push_back(detail::ground_box(-16.0, 12.0, 32.0, 4.0, h, a, s.ground_z));
    s.boxes.push_back(detail::ground_box(-16.0, -16.0, 32.0, 4.0, h, a, s.ground_z));
    s.boxes.push_back(detail::ground_box(-16.0, -12.0, 4.0, 24.0, h, a, s.ground_z));
    s.boxes.push_back(detail::ground_box(12.0, -12.0, 4.0, 24.0, h, a, s.ground_z));
  }

  const SolarDirection center_a(45.0, 60.0);
  const SolarDirection center_b(45.0, 120.0);
  std::vector<SolarDirection> suns{center_a};
  suns.emplace_back(center_a.elevation() + rng.uniform(-3.0, 3.0), center_a.azimuth() + rng.uniform(-6.0, 6.0));
  suns.emplace_back(center_a.elevation() + rng.uniform(-3.0, 3.0), center_a.azimuth() + rng.uniform(-6.0, 6.0));
  suns.push_back(center_b);
  const int n_b = 2 + static_cast<int>(rng.uniform_index(2));
  for (int k = 1; k < n_b; ++k)
    suns.emplace_back(center_b.elevation() + rng.uniform(-3.0, 3.0), center_b.azimuth() + rng.uniform(-6.0, 6.0));
  s.path_start = center_a;
  s.path_end = center_b;
  s.held_out_sun = interpolate_solar_path(center_a, center_b, 0.5);

  const int n_acq = 10;
  for (int i = 0; i < n_acq; ++i) {
    Acquisition a;
    a.off_nadir = rng.uniform(0.0, 25.0);
    a.view_azimuth = rng.uniform(0.0, 360.0);
    a.sun = suns[static_cast<std::size_t>(i) % suns.size()];
    s.acquisitions.push_back(a);
  }

  if (preset == "transient") {
    // Two cars parked in the streets, each present in a random subset of acquisitions.
    for (int car = 0; car < 2; ++car) {
      for (int attempt = 0; attempt < 500; ++attempt) {
        const double x0 = std::floor(rng.uniform(-28.0, 24.0));
        const double y0 = std::floor(rng.uniform(-28.0, 26.0));
        Box b = detail::ground_box(x0, y0, 4.0, 2.0, 1.5, detail::random_albedo(rng), s.ground_z);
        bool clash = false;
        for (const Box& o : s.boxes) clash = clash || detail::overlaps(b, o, 1.0);
        if (clash) continue;
        b.transient = true;
        for (int i = 0; i < n_acq; ++i)
          if (rng.uniform() < 0.4) b.present_in.push_back(i);
        s.boxes.push_back(b);
        break;
      }
    }
  }
  s.validate();
  return s;
}

/// Held-out acquisitions: the n conditions farthest from their nearest
/// neighbour in (view direction, sun direction) angle space.
inline std::vector<int> split_test_acquisitions(const SceneSpec& scene, int n_test = 2) {
  const int n = static_cast<int>(scene.acquisitions.size());
  if (n_test < 0 || n_test >= n) throw Error("split: need at least one training acquisition");
  auto angle = [](const Vec3& a, const Vec3& b) { return rad_to_deg(std::acos(std::clamp(dot(a, b), -1.0, 1.0))); };
  std::vector<std::pair<double, int>> isolation;
  for (int i = 0; i < n; ++i) {
    const auto& ai = scene.acquisitions[i];
    const Vec3 vi = OrthoCamera::direction_from_angles(ai.off_nadir, ai.view_azimuth);
    double nearest = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto& aj = scene.acquisitions[j];
      const Vec3 vj = OrthoCamera::direction_from_angles(aj.off_nadir, aj.view_azimuth);
      nearest = std::min(nearest, angle(vi, vj) + angle(solar_to_vector(ai.sun), solar_to_vector(aj.sun)));
    }
    isolation.push_back({-nearest, i});
  }
  std::sort(isolation.begin(), isolation.end());
  std::vector<int> test;
  for (int k = 0; k < n_test; ++k) test.push_back(isolation[k].second);
  std::sort(test.begin(), test.end());
  return test;
}

inline std::vector<int> train_acquisitions(const SceneSpec& scene, const std::vector<int>& test) {
  std::vector<int> train;
  for (int i = 0; i < static_cast<int>(scene.acquisitions.size()); ++i)
    if (std::find(test.begin(), test.end(), i) == test.end()) train.push_back(i);
  return train;
}

// ---------------------------------------------------------------------------
// Dataset on disk

inline std::string view_name(int i, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "view_%02d_%s", i, what);
  return buf;
}

/// Writes scene.json, per-view PNG + float planes (rgb, shadow, albedo),
/// the DEM, and a dataset manifest. Output depends only on the scene.
inline void write_dataset(const std::filesystem::path& dir, const SceneSpec& scene, const GroundTruthBundle& gt) {
  std::filesystem::create_directories(dir);
  write_json(dir / "scene.json", scene_to_json(scene));
  const auto test = split_test_acquisitions(scene);
  Json views = Json::array();
  for (std::size_t i = 0; i < gt.views.size(); ++i) {
    const int k = static_cast<int>(i);
    const auto& v = gt.views[i];
    const auto& a = scene.acquisitions[i];
    write_png(dir / (view_name(k, "rgb") + ".png"), v.rgb);
    write_float_planes(dir / (view_name(k, "rgb") + ".f32"), v.rgb);
    write_png(dir / (view_name(k, "shadow") + ".png"), v.shadow);
    write_float_planes(dir / (view_name(k, "shadow") + ".f32"), v.shadow);
    write_png(dir / (view_name(k, "albedo") + ".png"), v.albedo);
    write_float_planes(dir / (view_name(k, "albedo") + ".f32"), v.albedo);
    const bool is_test = std::find(test.begin(), test.end(), k) != test.end();
    views.push_back(Json{{"index", k},
                         {"split", is_test ? "test" : "train"},
                         {"off_nadir", a.off_nadir},
                         {"view_azimuth", a.view_azimuth},
                         {"sun", to_json(a.sun)},
                         {"rgb", view_name(k, "rgb") + ".f32"},
                         {"shadow", view_name(k, "shadow") + ".f32"},
                         {"albedo", view_name(k, "albedo") + ".f32"}});
  }
  write_float_planes(dir / "dem.f32", gt.dem.raster());
  Raster dem_vis = gt.dem.raster();
  for (double& v : dem_vis.data) v = (v - scene.h_min) / (scene.h_max - scene.h_min);
  write_png(dir / "dem.png", dem_vis);
  write_png(dir / "dem_albedo.png", gt.dem_albedo);
  write_float_planes(dir / "dem_albedo.f32", gt.dem_albedo);
  write_json(dir / "dataset.json", Json{{"scene", "scene.json"},
                                        {"image_size", scene.image_size},
                                        {"altitude_bounds", {scene.h_min, scene.h_max}},
                                        {"dem", "dem.f32"},
                                        {"dem_spacing", scene.dem_spacing},
                                        {"views", views}});
}

// ---------------------------------------------------------------------------
// Analytic field

/// Hard volumetric stand-in for the oracle scene: very large density inside
/// solids, the solid's albedo, the oracle sun visibility of the nearest
/// surface point, and the true sky. Lets the volumetric renderer be checked
/// against the ray tracer.
class AnalyticField {
 public:
  explicit AnalyticField(const SceneSpec& scene, int acq = -1, double density = 1e6)
      : scene_(scene), acq_(acq), density_(density) {}

  FieldBatch evaluate(std::span<const Vec3> points, const Vec3& sun_vector) const {
    const SolarDirection sun = vector_to_solar(sun_vector);
    FieldBatch out;
    const std::size_t n = points.size();
    out.sigma.assign(n, 0.0);
    out.albedo.assign(n, Rgb{0.0, 0.0, 0.0});
    out.s.assign(n, 1.0);
    out.sky.assign(n, scene_.sky);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3& p = points[i];
      Vec3 surface, normal;
      if (!containing_solid(p, out.albedo[i], surface, normal)) continue;
      out.sigma[i] = density_;
      out.s[i] = sun_visibility(scene_, surface, normal, sun, acq_);
    }
    return out;
  }

  const SceneSpec& scene() const { return scene_; }

 private:
  bool containing_solid(const Vec3& p, Rgb& albedo, Vec3& surface, Vec3& normal) const {
    for (std::size_t k = 0; k < scene_.boxes.size(); ++k) {
      if (!scene_.box_active(k, acq_)) continue;
      const Box& b = scene_.boxes[k];
      const Vec3 lo = b.lo(), hi = b.hi();
      if (p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y || p.z < lo.z || p.z > hi.z) continue;
      albedo = b.albedo;
      // Nearest face; ties go to the first face in -x, +x, -y, +y, -z, +z order.
      const double d[6] = {p.x - lo.x, hi.x - p.x, p.y - lo.y, hi.y - p.y, p.z - lo.z, hi.z - p.z};
      const int f = static_cast<int>(std::min_element(d, d + 6) - d);
      surface = p;
      switch (f) {
        case 0: surface.x = lo.x; break;
        case 1: surface.x = hi.x; break;
        case 2: surface.y = lo.y; break;
        case 3: surface.y = hi.y; break;
        case 4: surface.z = lo.z; break;
        default: surface.z = hi.z; break;
      }
      normal = detail::face_normal(f);
      return true;
    }
    if (p.z <= scene_.ground_z) {
      albedo = scene_.ground_albedo;
      surface = {p.x, p.y, scene_.ground_z};
      normal = {0.0, 0.0, 1.0};
      return true;
    }
    return false;
  }

  SceneSpec scene_;
  int acq_;
  double density_;
};

}  // namespace snerf
