#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace snerf;

namespace {

SceneSpec one_box_scene(double size, double height) {
  SceneSpec s = generate_scene("slab", 0);
  s.extent_x = s.extent_y = 64.0;
  s.boxes.push_back(Box{{0.0, 0.0, 0.5 * height}, {size, size, height}, {0.8, 0.7, 0.6}, false, {}});
  s.validate();
  return s;
}

// Nearest hit by testing each face plane separately; independent of the slab method.
std::optional<std::pair<double, int>> brute_force_hit(const SceneSpec& s, const Vec3& o, const Vec3& d) {
  std::optional<std::pair<double, int>> best;
  auto consider = [&](double t, int prim) {
    if (t >= 0.0 && (!best || t < best->first)) best = std::make_pair(t, prim);
  };
  if (d.z < 0.0) consider((s.ground_z - o.z) / d.z, 0);
  for (std::size_t k = 0; k < s.boxes.size(); ++k) {
    const Vec3 lo = s.boxes[k].lo(), hi = s.boxes[k].hi();
    for (int axis = 0; axis < 3; ++axis) {
      if (d[axis] == 0.0) continue;
      for (double plane : {axis == 0 ? lo.x : axis == 1 ? lo.y : lo.z, axis == 0 ? hi.x : axis == 1 ? hi.y : hi.z}) {
        const double t = (plane - o[axis]) / d[axis];
        const Vec3 p = o + d * t;
        bool inside = true;
        for (int b = 0; b < 3; ++b) {
          if (b == axis) continue;
          const double l = b == 0 ? lo.x : b == 1 ? lo.y : lo.z, h = b == 0 ? hi.x : b == 1 ? hi.y : hi.z;
          inside = inside && p[b] >= l - 1e-12 && p[b] <= h + 1e-12;
        }
        if (inside) consider(t, static_cast<int>(k) + 1);
      }
    }
  }
  return best;
}

double mask_sum(const Raster& r) {
  double s = 0.0;
  for (double v : r.data) s += v;
  return s;
}

}  // namespace

TEST(TracePrimary, NadirHitsGroundAndBoxTop) {
  const SceneSpec s = one_box_scene(8.0, 10.0);
  const auto ground = trace_primary(s, Vec3{20.0, 20.0, 19.0}, Vec3{0.0, 0.0, -1.0});
  ASSERT_TRUE(ground);
  EXPECT_EQ(ground->primitive, 0);
  EXPECT_DOUBLE_EQ(ground->point.z, 0.0);
  EXPECT_DOUBLE_EQ(ground->t, 19.0);
  const auto top = trace_primary(s, Vec3{1.0, 1.0, 19.0}, Vec3{0.0, 0.0, -1.0});
  ASSERT_TRUE(top);
  EXPECT_EQ(top->primitive, 1);
  EXPECT_EQ(top->face, 5);
  EXPECT_DOUBLE_EQ(top->point.z, 10.0);
  EXPECT_EQ(top->normal, (Vec3{0.0, 0.0, 1.0}));
}

TEST(TracePrimary, MatchesBruteForceFacePlanes) {
  const SceneSpec s = generate_scene("blocks", 3);
  Rng rng(1);
  int box_hits = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 d = OrthoCamera::direction_from_angles(rng.uniform(0.0, 60.0), rng.uniform(0.0, 360.0));
    const Vec3 o{rng.uniform(-32.0, 32.0), rng.uniform(-32.0, 32.0), s.h_max};
    const auto hit = trace_primary(s, o, d);
    const auto ref = brute_force_hit(s, o, d);
    ASSERT_EQ(hit.has_value(), ref.has_value());
    if (!hit) continue;
    ASSERT_NEAR(hit->t, ref->first, 1e-9);
    if (std::abs(hit->t - ref->first) < 1e-12) EXPECT_EQ(hit->primitive, ref->second);
    box_hits += hit->primitive > 0;
  }
  EXPECT_GT(box_hits, 50);
}

TEST(SunVisibility, ZenithSunOnOpenGroundIsLit) {
  const SceneSpec s = one_box_scene(8.0, 10.0);
  EXPECT_EQ(sun_visibility(s, Vec3{20.0, 20.0, 0.0}, SolarDirection(90.0, 0.0)), 1.0);
  EXPECT_EQ(sun_visibility(s, Vec3{1.0, 1.0, 10.0}, SolarDirection(90.0, 0.0)), 1.0);
}

TEST(SunVisibility, BoxShadowsDownSunSide) {
  const SceneSpec s = one_box_scene(8.0, 10.0);
  const SolarDirection sun(45.0, 90.0);  // light travels toward +y
  EXPECT_EQ(sun_visibility(s, Vec3{0.0, 4.5, 0.0}, sun), 0.0);
  EXPECT_EQ(sun_visibility(s, Vec3{0.0, 13.9, 0.0}, sun), 0.0);
  EXPECT_EQ(sun_visibility(s, Vec3{0.0, 14.1, 0.0}, sun), 1.0);
  EXPECT_EQ(sun_visibility(s, Vec3{0.0, -4.5, 0.0}, sun), 1.0);
  EXPECT_EQ(sun_visibility(s, Vec3{4.5, 8.0, 0.0}, sun), 1.0);
}

TEST(ShadowArea, MatchesCastLength) {
  const SceneSpec s = one_box_scene(8.0, 10.0);
  const GroundTruthBundle gt = render_ground_truth(s, 1);
  EXPECT_NEAR(mask_sum(dem_shadow_mask(s, gt, SolarDirection(45.0, 0.0))), 80.0, 2.0);
  const double el = rad_to_deg(std::atan(2.0));
  EXPECT_NEAR(mask_sum(dem_shadow_mask(s, gt, SolarDirection(el, 0.0))), 40.0, 2.0);
}

TEST(Shade, Examples) {
  const SceneSpec s = one_box_scene(8.0, 10.0);
  const SolarDirection sun(45.0, 90.0);
  Hit lit;
  lit.point = {0.0, -10.0, 0.0};
  lit.normal = {0.0, 0.0, 1.0};
  lit.albedo = {0.5, 0.5, 0.5};
  EXPECT_EQ(shade(s, lit, sun), lit.albedo);
  Hit dark = lit;
  dark.point = {0.0, 8.0, 0.0};
  const Rgb c = shade(s, dark, sun);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(c[k], 0.5 * s.sky[k]);
}

TEST(Dem, SlabIsFlat) {
  const SceneSpec s = generate_scene("slab", 0);
  const GroundTruthBundle gt = render_ground_truth(s, 1);
  EXPECT_EQ(gt.dem.rows, 64);
  for (double v : gt.dem.values) ASSERT_EQ(v, s.ground_z);
}

TEST(Dem, SingleBoxHeightAndArea) {
  const SceneSpec s = generate_scene("single_box", 0);
  const GroundTruthBundle gt = render_ground_truth(s, 1);
  double mx = -1e9;
  int raised = 0;
  for (double v : gt.dem.values) {
    mx = std::max(mx, v);
    raised += v > s.ground_z;
  }
  EXPECT_DOUBLE_EQ(mx, 12.0);
  EXPECT_EQ(raised, 144);
}

TEST(Dem, InvariantUnderBoxPermutation) {
  SceneSpec s = generate_scene("blocks", 1);
  const GroundTruthBundle a = render_ground_truth(s, 1);
  std::reverse(s.boxes.begin(), s.boxes.end());
  const GroundTruthBundle b = render_ground_truth(s, 1);
  EXPECT_EQ(a.dem.values, b.dem.values);
  EXPECT_EQ(a.dem_albedo.data, b.dem_albedo.data);
}

TEST(ShadowMask, AgreesWithSunVisibility) {
  const SceneSpec s = generate_scene("blocks", 2);
  const GroundTruthBundle gt = render_ground_truth(s, 1);
  const SolarDirection sun = s.acquisitions[0].sun;
  const Raster m = dem_shadow_mask(s, gt, sun);
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const std::size_t i = rng.uniform_index(gt.surface.size());
    const Hit& h = gt.surface[i];
    EXPECT_EQ(m.data[i], 1.0 - sun_visibility(s, h.point, h.normal, sun));
  }
  std::vector<SolarDirection> suns;
  for (const auto& a : s.acquisitions) suns.push_back(a.sun);
  const Raster any = dem_shadow_mask(s, gt, suns, true), all = dem_shadow_mask(s, gt, suns, false);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    EXPECT_GE(any.data[i], m.data[i]);
    EXPECT_LE(all.data[i], m.data[i]);
  }
  EXPECT_GT(mask_sum(any), mask_sum(all));
}

TEST(BoundaryMask, MarksOcclusionEdges) {
  const SceneSpec s = one_box_scene(8.0, 10.0);
  OrthoCamera cam = dem_camera(s);
  const GroundTruthView v = render_oracle_view(s, cam, SolarDirection(90.0, 0.0), -1, 1);
  const Raster m = boundary_mask(v);
  // Zenith sun, nadir view: only the box outline is an edge, one ring on each side.
  EXPECT_DOUBLE_EQ(mask_sum(m), 28.0 + 36.0);
  EXPECT_EQ(m.at(32, 32), 0.0);
  EXPECT_EQ(m.at(28, 28), 1.0);
}

TEST(Presets, SlabHasNoBoxes) { EXPECT_TRUE(generate_scene("slab", 4).boxes.empty()); }

TEST(Presets, DeterministicPerSeed) {
  const auto a = scene_to_json(generate_scene("blocks", 9)).dump();
  EXPECT_EQ(a, scene_to_json(generate_scene("blocks", 9)).dump());
  EXPECT_NE(a, scene_to_json(generate_scene("blocks", 10)).dump());
}

TEST(Presets, ManySeedsValidate) {
  for (const auto& p : scene_presets())
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const SceneSpec s = generate_scene(p, seed);
      EXPECT_NO_THROW(s.validate());
      EXPECT_EQ(s.acquisitions.size(), 10u);
      if (p == "blocks") {
        EXPECT_GE(s.boxes.size(), 4u);
        EXPECT_LE(s.boxes.size(), 6u);
      }
    }
}

TEST(Presets, UnknownNameListsChoices) {
  try {
    generate_scene("nope", 0);
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    for (const auto& p : scene_presets()) EXPECT_NE(msg.find(p), std::string::npos) << msg;
  }
}

TEST(Presets, TransientBoxesOnlyInTheirAcquisitions) {
  const SceneSpec s = generate_scene("transient", 5);
  int transient = 0;
  for (std::size_t k = 0; k < s.boxes.size(); ++k) {
    if (!s.boxes[k].transient) continue;
    ++transient;
    EXPECT_FALSE(s.box_active(k, -1));
    for (int a = 0; a < 10; ++a) {
      const bool listed =
          std::find(s.boxes[k].present_in.begin(), s.boxes[k].present_in.end(), a) != s.boxes[k].present_in.end();
      EXPECT_EQ(s.box_active(k, a), listed);
    }
  }
  EXPECT_GT(transient, 0);
  // The static DEM ignores transients, so it equals the DEM with them removed.
  SceneSpec stripped = s;
  std::erase_if(stripped.boxes, [](const Box& b) { return b.transient; });
  EXPECT_EQ(render_ground_truth(s, 1).dem.values, render_ground_truth(stripped, 1).dem.values);
}

TEST(SceneJson, RoundTrip) {
  const SceneSpec s = generate_scene("transient", 7);
  const Json j = scene_to_json(s);
  const SceneSpec back = scene_from_json(j);
  EXPECT_EQ(scene_to_json(back).dump(), j.dump());
  Json bad = j;
  bad.erase("extent");
  EXPECT_THROW(scene_from_json(bad), Error);
}

TEST(Split, TwoMostIsolatedAcquisitions) {
  const SceneSpec s = generate_scene("blocks", 0);
  const auto test = split_test_acquisitions(s);
  ASSERT_EQ(test.size(), 2u);
  const auto train = train_acquisitions(s, test);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(test, split_test_acquisitions(s));
  EXPECT_THROW(split_test_acquisitions(s, 10), Error);
}

TEST(Dataset, WritesExpectedFiles) {
  SceneSpec s = generate_scene("single_box", 0);
  s.image_size = 8;
  const auto dir = std::filesystem::temp_directory_path() / "snerf_test_dataset";
  std::filesystem::remove_all(dir);
  write_dataset(dir, s, render_ground_truth(s, 1));
  for (const char* f : {"scene.json", "dataset.json", "dem.f32", "dem.png", "view_00_rgb.png", "view_09_albedo.f32"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  EXPECT_EQ(load_scene(dir / "scene.json").boxes.size(), 1u);
  std::filesystem::remove_all(dir);
}
