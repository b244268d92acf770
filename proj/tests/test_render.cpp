#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace snerf;
using ad::Tensor;
using ad::Value;

namespace {

SceneSpec slab_at(double ground) {
  SceneSpec s = generate_scene("slab", 0);
  s.ground_z = ground;
  s.validate();
  return s;
}

// Product-form transmittance, written independently of composite().
std::vector<double> reference_weights(const std::vector<double>& sigma, const std::vector<double>& delta) {
  std::vector<double> w(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    double t = 1.0;
    for (std::size_t j = 0; j < i; ++j) t *= std::exp(-sigma[j] * delta[j]);
    w[i] = t * (1.0 - std::exp(-sigma[i] * delta[i]));
  }
  return w;
}

Ray random_ray(Rng& rng, double h_min, double h_max) {
  const Vec3 dir = OrthoCamera::direction_from_angles(rng.uniform(0.0, 30.0), rng.uniform(0.0, 360.0));
  return Ray{{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0), h_max}, dir, h_min, h_max};
}

}  // namespace

TEST(Composite, ZeroDensityIsTransparent) {
  const std::vector<double> sigma(5, 0.0), delta(5, 1.0);
  const CompositeWeights cw = composite(sigma, delta);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(cw.weights[i], 0.0);
    EXPECT_EQ(cw.transmittance[i], 1.0);
  }
  EXPECT_EQ(cw.final_transmittance, 1.0);
  EXPECT_EQ(cw.opacity(), 0.0);
}

TEST(Composite, HalfOpaqueSamples) {
  const std::vector<double> sigma(2, std::log(2.0)), delta(2, 1.0);
  const CompositeWeights cw = composite(sigma, delta);
  EXPECT_NEAR(cw.alpha[0], 0.5, 1e-15);
  EXPECT_NEAR(cw.transmittance[1], 0.5, 1e-15);
  EXPECT_NEAR(cw.weights[0], 0.5, 1e-15);
  EXPECT_NEAR(cw.weights[1], 0.25, 1e-15);
  EXPECT_NEAR(cw.final_transmittance, 0.25, 1e-15);
}

TEST(Composite, MatchesIndependentProduct) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> sigma(16), delta(16);
    for (int i = 0; i < 16; ++i) {
      sigma[i] = rng.uniform(0.0, 3.0);
      delta[i] = rng.uniform(0.01, 1.0);
    }
    const auto ref = reference_weights(sigma, delta);
    const CompositeWeights cw = composite(sigma, delta);
    for (int i = 0; i < 16; ++i) ASSERT_NEAR(cw.weights[i], ref[i], 1e-14);
  }
}

TEST(Composite, RejectsBadInput) {
  EXPECT_THROW(composite(std::vector<double>{-0.1}, std::vector<double>{1.0}), Error);
  EXPECT_THROW(composite(std::vector<double>{1.0}, std::vector<double>{0.0}), Error);
  EXPECT_THROW(composite(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), Error);
}

TEST(Composite, InvariantsOnRandomRays) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(40);
    std::vector<double> sigma(n), delta(n);
    std::vector<Rgb> alb(n), light(n);
    double max_c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sigma[i] = rng.uniform() < 0.2 ? 0.0 : std::exp(rng.uniform(-5.0, 5.0));
      delta[i] = rng.uniform(1e-3, 2.0);
      const double s = rng.uniform();
      const Rgb sky{rng.uniform(), rng.uniform(), rng.uniform()};
      alb[i] = {rng.uniform(), rng.uniform(), rng.uniform()};
      light[i] = mix_light(s, sky);
      for (int c = 0; c < 3; ++c) max_c = std::max(max_c, alb[i][c] * light[i][c]);
    }
    const CompositeWeights cw = composite(sigma, delta);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_GE(cw.weights[i], 0.0);
      ASSERT_GE(cw.alpha[i], 0.0);
      ASSERT_LE(cw.alpha[i], 1.0);
      if (i > 0) ASSERT_LE(cw.transmittance[i], cw.transmittance[i - 1]);
      sum += cw.weights[i];
    }
    ASSERT_NEAR(sum + cw.final_transmittance, 1.0, 1e-12);
    ASSERT_LE(cw.opacity(), 1.0 + 1e-12);
    const Rgb c = render_shaded(cw, alb, light);
    for (int k = 0; k < 3; ++k) {
      ASSERT_GE(c[k], 0.0);
      ASSERT_LE(c[k], max_c * (1.0 + 1e-12));
    }
  }
}

TEST(MixLight, Examples) {
  const Rgb sky{0.2, 0.3, 0.5};
  EXPECT_EQ(mix_light(1.0, sky), (Rgb{1.0, 1.0, 1.0}));
  EXPECT_EQ(mix_light(0.0, sky), sky);
  const Rgb half = mix_light(0.5, sky);
  EXPECT_DOUBLE_EQ(half[0], 0.6);
  EXPECT_DOUBLE_EQ(half[1], 0.65);
  EXPECT_DOUBLE_EQ(half[2], 0.75);
}

TEST(RenderShaded, FullSunIsEmissive) {
  Rng rng(3);
  std::vector<double> sigma(12), delta(12, 0.5);
  std::vector<Rgb> alb(12), light(12);
  for (int i = 0; i < 12; ++i) {
    sigma[i] = rng.uniform(0.0, 2.0);
    alb[i] = {rng.uniform(), rng.uniform(), rng.uniform()};
    light[i] = mix_light(1.0, {rng.uniform(), rng.uniform(), rng.uniform()});
  }
  const CompositeWeights cw = composite(sigma, delta);
  EXPECT_EQ(render_shaded(cw, alb, light), render_emissive(cw, alb));
}

TEST(RenderShaded, OneHotWeightPicksThatSample) {
  CompositeWeights cw;
  cw.weights = {0.0, 1.0, 0.0};
  const std::vector<Rgb> alb{{0.1, 0.1, 0.1}, {0.5, 0.6, 0.7}, {0.9, 0.9, 0.9}};
  const std::vector<Rgb> light(3, mix_light(0.0, {0.2, 0.3, 0.5}));
  const Rgb c = render_shaded(cw, alb, light);
  EXPECT_DOUBLE_EQ(c[0], 0.5 * 0.2);
  EXPECT_DOUBLE_EQ(c[1], 0.6 * 0.3);
  EXPECT_DOUBLE_EQ(c[2], 0.7 * 0.5);
  EXPECT_DOUBLE_EQ(estimate_altitude(cw, std::vector<double>{9.0, 7.0, 5.0}), 7.0);
}

TEST(RenderShaded, MatchesScalarLoopAndIsLinearInAlbedo) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 8;
    std::vector<double> sigma(n), delta(n), s(n);
    std::vector<Rgb> alb(n), alb2(n), sky(n), light(n);
    for (int i = 0; i < n; ++i) {
      sigma[i] = rng.uniform(0.0, 2.0);
      delta[i] = rng.uniform(0.1, 1.0);
      s[i] = rng.uniform();
      for (int c = 0; c < 3; ++c) {
        alb[i][c] = rng.uniform();
        alb2[i][c] = 2.0 * alb[i][c];
        sky[i][c] = rng.uniform();
      }
      light[i] = mix_light(s[i], sky[i]);
    }
    const CompositeWeights cw = composite(sigma, delta);
    const Rgb got = render_shaded(cw, alb, light);
    const auto w = reference_weights(sigma, delta);
    for (int c = 0; c < 3; ++c) {
      double ref = 0.0;
      for (int i = 0; i < n; ++i) ref += w[i] * alb[i][c] * (s[i] + (1.0 - s[i]) * sky[i][c]);
      ASSERT_NEAR(got[c], ref, 1e-14);
    }
    const Rgb doubled = render_shaded(cw, alb2, light);
    for (int c = 0; c < 3; ++c) ASSERT_EQ(doubled[c], 2.0 * got[c]);
  }
}

TEST(RenderEmissive, Examples) {
  CompositeWeights cw;
  cw.weights = {0.5, 0.25};
  const Rgb c = render_emissive(cw, std::vector<Rgb>{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
  EXPECT_EQ(c, (Rgb{0.5, 0.25, 0.0}));
  EXPECT_THROW(render_emissive(cw, std::vector<Rgb>{{1.0, 0.0, 0.0}}), Error);
}

TEST(EstimateAltitude, Examples) {
  CompositeWeights cw;
  cw.weights = {0.5, 0.25};
  EXPECT_DOUBLE_EQ(estimate_altitude(cw, std::vector<double>{10.0, 2.0}), 5.5);
  cw.weights = {0.0, 0.0};
  EXPECT_EQ(estimate_altitude(cw, std::vector<double>{10.0, 2.0}), 0.0);
}

// The analytic stand-in rendered through the volumetric path reproduces the
// ray-traced ground truth.
TEST(AnalyticRender, SlabAltitudeWithinCoarseSpacing) {
  const SceneSpec scene = slab_at(12.0);
  const AnalyticField field(scene);
  RenderConfig cfg;
  cfg.n_coarse = 64;
  cfg.n_fine = 64;
  Rng rng(5);
  std::vector<Ray> rays;
  for (int i = 0; i < 20; ++i) rays.push_back(random_ray(rng, scene.h_min, scene.h_max));
  const auto px = render_rays(field, rays, SolarDirection(50.0, 30.0), cfg);
  for (const auto& p : px) {
    EXPECT_NEAR(p.altitude, 12.0, 24.0 / 64.0);
    EXPECT_NEAR(p.opacity, 1.0, 1e-12);
  }
}

TEST(AnalyticRender, FineSamplesTightenAltitude) {
  const SceneSpec scene = slab_at(12.0);
  const AnalyticField field(scene);
  Rng rng(6);
  std::vector<Ray> rays;
  for (int i = 0; i < 20; ++i) rays.push_back(random_ray(rng, scene.h_min, scene.h_max));
  const double bin = 24.0 / 64.0;
  for (int m : {16, 64, 256}) {
    RenderConfig cfg;
    cfg.n_coarse = 64;
    cfg.n_fine = m;
    const auto px = render_rays(field, rays, SolarDirection(50.0, 30.0), cfg);
    for (const auto& p : px) {
      EXPECT_LE(p.altitude, 12.0);
      EXPECT_GE(p.altitude, 12.0 - bin / m - 1e-9) << "n_fine " << m;
    }
  }
}

TEST(AnalyticRender, NadirColorMatchesOracle) {
  SceneSpec scene = generate_scene("single_box", 0);
  scene.extent_x = scene.extent_y = 32.0;
  const AnalyticField field(scene);
  OrthoCamera cam = dem_camera(scene);
  cam.width = cam.height = 16;
  const SolarDirection sun = scene.acquisitions[0].sun;
  RenderConfig cfg;
  const RenderedImage img = render_view(field, cam, sun, scene.h_min, scene.h_max, cfg);
  const GroundTruthView gt = render_oracle_view(scene, cam, sun, -1);
  const Raster edges = boundary_mask(gt);
  int compared = 0;
  for (int i = 0; i < cam.width * cam.height; ++i) {
    if (edges.data[i] > 0.0) continue;
    ++compared;
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(img.pixels[i].rgb[c], gt.rgb.data[i * 3 + c], 1e-6) << "pixel " << i;
  }
  EXPECT_GT(compared, 100);
}

TEST(RenderRays, DeterministicAcrossThreadCounts) {
  const SceneSpec scene = generate_scene("single_box", 0);
  FieldConfig fc;
  fc.width = 16;
  fc.depth = 3;
  fc.box_min = {scene.bounds().x_min, scene.bounds().y_min, scene.h_min};
  fc.box_max = {scene.bounds().x_max, scene.bounds().y_max, scene.h_max};
  Rng init(0);
  const SNerfField field = SNerfField::init_siren(init, fc);
  Rng rng(7);
  std::vector<Ray> rays;
  for (int i = 0; i < 50; ++i) rays.push_back(random_ray(rng, scene.h_min, scene.h_max));
  RenderConfig a;
  a.threads = 1;
  a.chunk_rays = 7;
  RenderConfig b = a;
  b.threads = 3;
  const auto pa = render_rays(field, rays, SolarDirection(45.0, 90.0), a);
  const auto pb = render_rays(field, rays, SolarDirection(45.0, 90.0), b);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    ASSERT_EQ(pa[i].rgb, pb[i].rgb);
    ASSERT_EQ(pa[i].altitude, pb[i].altitude);
    ASSERT_EQ(pa[i].shadow, pb[i].shadow);
  }
}

TEST(BatchComposite, MatchesPlainComposite) {
  Rng rng(8);
  const Tensor sigma = tu::random_tensor(rng, 5, 9, 0.0, 3.0);
  const Tensor delta = tu::random_tensor(rng, 5, 9, 0.05, 1.0);
  ad::Tape tape(false);
  const auto bc = ad::composite(tape.constant(sigma), delta);
  for (int r = 0; r < 5; ++r) {
    std::vector<double> s(9), d(9);
    for (int i = 0; i < 9; ++i) {
      s[i] = sigma(r, i);
      d[i] = delta(r, i);
    }
    const CompositeWeights cw = composite(s, d);
    for (int i = 0; i < 9; ++i) {
      EXPECT_NEAR(bc.weights.data()(r, i), cw.weights[i], 1e-13);
      EXPECT_NEAR(bc.transmittance.data()(r, i), cw.transmittance[i], 1e-13);
    }
  }
}

TEST(BatchComposite, ShadedColorGradients) {
  Rng rng(9);
  const Tensor delta = tu::random_tensor(rng, 2, 4, 0.2, 1.0);
  const Tensor probe = tu::random_tensor(rng, 2, 3);
  const auto fd = tu::check_gradients(
      [&](ad::Tape& tape, const std::vector<Value>& in) {
        const auto bc = ad::composite(in[0], delta);
        const Value c = ad::shaded_color(bc.weights, in[1], in[2], in[3]);
        return ad::sum(ad::mul(c, tape.constant(probe)));
      },
      {tu::random_tensor(rng, 2, 4, 0.1, 2.0), tu::random_tensor(rng, 8, 3, 0.0, 1.0),
       tu::random_tensor(rng, 8, 1, 0.0, 1.0), tu::random_tensor(rng, 8, 3, 0.0, 1.0)});
  EXPECT_EQ(fd.checked, 8u + 24u + 8u + 24u);
  EXPECT_LT(fd.max_rel_error, 1e-6);
}

TEST(BatchComposite, EmissiveColorMatchesPlain) {
  Rng rng(10);
  const Tensor sigma = tu::random_tensor(rng, 1, 6, 0.0, 2.0);
  const Tensor delta = tu::random_tensor(rng, 1, 6, 0.1, 1.0);
  const Tensor color = tu::random_tensor(rng, 6, 3, 0.0, 1.0);
  ad::Tape tape(false);
  const auto bc = ad::composite(tape.constant(sigma), delta);
  const Value c = ad::emissive_color(bc.weights, tape.constant(color));
  std::vector<double> s(sigma.data(), sigma.data() + 6), d(delta.data(), delta.data() + 6);
  std::vector<Rgb> cols(6);
  for (int i = 0; i < 6; ++i) cols[i] = {color(i, 0), color(i, 1), color(i, 2)};
  const Rgb ref = render_emissive(composite(s, d), cols);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(c.data()(0, k), ref[k], 1e-13);
}
