#pragma once

// Volume rendering along altitude-sampled rays.
//
//   alpha_i = 1 - exp(-sigma_i * dx_i)
//   T_1 = 1,  T_{i+1} = T_i (1 - alpha_i)
//   w_i = T_i alpha_i
//   I   = sum_i w_i c_i                      (emissive)
//   l_i = s_i * 1 + (1 - s_i) * sky_i        (irradiance)
//   I_s = sum_i w_i (a_i * l_i)              (shaded)
//   h   = sum_i w_i h_i                      (altitude, not renormalized)
//
// Plain-double routines serve inference and metrics; the ad:: variants
// build the same quantities on a tape for batches of rays laid out as
// [rays x samples] matrices.

#include <concepts>
#include <span>
#include <vector>

#include "snerf/autodiff.hpp"
#include "snerf/common.hpp"
#include "snerf/field.hpp"
#include "snerf/geometry.hpp"
#include "snerf/raster.hpp"

namespace snerf {

struct CompositeWeights {
  std::vector<double> alpha;
  std::vector<double> transmittance;
  std::vector<double> weights;
  double final_transmittance = 1.0;  // T_{N+1}

  std::size_t size() const { return weights.size(); }
  double opacity() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

inline CompositeWeights composite(std::span<const double> sigmas, std::span<const double> deltas) {
  if (sigmas.size() != deltas.size()) throw Error("composite: sigma and delta counts differ");
  const std::size_t n = sigmas.size();
  CompositeWeights cw;
  cw.alpha.resize(n);
  cw.transmittance.resize(n);
  cw.weights.resize(n);
  double t = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigmas[i] >= 0.0)) throw Error("composite: density must be non-negative");
    if (!(deltas[i] > 0.0)) throw Error("composite: segment lengths must be positive");
    const double a = 1.0 - std::exp(-sigmas[i] * deltas[i]);
    cw.alpha[i] = a;
    cw.transmittance[i] = t;
    cw.weights[i] = t * a;
    t *= 1.0 - a;
  }
  cw.final_transmittance = t;
  return cw;
}

inline Rgb mix_light(double s, const Rgb& sky) {
  return {s * 1.0 + (1.0 - s) * sky[0], s * 1.0 + (1.0 - s) * sky[1], s * 1.0 + (1.0 - s) * sky[2]};
}

inline Rgb render_shaded(const CompositeWeights& cw, std::span<const Rgb> albedos, std::span<const Rgb> irradiances) {
  if (albedos.size() != cw.size() || irradiances.size() != cw.size())
    throw Error("render_shaded: input lengths differ");
  Rgb out{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < cw.size(); ++i)
    for (int c = 0; c < 3; ++c) out[c] += cw.weights[i] * (albedos[i][c] * irradiances[i][c]);
  return out;
}

inline Rgb render_emissive(const CompositeWeights& cw, std::span<const Rgb> colors) {
  if (colors.size() != cw.size()) throw Error("render_emissive: input lengths differ");
  Rgb out{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < cw.size(); ++i)
    for (int c = 0; c < 3; ++c) out[c] += cw.weights[i] * colors[i][c];
  return out;
}

/// Expected altitude. Returns 0 when all weights vanish; check the opacity
/// before trusting the value.
inline double estimate_altitude(const CompositeWeights& cw, std::span<const double> altitudes) {
  if (altitudes.size() != cw.size()) throw Error("estimate_altitude: input lengths differ");
  double h = 0.0;
  for (std::size_t i = 0; i < cw.size(); ++i) h += cw.weights[i] * altitudes[i];
  return h;
}

namespace ad {

struct BatchComposite {
  Value alpha;          // [R x N]
  Value transmittance;  // [R x N]
  Value weights;        // [R x N]
};

/// Differentiable compositing of R rays with N samples each. The cumulative
/// optical depth is a product with a strictly upper-triangular ones matrix.
inline BatchComposite composite(const Value& sigma, const Tensor& deltas) {
  if (sigma.rows() != deltas.rows() || sigma.cols() != deltas.cols())
    throw ShapeError("composite: sigma and delta shapes differ");
  Tape& tape = *sigma.tape();
  const Index n = sigma.cols();
  Tensor upper = Tensor::Zero(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i) upper(j, i) = 1.0;
  Value depth = mul(sigma, tape.constant(deltas));
  Value transmittance = exp(neg(affine(depth, tape.constant(std::move(upper)))));
  Value alpha = add_scalar(neg(exp(neg(depth))), 1.0);
  return {alpha, transmittance, mul(transmittance, alpha)};
}

/// Per-ray color [R x 3] from per-point albedo [R*N x 3], visibility
/// [R*N x 1] and sky [R*N x 3].
inline Value shaded_color(const Value& weights, const Value& albedo, const Value& vis, const Value& sky) {
  const Index r = weights.rows(), n = weights.cols();
  Value s = reshape(vis, r, n);
  Value shade = add_scalar(neg(s), 1.0);
  std::vector<Value> channels;
  for (Index c = 0; c < 3; ++c) {
    Value a = reshape(column(albedo, c), r, n);
    Value k = reshape(column(sky, c), r, n);
    Value light = s + shade * k;
    channels.push_back(sum_rows(weights * (a * light)));
  }
  return concat_cols(channels);
}

inline Value emissive_color(const Value& weights, const Value& color) {
  const Index r = weights.rows(), n = weights.cols();
  std::vector<Value> channels;
  for (Index c = 0; c < 3; ++c) channels.push_back(sum_rows(weights * reshape(column(color, c), r, n)));
  return concat_cols(channels);
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Image rendering

template <typename F>
concept RenderableField = requires(const F& f, std::span<const Vec3> pts, const Vec3& sun) {
  { f.evaluate(pts, sun) } -> std::same_as<FieldBatch>;
};

struct RenderConfig {
  int n_coarse = 64;
  int n_fine = 64;
  bool hierarchical = true;
  int threads = 0;        // 0: SNERF_THREADS or all cores
  int chunk_rays = 128;   // rays per field evaluation
};

struct RenderedPixel {
  Rgb rgb{};
  double altitude = 0.0;
  double shadow = 0.0;  // sum_i w_i s_i
  Rgb albedo{};         // sum_i w_i a_i
  double opacity = 0.0; // sum_i w_i
};

struct RenderedImage {
  int width = 0;
  int height = 0;
  std::vector<RenderedPixel> pixels;

  Raster rgb() const { return extract(3, [](const RenderedPixel& p, int c) { return p.rgb[c]; }); }
  Raster albedo() const { return extract(3, [](const RenderedPixel& p, int c) { return p.albedo[c]; }); }
  Raster shadow() const { return extract(1, [](const RenderedPixel& p, int) { return p.shadow; }); }
  Raster altitude() const { return extract(1, [](const RenderedPixel& p, int) { return p.altitude; }); }
  Raster opacity() const { return extract(1, [](const RenderedPixel& p, int) { return p.opacity; }); }

 private:
  template <typename Fn>
  Raster extract(int channels, Fn fn) const {
    Raster r(width, height, channels);
    for (std::size_t i = 0; i < pixels.size(); ++i)
      for (int c = 0; c < channels; ++c) r.data[i * channels + c] = fn(pixels[i], c);
    return r;
  }
};

namespace detail {

template <RenderableField F>
void evaluate_samples(const F& field, const std::vector<SamplePoints>& samples, const Vec3& sun_vec,
                      std::vector<FieldBatch>& per_ray) {
  std::vector<Vec3> pts;
  for (const auto& sp : samples) pts.insert(pts.end(), sp.positions.begin(), sp.positions.end());
  FieldBatch all = field.evaluate(pts, sun_vec);
  per_ray.resize(samples.size());
  std::size_t off = 0;
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const std::size_t n = samples[r].size();
    FieldBatch& b = per_ray[r];
    b.sigma.assign(all.sigma.begin() + off, all.sigma.begin() + off + n);
    b.albedo.assign(all.albedo.begin() + off, all.albedo.begin() + off + n);
    b.s.assign(all.s.begin() + off, all.s.begin() + off + n);
    b.sky.assign(all.sky.begin() + off, all.sky.begin() + off + n);
    off += n;
  }
}

inline RenderedPixel shade_pixel(const SamplePoints& sp, const FieldBatch& fb) {
  const CompositeWeights cw = composite(fb.sigma, sp.deltas);
  std::vector<Rgb> light(sp.size());
  for (std::size_t i = 0; i < sp.size(); ++i) light[i] = mix_light(fb.s[i], fb.sky[i]);
  RenderedPixel px;
  px.rgb = render_shaded(cw, fb.albedo, light);
  px.altitude = estimate_altitude(cw, sp.altitudes);
  px.albedo = render_emissive(cw, fb.albedo);
  for (std::size_t i = 0; i < sp.size(); ++i) {
    px.shadow += cw.weights[i] * fb.s[i];
    px.opacity += cw.weights[i];
  }
  return px;
}

}  // namespace detail

/// Deterministic rendering of arbitrary rays: coarse bin-center pass, then
/// (if hierarchical) a quantile-resampled fine pass over the merged samples.
template <RenderableField F>
std::vector<RenderedPixel> render_rays(const F& field, std::span<const Ray> rays, const SolarDirection& sun,
                                       const RenderConfig& cfg) {
  if (cfg.n_coarse < 2) throw Error("render: need at least 2 coarse samples");
  const Vec3 sun_vec = solar_to_vector(sun);
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, cfg.chunk_rays));
  const std::size_t n_chunks = (rays.size() + chunk - 1) / chunk;
  std::vector<RenderedPixel> out(rays.size());
  parallel_for(n_chunks, resolve_threads(cfg.threads), [&](std::size_t cb, std::size_t ce) {
    for (std::size_t ci = cb; ci < ce; ++ci) {
      const std::size_t b = ci * chunk;
      const std::size_t e = std::min(rays.size(), b + chunk);
      std::vector<SamplePoints> coarse;
      for (std::size_t r = b; r < e; ++r)
        coarse.push_back(sample_altitudes(rays[r], static_cast<std::size_t>(cfg.n_coarse)));
      std::vector<FieldBatch> fb;
      detail::evaluate_samples(field, coarse, sun_vec, fb);
      if (!cfg.hierarchical || cfg.n_fine <= 0) {
        for (std::size_t r = b; r < e; ++r) out[r] = detail::shade_pixel(coarse[r - b], fb[r - b]);
        continue;
      }
      std::vector<SamplePoints> fine;
      for (std::size_t r = b; r < e; ++r) {
        const CompositeWeights cw = composite(fb[r - b].sigma, coarse[r - b].deltas);
        fine.push_back(importance_resample(coarse[r - b], cw.weights, static_cast<std::size_t>(cfg.n_fine)));
      }
      detail::evaluate_samples(field, fine, sun_vec, fb);
      for (std::size_t r = b; r < e; ++r) out[r] = detail::shade_pixel(fine[r - b], fb[r - b]);
    }
  });
  return out;
}

template <RenderableField F>
RenderedImage render_view(const F& field, const OrthoCamera& cam, const SolarDirection& sun, double h_min,
                          double h_max, const RenderConfig& cfg) {
  const auto pixel_rays = generate_view_rays(cam, h_min, h_max);
  std::vector<Ray> rays;
  rays.reserve(pixel_rays.size());
  for (const auto& pr : pixel_rays) rays.push_back(pr.ray);
  RenderedImage img;
  img.width = cam.width;
  img.height = cam.height;
  img.pixels = render_rays(field, rays, sun, cfg);
  return img;
}

}  // namespace snerf
