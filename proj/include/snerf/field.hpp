#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "snerf/autodiff.hpp"
#include "snerf/common.hpp"
#include "snerf/geometry.hpp"

namespace snerf {

struct FieldConfig {
  int width = 64;          // trunk width
  int depth = 8;           // number of affine+sine trunk layers
  int visibility_width = 0;  // hidden width of the visibility head, 0 = trunk width
  double omega0 = 30.0;
  // Metres per unit of network density: sigma = relu(raw) / density_unit.
  // 0 means half the height of the normalization box, so the network works
  // in normalized lengths like its inputs.
  double density_unit = 0.0;
  double sigma_noise = 10.0;  // initial stddev of the noise on the raw density
  double s_noise = 1.0;       // initial stddev of the noise on the raw visibility
  double noise_end = 0.5;     // training fraction at which the noise reaches zero
  bool shading = true;        // false: NeRF baseline, albedo head emits radiance
  Vec3 box_min{-1.0, -1.0, -1.0};
  Vec3 box_max{1.0, 1.0, 1.0};

  int vis_width() const { return visibility_width > 0 ? visibility_width : width; }
  double density_length() const { return density_unit > 0.0 ? density_unit : 0.5 * (box_max.z - box_min.z); }
};

struct FieldSample {
  double sigma = 0.0;
  Rgb albedo{};
  double s = 1.0;
  Rgb sky{};
};

/// Per-point outputs for a batch, used by the renderer.
struct FieldBatch {
  std::vector<double> sigma;
  std::vector<Rgb> albedo;
  std::vector<double> s;
  std::vector<Rgb> sky;
};

struct HeadCounters {
  std::atomic<std::uint64_t> visibility{0};
  std::atomic<std::uint64_t> sky{0};
};

/// The implicit scene: a SIREN density trunk with albedo, solar-visibility
/// and sky heads.
///
///   sigma  = relu(L_sigma(h) + n_sigma) / L      h = trunk features, L = density length
///   albedo = sigmoid(L_a(h))
///   s      = sigmoid(V(h ++ w) + n_s)            w = unit sun vector, V = 4 layers
///   sky    = relu(L_sky(w))
///
/// The noise terms are only drawn during training; their stddev decays
/// linearly to zero at `noise_end` of the schedule.
class SNerfField {
 public:
  SNerfField() : counters_(std::make_shared<HeadCounters>()) {}

  static SNerfField init_siren(Rng& rng, const FieldConfig& cfg);

  const FieldConfig& config() const { return cfg_; }
  ad::ParameterSet& params() const { return params_; }
  HeadCounters& counters() const { return *counters_; }

  double sigma_noise_std(double t) const { return cfg_.sigma_noise * noise_factor(t); }
  double s_noise_std(double t) const { return cfg_.s_noise * noise_factor(t); }

  Vec3 normalize(const Vec3& p) const {
    const Vec3 c = (cfg_.box_min + cfg_.box_max) * 0.5;
    const Vec3 h = (cfg_.box_max - cfg_.box_min) * 0.5;
    return {(p.x - c.x) / h.x, (p.y - c.y) / h.y, (p.z - c.z) / h.z};
  }

  bool inside_box(const Vec3& p) const {
    return p.x >= cfg_.box_min.x && p.x <= cfg_.box_max.x && p.y >= cfg_.box_min.y &&
           p.y <= cfg_.box_max.y && p.z >= cfg_.box_min.z && p.z <= cfg_.box_max.z;
  }

  struct Trunk {
    ad::Value sigma;     // [P x 1]
    ad::Value features;  // [P x width]
  };

  /// Density trunk on scene-frame points [P x 3].
  Trunk trunk(ad::Tape& tape, const ad::Tensor& points, Rng* noise, double t) const {
    if (points.cols() != 3) throw ad::ShapeError("trunk: points must be P x 3");
    ad::Tensor normalized_pts(points.rows(), 3);
    for (ad::Index i = 0; i < points.rows(); ++i) {
      const Vec3 n = normalize({points(i, 0), points(i, 1), points(i, 2)});
      normalized_pts(i, 0) = n.x;
      normalized_pts(i, 1) = n.y;
      normalized_pts(i, 2) = n.z;
    }
    ad::Value h = tape.constant(std::move(normalized_pts));
    for (int l = 0; l < cfg_.depth; ++l) {
      const std::string p = "trunk." + std::to_string(l);
      h = ad::sin(ad::affine(h, tape.parameter(params_.at(p + ".W")), tape.parameter(params_.at(p + ".b"))),
                  cfg_.omega0);
    }
    ad::Value raw = ad::affine(h, tape.parameter(params_.at("sigma.W")), tape.parameter(params_.at("sigma.b")));
    raw = add_noise(tape, raw, noise, sigma_noise_std(t));
    return {ad::scale(ad::relu(raw), 1.0 / cfg_.density_length()), h};
  }

  /// Albedo in [0,1]^3, [P x 3].
  ad::Value albedo(ad::Tape& tape, const ad::Value& features) const {
    return ad::sigmoid(
        ad::affine(features, tape.parameter(params_.at("albedo.W")), tape.parameter(params_.at("albedo.b"))));
  }

  /// Solar visibility in [0,1], [P x 1]; sun_vectors holds one unit sun vector per point.
  ad::Value visibility(ad::Tape& tape, const ad::Value& features, const ad::Tensor& sun_vectors, Rng* noise,
                       double t) const {
    if (sun_vectors.rows() != features.rows() || sun_vectors.cols() != 3)
      throw ad::ShapeError("visibility: need one sun vector per point");
    counters_->visibility.fetch_add(static_cast<std::uint64_t>(features.rows()), std::memory_order_relaxed);
    ad::Value h = ad::concat_cols({features, tape.constant(sun_vectors)});
    for (int l = 0; l < kVisibilityLayers - 1; ++l) {
      const std::string p = "visibility." + std::to_string(l);
      h = ad::sin(ad::affine(h, tape.parameter(params_.at(p + ".W")), tape.parameter(params_.at(p + ".b"))),
                  cfg_.omega0);
    }
    const std::string p = "visibility." + std::to_string(kVisibilityLayers - 1);
    ad::Value raw = ad::affine(h, tape.parameter(params_.at(p + ".W")), tape.parameter(params_.at(p + ".b")));
    raw = add_noise(tape, raw, noise, s_noise_std(t));
    return ad::sigmoid(raw);
  }

  /// Sky color, [P x 3]; depends on the sun vector only.
  ad::Value sky(ad::Tape& tape, const ad::Tensor& sun_vectors) const {
    if (sun_vectors.cols() != 3) throw ad::ShapeError("sky: sun vectors must be P x 3");
    counters_->sky.fetch_add(static_cast<std::uint64_t>(sun_vectors.rows()), std::memory_order_relaxed);
    return ad::relu(ad::affine(tape.constant(sun_vectors), tape.parameter(params_.at("sky.W")),
                               tape.parameter(params_.at("sky.b"))));
  }

  std::vector<FieldSample> query_batch(std::span<const Vec3> points, const SolarDirection& sun,
                                       Rng* noise = nullptr, double t = 1.0) const {
    ad::Tape tape(false);
    ad::Tensor pts = to_tensor(points);
    ad::Tensor suns = sun_rows(solar_to_vector(sun), pts.rows());
    Trunk tr = trunk(tape, pts, noise, t);
    ad::Value a = albedo(tape, tr.features);
    std::vector<FieldSample> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      out[i].sigma = tr.sigma.data()(static_cast<ad::Index>(i), 0);
      for (int c = 0; c < 3; ++c) out[i].albedo[c] = a.data()(static_cast<ad::Index>(i), c);
    }
    if (cfg_.shading) {
      ad::Value s = visibility(tape, tr.features, suns, noise, t);
      ad::Value k = sky(tape, suns);
      for (std::size_t i = 0; i < points.size(); ++i) {
        out[i].s = s.data()(static_cast<ad::Index>(i), 0);
        for (int c = 0; c < 3; ++c) out[i].sky[c] = k.data()(static_cast<ad::Index>(i), c);
      }
    }
    return out;
  }

  FieldSample query(const Vec3& x, const SolarDirection& sun, Rng* noise = nullptr, double t = 1.0) const {
    return query_batch(std::span<const Vec3>(&x, 1), sun, noise, t).front();
  }

  /// Noise-free batch evaluation for rendering. In baseline mode s = 1 and
  /// sky = 0, so shaded compositing reduces to emissive compositing of the albedo.
  FieldBatch evaluate(std::span<const Vec3> points, const Vec3& sun_vector) const {
    ad::Tape tape(false);
    ad::Tensor pts = to_tensor(points);
    Trunk tr = trunk(tape, pts, nullptr, 1.0);
    ad::Value a = albedo(tape, tr.features);
    const std::size_t n = points.size();
    FieldBatch out;
    out.sigma.resize(n);
    out.albedo.resize(n);
    out.s.assign(n, 1.0);
    out.sky.assign(n, Rgb{0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
      out.sigma[i] = tr.sigma.data()(static_cast<ad::Index>(i), 0);
      for (int c = 0; c < 3; ++c) out.albedo[i][c] = a.data()(static_cast<ad::Index>(i), c);
    }
    if (cfg_.shading) {
      ad::Tensor suns = sun_rows(sun_vector, pts.rows());
      ad::Value s = visibility(tape, tr.features, suns, nullptr, 1.0);
      ad::Value k = sky(tape, suns);
      for (std::size_t i = 0; i < n; ++i) {
        out.s[i] = s.data()(static_cast<ad::Index>(i), 0);
        for (int c = 0; c < 3; ++c) out.sky[i][c] = k.data()(static_cast<ad::Index>(i), c);
      }
    }
    return out;
  }

  bool shaded() const { return cfg_.shading; }

  std::vector<ad::NamedTensor> named_parameters() const {
    std::vector<ad::NamedTensor> out;
    for (const auto& p : params_) out.push_back({p.name, p.value});
    return out;
  }

  /// Restores parameter values by name; every parameter must be present.
  void load_parameters(std::span<const ad::NamedTensor> entries) {
    for (auto& p : params_) {
      const ad::NamedTensor* found = nullptr;
      for (const auto& e : entries)
        if (e.name == p.name) found = &e;
      if (!found) throw Error(concat("checkpoint is missing parameter ", p.name));
      if (found->value.rows() != p.value.rows() || found->value.cols() != p.value.cols())
        throw Error(concat("checkpoint shape mismatch for ", p.name));
      p.value = found->value;
    }
  }

  static ad::Tensor to_tensor(std::span<const Vec3> points) {
    ad::Tensor t(static_cast<ad::Index>(points.size()), 3);
    for (std::size_t i = 0; i < points.size(); ++i) {
      t(static_cast<ad::Index>(i), 0) = points[i].x;
      t(static_cast<ad::Index>(i), 1) = points[i].y;
      t(static_cast<ad::Index>(i), 2) = points[i].z;
    }
    return t;
  }

  static ad::Tensor sun_rows(const Vec3& v, ad::Index n) {
    ad::Tensor t(n, 3);
    for (ad::Index i = 0; i < n; ++i) {
      t(i, 0) = v.x;
      t(i, 1) = v.y;
      t(i, 2) = v.z;
    }
    return t;
  }

  static constexpr int kVisibilityLayers = 4;

 private:
  double noise_factor(double t) const {
    if (!(cfg_.noise_end > 0.0) || t >= cfg_.noise_end) return 0.0;
    return 1.0 - std::max(0.0, t) / cfg_.noise_end;
  }

  static ad::Value add_noise(ad::Tape& tape, const ad::Value& raw, Rng* noise, double stddev) {
    if (!noise || !(stddev > 0.0)) return raw;
    ad::Tensor n(raw.rows(), raw.cols());
    for (ad::Index i = 0; i < n.size(); ++i) n.data()[i] = stddev * noise->normal();
    return ad::add(raw, tape.constant(std::move(n)));
  }

  FieldConfig cfg_;
  mutable ad::ParameterSet params_;
  std::shared_ptr<HeadCounters> counters_;
};

namespace detail {

inline ad::Tensor uniform_tensor(Rng& rng, ad::Index rows, ad::Index cols, double bound) {
  ad::Tensor t(rows, cols);
  for (ad::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace detail

/// SIREN initialization: first layer weights in +-1/n_in, deeper layers in
/// +-sqrt(6/n_in)/omega0. Biases of the first layer use +-1/sqrt(n_in) (a
/// random phase); deeper biases share the weight bound so that omega0 * b
/// stays small and the pre-activation variance stays near 1. Linear read-outs
/// (density, albedo, last visibility layer) are not followed by sin(omega0 .),
/// so they drop the 1/omega0 factor; otherwise |raw sigma| is capped near 0.6
/// and the albedo near [0.35, 0.65] until the head weights grow.
inline SNerfField SNerfField::init_siren(Rng& rng, const FieldConfig& cfg) {
  if (cfg.width < 1 || cfg.depth < 1) throw Error("init_siren: width and depth must be at least 1");
  if (!(cfg.box_max.x > cfg.box_min.x && cfg.box_max.y > cfg.box_min.y && cfg.box_max.z > cfg.box_min.z))
    throw Error("init_siren: empty normalization box");
  SNerfField f;
  f.cfg_ = cfg;
  auto layer = [&](const std::string& name, int n_in, int n_out, double w_bound, double b_bound) {
    f.params_.add(name + ".W", detail::uniform_tensor(rng, n_in, n_out, w_bound));
    f.params_.add(name + ".b", detail::uniform_tensor(rng, 1, n_out, b_bound));
  };
  auto hidden_bound = [&](int n_in) { return std::sqrt(6.0 / n_in) / cfg.omega0; };
  auto readout_bound = [&](int n_in) { return std::sqrt(6.0 / n_in); };

  for (int l = 0; l < cfg.depth; ++l) {
    const int n_in = l == 0 ? 3 : cfg.width;
    if (l == 0)
      layer("trunk.0", n_in, cfg.width, 1.0 / n_in, 1.0 / std::sqrt(n_in));
    else
      layer("trunk." + std::to_string(l), n_in, cfg.width, hidden_bound(n_in), hidden_bound(n_in));
  }
  layer("sigma", cfg.width, 1, readout_bound(cfg.width), hidden_bound(cfg.width));
  layer("albedo", cfg.width, 3, readout_bound(cfg.width), hidden_bound(cfg.width));
  f.params_.at("albedo.b").value.setZero();

  const int vw = cfg.vis_width();
  for (int l = 0; l < kVisibilityLayers; ++l) {
    const int n_in = l == 0 ? cfg.width + 3 : vw;
    const int n_out = l == kVisibilityLayers - 1 ? 1 : vw;
    const bool last = l == kVisibilityLayers - 1;
    layer("visibility." + std::to_string(l), n_in, n_out, last ? readout_bound(n_in) : hidden_bound(n_in),
          hidden_bound(n_in));
  }
  layer("sky", 3, 3, 1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0));
  f.params_.at("sky.b").value.setConstant(0.5);
  return f;
}

}  // namespace snerf
