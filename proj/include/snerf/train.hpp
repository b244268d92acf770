#pragma once

// Optimization of the field from multi-date images.
//
//   L = (1/|b|) sum_r ||I_r - I_s(r)||^2
//     + lambda_s (1/|SC|) sum_j [ sum_i (T_ji - s_ji)^2 + 1 - sum_i w_ji s_ji ]
//
// T and w on the solar-correction rays are treated as constants, so the second
// term only moves the visibility head.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "snerf/autodiff.hpp"
#include "snerf/common.hpp"
#include "snerf/field.hpp"
#include "snerf/geometry.hpp"
#include "snerf/oracle.hpp"
#include "snerf/raster.hpp"
#include "snerf/render.hpp"

namespace snerf {

enum class TrainMode { nerf, snerf_no_sc, snerf_sc };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::nerf: return "nerf";
    case TrainMode::snerf_no_sc: return "snerf_no_sc";
    case TrainMode::snerf_sc: return "snerf_sc";
  }
  return "?";
}

inline TrainMode parse_mode(const std::string& s) {
  if (s == "nerf") return TrainMode::nerf;
  if (s == "snerf_no_sc") return TrainMode::snerf_no_sc;
  if (s == "snerf_sc") return TrainMode::snerf_sc;
  throw Error(concat("unknown mode '", s, "' (available: nerf, snerf_no_sc, snerf_sc)"));
}

struct TrainConfig {
  TrainMode mode = TrainMode::snerf_sc;
  double lambda_s = 0.05;
  bool lambda_s_given = false;  // set when a config document names lambda_s explicitly
  int batch_rays = 64;
  int batch_sc_rays = 64;
  int n_coarse = 32;
  int n_fine = 32;
  double lr_start = 1e-4;
  double lr_end = 1e-5;
  int iterations = 20000;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only at the end
  std::optional<SolarDirection> sc_start;  // default: the scene's solar path
  std::optional<SolarDirection> sc_end;
  FieldConfig field;

  bool uses_sc() const { return mode == TrainMode::snerf_sc && lambda_s > 0.0 && batch_sc_rays > 0; }

  void validate() const {
    if (!(lambda_s >= 0.0) || !std::isfinite(lambda_s)) throw Error("config: lambda_s must be >= 0");
    if (batch_rays < 1) throw Error("config: batch_rays must be >= 1");
    if (batch_sc_rays < 0) throw Error("config: batch_sc_rays must be >= 0");
    if (n_coarse < 2) throw Error("config: n_coarse must be >= 2");
    if (n_fine < 0) throw Error("config: n_fine must be >= 0");
    if (!(lr_start > 0.0 && lr_end > 0.0)) throw Error("config: learning rates must be positive");
    if (iterations < 1) throw Error("config: iterations must be >= 1");
    if (checkpoint_every < 0) throw Error("config: checkpoint_every must be >= 0");
    if (sc_start.has_value() != sc_end.has_value()) throw Error("config: give both SC path endpoints or neither");
    if (field.width < 1 || field.depth < 1) throw Error("config: field width and depth must be >= 1");
  }

  double learning_rate(long iteration) const {
    return lr_start * std::pow(lr_end / lr_start, static_cast<double>(iteration) / iterations);
  }
};

/// Named presets. "desk" fits a laptop CPU; "paper" keeps the full-scale values.
inline TrainConfig train_preset(const std::string& name) {
  TrainConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.batch_rays = 256;
    c.batch_sc_rays = 256;
    c.n_coarse = 64;
    c.n_fine = 64;
    c.iterations = 100000;
    c.field.width = 100;
    return c;
  }
  if (name == "smoke") {
    c.iterations = 500;
    c.batch_rays = 32;
    c.batch_sc_rays = 16;
    c.n_coarse = 16;
    c.n_fine = 16;
    c.field.width = 32;
    c.field.depth = 4;
    return c;
  }
  throw Error(concat("unknown config preset '", name, "' (available: desk, paper, smoke)"));
}

inline Json train_config_to_json(const TrainConfig& c) {
  Json j{{"mode", to_string(c.mode)},
         {"lambda_s", c.lambda_s},
         {"batch_rays", c.batch_rays},
         {"batch_sc_rays", c.batch_sc_rays},
         {"n_coarse", c.n_coarse},
         {"n_fine", c.n_fine},
         {"lr_start", c.lr_start},
         {"lr_end", c.lr_end},
         {"iterations", c.iterations},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every},
         {"field",
          {{"width", c.field.width},
           {"depth", c.field.depth},
           {"visibility_width", c.field.visibility_width},
           {"omega0", c.field.omega0},
           {"density_unit", c.field.density_unit},
           {"sigma_noise", c.field.sigma_noise},
           {"s_noise", c.field.s_noise},
           {"noise_end", c.field.noise_end}}}};
  if (c.sc_start) j["sc_path"] = {{"start", to_json(*c.sc_start)}, {"end", to_json(*c.sc_end)}};
  return j;
}

/// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline TrainConfig train_config_from_json(const Json& j, TrainConfig base = {}) {
  static const std::vector<std::string> top = {"preset",     "mode",         "lambda_s", "batch_rays",
                                               "batch_sc_rays", "n_coarse",  "n_fine",   "lr_start",
                                               "lr_end",     "iterations",   "seed",     "checkpoint_every",
                                               "sc_path",    "field"};
  static const std::vector<std::string> field_keys = {"width",       "depth",   "visibility_width", "omega0",
                                                      "density_unit", "sigma_noise", "s_noise", "noise_end"};
  if (!j.is_object()) throw Error("config: expected a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(top.begin(), top.end(), k) == top.end()) throw Error(concat("config: unknown key '", k, "'"));
  TrainConfig c = j.contains("preset") ? train_preset(j.at("preset").get<std::string>()) : base;
  try {
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("lambda_s")) {
      c.lambda_s = j.at("lambda_s").get<double>();
      c.lambda_s_given = true;
    }
    auto get_int = [&](const char* k, int& dst) {
      if (j.contains(k)) dst = j.at(k).get<int>();
    };
    get_int("batch_rays", c.batch_rays);
    get_int("batch_sc_rays", c.batch_sc_rays);
    get_int("n_coarse", c.n_coarse);
    get_int("n_fine", c.n_fine);
    get_int("iterations", c.iterations);
    get_int("checkpoint_every", c.checkpoint_every);
    if (j.contains("lr_start")) c.lr_start = j.at("lr_start").get<double>();
    if (j.contains("lr_end")) c.lr_end = j.at("lr_end").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("sc_path")) {
      c.sc_start = sun_from_json(j.at("sc_path").at("start"));
      c.sc_end = sun_from_json(j.at("sc_path").at("end"));
    }
    if (j.contains("field")) {
      const Json& f = j.at("field");
      for (const auto& [k, v] : f.items())
        if (std::find(field_keys.begin(), field_keys.end(), k) == field_keys.end())
          throw Error(concat("config: unknown field key '", k, "'"));
      if (f.contains("width")) c.field.width = f.at("width").get<int>();
      if (f.contains("depth")) c.field.depth = f.at("depth").get<int>();
      if (f.contains("visibility_width")) c.field.visibility_width = f.at("visibility_width").get<int>();
      if (f.contains("omega0")) c.field.omega0 = f.at("omega0").get<double>();
      if (f.contains("density_unit")) c.field.density_unit = f.at("density_unit").get<double>();
      if (f.contains("sigma_noise")) c.field.sigma_noise = f.at("sigma_noise").get<double>();
      if (f.contains("s_noise")) c.field.s_noise = f.at("s_noise").get<double>();
      if (f.contains("noise_end")) c.field.noise_end = f.at("noise_end").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(concat("config: ", e.what()));
  }
  c.validate();
  return c;
}

/// Stable identifier of a configuration (the lambda_s_given flag does not count).
inline std::string config_hash(const TrainConfig& c, const std::string& extra = "") {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(train_config_to_json(c).dump() + "|" + extra)));
  return buf;
}

// ---------------------------------------------------------------------------
// Training data

struct TrainView {
  int acquisition = 0;
  Raster rgb;
  OrthoCamera camera;
  SolarDirection sun;
  std::vector<Ray> rays;  // one per pixel, row-major
};

struct TrainSet {
  std::vector<TrainView> views;
  SceneBounds bounds;
  SolarDirection path_start;
  SolarDirection path_end;

  std::size_t pixels_per_view() const { return views.empty() ? 0 : views.front().rays.size(); }

  void validate() const {
    if (views.empty()) throw Error("train set is empty");
    for (const auto& v : views) {
      if (v.rgb.width != views.front().rgb.width || v.rgb.height != views.front().rgb.height)
        throw Error("train set images differ in resolution");
      if (v.rgb.channels != 3) throw Error("train set images must be RGB");
      if (v.rays.size() != v.rgb.pixel_count()) throw Error("train view ray count mismatch");
    }
    if (!(bounds.h_min < bounds.h_max)) throw Error("train set altitude bounds are empty");
  }
};

inline TrainView make_train_view(const SceneSpec& scene, int acq, Raster rgb) {
  TrainView v;
  v.acquisition = acq;
  v.rgb = std::move(rgb);
  v.camera = camera_for(scene, scene.acquisitions.at(static_cast<std::size_t>(acq)));
  v.sun = scene.acquisitions[static_cast<std::size_t>(acq)].sun;
  if (v.rgb.width != v.camera.width || v.rgb.height != v.camera.height)
    throw Error(concat("image for acquisition ", acq, " does not match the scene resolution"));
  for (const auto& pr : generate_view_rays(v.camera, scene.h_min, scene.h_max)) v.rays.push_back(pr.ray);
  return v;
}

inline TrainSet make_train_set(const SceneSpec& scene, const GroundTruthBundle& gt, const std::vector<int>& acqs) {
  TrainSet ts;
  ts.bounds = scene.bounds();
  ts.path_start = scene.path_start;
  ts.path_end = scene.path_end;
  for (int a : acqs) ts.views.push_back(make_train_view(scene, a, gt.views.at(static_cast<std::size_t>(a)).rgb));
  ts.validate();
  return ts;
}

/// Training set read back from a dataset directory written by write_dataset.
inline TrainSet load_train_set(const std::filesystem::path& dir, const SceneSpec& scene, const std::vector<int>& acqs) {
  TrainSet ts;
  ts.bounds = scene.bounds();
  ts.path_start = scene.path_start;
  ts.path_end = scene.path_end;
  for (int a : acqs) ts.views.push_back(make_train_view(scene, a, read_float_planes(dir / (view_name(a, "rgb") + ".f32"))));
  ts.validate();
  return ts;
}

/// Field normalization box: the footprint grown by the longest horizontal run
/// of a solar-correction ray, so SC samples stay inside it.
inline FieldConfig field_config_for(const FieldConfig& base, const SceneBounds& b, std::span<const SolarDirection> suns,
                                    TrainMode mode) {
  FieldConfig f = base;
  double min_el = 90.0;
  for (const auto& s : suns) min_el = std::min(min_el, s.elevation());
  const double pad = std::min(4.0 * (b.h_max - b.h_min), (b.h_max - b.h_min) / std::tan(deg_to_rad(min_el))) + 1.0;
  f.box_min = {b.x_min - pad, b.y_min - pad, b.h_min};
  f.box_max = {b.x_max + pad, b.y_max + pad, b.h_max};
  f.shading = mode != TrainMode::nerf;
  return f;
}

// ---------------------------------------------------------------------------
// Losses

inline ad::Value rgb_loss(const ad::Value& predicted, const ad::Tensor& observed) {
  if (predicted.rows() != observed.rows() || predicted.cols() != observed.cols())
    throw ad::ShapeError("rgb_loss: prediction and target shapes differ");
  ad::Tape& tape = *predicted.tape();
  return ad::scale(ad::sum(ad::square(predicted - tape.constant(observed))), 1.0 / predicted.rows());
}

/// SC term for R rays with N samples: T and w are [R x N] constants, s is [R x N].
inline ad::Value solar_correction_loss(const ad::Tensor& transmittance, const ad::Value& s, const ad::Tensor& weights) {
  if (s.rows() != transmittance.rows() || s.cols() != transmittance.cols() || s.rows() != weights.rows() ||
      s.cols() != weights.cols())
    throw ad::ShapeError("solar_correction_loss: T, s and w must share a shape");
  ad::Tape& tape = *s.tape();
  const ad::Value t = ad::stop_gradient(tape.constant(transmittance));
  const ad::Value w = ad::stop_gradient(tape.constant(weights));
  const ad::Value per_ray = ad::add_scalar(ad::sum(ad::square(t - s)) - ad::sum(w * s), static_cast<double>(s.rows()));
  return ad::scale(per_ray, 1.0 / s.rows());
}

inline ad::Value total_loss(const TrainConfig& cfg, const ad::Value& rgb, const std::optional<ad::Value>& sc) {
  if (cfg.mode != TrainMode::snerf_sc || !sc || cfg.lambda_s == 0.0) return rgb;
  return rgb + ad::scale(*sc, cfg.lambda_s);
}

// ---------------------------------------------------------------------------
// Batches

struct PixelBatch {
  std::vector<Ray> rays;
  ad::Tensor target;  // [R x 3]
  std::vector<SolarDirection> suns;
  std::vector<int> view;  // index into TrainSet::views
  std::vector<std::size_t> pixel;
};

inline PixelBatch sample_pixel_batch(const TrainSet& ts, std::size_t n, Rng& rng) {
  if (ts.views.empty()) throw Error("sample_pixel_batch: empty train set");
  const std::size_t per_view = ts.pixels_per_view();
  PixelBatch b;
  b.target.resize(static_cast<ad::Index>(n), 3);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t flat = rng.uniform_index(per_view * ts.views.size());
    const std::size_t v = flat / per_view, p = flat % per_view;
    const TrainView& tv = ts.views[v];
    b.rays.push_back(tv.rays[p]);
    for (int c = 0; c < 3; ++c) b.target(static_cast<ad::Index>(k), c) = tv.rgb.data[p * 3 + c];
    b.suns.push_back(tv.sun);
    b.view.push_back(static_cast<int>(v));
    b.pixel.push_back(p);
  }
  return b;
}

struct ScBatch {
  std::vector<Ray> rays;
  std::vector<SolarDirection> suns;
  std::vector<double> t;  // position along the solar path
};

/// Each SC ray gets its own sun, drawn uniformly along the solar path.
inline ScBatch sample_sc_batch(const SolarDirection& start, const SolarDirection& end, const SceneBounds& bounds,
                               std::size_t n, Rng& rng) {
  ScBatch b;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = rng.uniform();
    const SolarDirection sun = interpolate_solar_path(start, end, t);
    b.rays.push_back(generate_solar_correction_rays(bounds, sun, 1, rng).front());
    b.suns.push_back(sun);
    b.t.push_back(t);
  }
  return b;
}

inline ScBatch sample_sc_batch(const TrainConfig& cfg, const TrainSet& ts, Rng& rng) {
  return sample_sc_batch(cfg.sc_start.value_or(ts.path_start), cfg.sc_end.value_or(ts.path_end), ts.bounds,
                         static_cast<std::size_t>(cfg.batch_sc_rays), rng);
}

// ---------------------------------------------------------------------------
// Trainer

struct LossRecord {
  long iteration = 0;
  double rgb_loss = 0.0;
  double sc_loss = 0.0;
  double lr = 0.0;
  double noise_sigma = 0.0;
};

using ProgressSink = std::function<void(const LossRecord&)>;

inline std::string loss_csv_header() { return "iteration,rgb_loss,sc_loss,lr,noise_sigma\n"; }

inline std::string loss_csv_row(const LossRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.rgb_loss, r.sc_loss, r.lr,
                r.noise_sigma);
  return buf;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& rows) {
  std::string s = loss_csv_header();
  for (const auto& r : rows) s += loss_csv_row(r);
  write_text(path, s);
}

inline std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(concat("cannot open ", path.string()));
  std::string line;
  std::getline(is, line);
  if (line + "\n" != loss_csv_header()) throw Error(concat("unexpected loss CSV header in ", path.string()));
  std::vector<LossRecord> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    LossRecord r;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf", &r.iteration, &r.rgb_loss, &r.sc_loss, &r.lr,
                    &r.noise_sigma) != 5)
      throw Error(concat("malformed loss CSV row: ", line));
    rows.push_back(r);
  }
  return rows;
}

class Trainer {
 public:
  Trainer(TrainConfig cfg, TrainSet data) : cfg_(std::move(cfg)), data_(std::move(data)) {
    cfg_.validate();
    data_.validate();
    std::vector<SolarDirection> suns;
    for (const auto& v : data_.views) suns.push_back(v.sun);
    suns.push_back(cfg_.sc_start.value_or(data_.path_start));
    suns.push_back(cfg_.sc_end.value_or(data_.path_end));
    Rng init = Rng::stream(cfg_.seed, "init");
    field_ = SNerfField::init_siren(init, field_config_for(cfg_.field, data_.bounds, suns, cfg_.mode));
    batch_rng_ = Rng::stream(cfg_.seed, "batch");
    sc_rng_ = Rng::stream(cfg_.seed, "sc");
    noise_rng_ = Rng::stream(cfg_.seed, "noise");
    jitter_rng_ = Rng::stream(cfg_.seed, "jitter");
  }

  const TrainConfig& config() const { return cfg_; }
  const TrainSet& data() const { return data_; }
  const SNerfField& field() const { return field_; }
  SNerfField& field() { return field_; }
  long iteration() const { return iteration_; }
  bool done() const { return iteration_ >= cfg_.iterations; }

  /// One optimization step.
  LossRecord step() {
    const long k = iteration_;
    const double t = static_cast<double>(k) / cfg_.iterations;
    LossRecord rec;
    rec.iteration = k;
    rec.lr = cfg_.learning_rate(k);
    rec.noise_sigma = field_.sigma_noise_std(t);
    try {
      ad::Tape tape(true);
      const PixelBatch pb = sample_pixel_batch(data_, static_cast<std::size_t>(cfg_.batch_rays), batch_rng_);
      const ad::Value rgb = pixel_loss(tape, pb, t);
      rec.rgb_loss = rgb.item();
      std::optional<ad::Value> sc;
      if (cfg_.uses_sc()) {
        const ScBatch sb = sample_sc_batch(cfg_, data_, sc_rng_);
        sc = sc_loss(tape, sb, t);
        rec.sc_loss = sc->item();
      }
      const ad::Value total = total_loss(cfg_, rgb, sc);
      if (!std::isfinite(total.item())) throw ad::NumericError("non-finite total loss");
      field_.params().zero_grad();
      tape.backward(total);
      ad::adam_step(field_.params(), adam_, rec.lr);
    } catch (const ad::NumericError& e) {
      throw Error(concat("training diverged at iteration ", k, " (rgb_loss=", rec.rgb_loss, ", sc_loss=", rec.sc_loss,
                         "): ", e.what()));
    }
    ++iteration_;
    return rec;
  }

  // Checkpoint: parameters plus Adam moments in the tensor file, everything
  // else (schedule position, RNG streams, architecture) in a JSON sidecar.
  void save(const std::filesystem::path& path, const Json& extra = Json::object()) const {
    std::vector<ad::NamedTensor> entries = field_.named_parameters();
    for (std::size_t i = 0; i < adam_.m.size(); ++i) {
      entries.push_back({"adam/m/" + field_.params()[i].name, adam_.m[i]});
      entries.push_back({"adam/v/" + field_.params()[i].name, adam_.v[i]});
    }
    ad::write_checkpoint(path, entries);
    Json side = checkpoint_sidecar(field_.config(), data_.bounds);
    side["train_config"] = train_config_to_json(cfg_);
    side["iteration"] = iteration_;
    side["adam_step"] = adam_.step;
    side["rng"] = {{"batch", batch_rng_.state()},
                   {"sc", sc_rng_.state()},
                   {"noise", noise_rng_.state()},
                   {"jitter", jitter_rng_.state()}};
    for (const auto& [k, v] : extra.items()) side[k] = v;
    write_json(sidecar_path(path), side);
  }

  /// Restores a checkpoint written by save(); the schedules continue at the
  /// stored iteration. `iterations` in cfg may extend the run.
  void restore(const std::filesystem::path& path) {
    const Json side = read_json(sidecar_path(path));
    const auto entries = ad::read_checkpoint(path);
    field_.load_parameters(entries);
    adam_ = {};
    for (const auto& p : field_.params()) {
      const ad::NamedTensor* m = nullptr;
      const ad::NamedTensor* v = nullptr;
      for (const auto& e : entries) {
        if (e.name == "adam/m/" + p.name) m = &e;
        if (e.name == "adam/v/" + p.name) v = &e;
      }
      if (!m || !v) break;
      adam_.m.push_back(m->value);
      adam_.v.push_back(v->value);
    }
    if (adam_.m.size() != field_.params().size()) adam_ = {};
    try {
      adam_.step = side.at("adam_step").get<std::int64_t>();
      iteration_ = side.at("iteration").get<long>();
      batch_rng_.set_state(side.at("rng").at("batch").get<std::string>());
      sc_rng_.set_state(side.at("rng").at("sc").get<std::string>());
      noise_rng_.set_state(side.at("rng").at("noise").get<std::string>());
      jitter_rng_.set_state(side.at("rng").at("jitter").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(concat("checkpoint sidecar: ", e.what()));
    }
    if (adam_.m.empty() && adam_.step != 0) throw Error("checkpoint is missing optimizer state");
  }

  static std::filesystem::path sidecar_path(const std::filesystem::path& ckpt) {
    return std::filesystem::path(ckpt.string() + ".json");
  }

  static Json checkpoint_sidecar(const FieldConfig& f, const SceneBounds& b) {
    return Json{{"field",
                 {{"width", f.width},
                  {"depth", f.depth},
                  {"visibility_width", f.visibility_width},
                  {"omega0", f.omega0},
                  {"density_unit", f.density_unit},
                  {"sigma_noise", f.sigma_noise},
                  {"s_noise", f.s_noise},
                  {"noise_end", f.noise_end},
                  {"shading", f.shading},
                  {"box_min", to_json(f.box_min)},
                  {"box_max", to_json(f.box_max)}}},
                {"bounds", {b.x_min, b.x_max, b.y_min, b.y_max, b.h_min, b.h_max}}};
  }

  // The loss builders stay public so tests can inspect their gradient paths.
  ad::Tensor points_tensor(const std::vector<SamplePoints>& samples) const {
    std::vector<Vec3> pts;
    for (const auto& sp : samples) pts.insert(pts.end(), sp.positions.begin(), sp.positions.end());
    return SNerfField::to_tensor(pts);
  }

  ad::Value pixel_loss(ad::Tape& tape, const PixelBatch& pb, double t) {
    const std::size_t R = pb.rays.size();
    std::vector<SamplePoints> coarse;
    for (const auto& r : pb.rays) coarse.push_back(sample_altitudes(r, static_cast<std::size_t>(cfg_.n_coarse), &jitter_rng_));

    std::vector<SamplePoints> samples = coarse;
    if (cfg_.n_fine > 0) {
      // Noise-free, gradient-free coarse pass that only places the fine samples.
      ad::Tape probe(false);
      const auto tr = field_.trunk(probe, points_tensor(coarse), nullptr, t);
      const ad::Tensor& sig = tr.sigma.data();
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t n = coarse[r].size();
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) s[i] = sig(static_cast<ad::Index>(r * n + i), 0);
        const CompositeWeights cw = composite(s, coarse[r].deltas);
        samples[r] = importance_resample(coarse[r], cw.weights, static_cast<std::size_t>(cfg_.n_fine), &jitter_rng_);
      }
    }
    const ad::Index N = static_cast<ad::Index>(samples.front().size());
    ad::Tensor deltas(static_cast<ad::Index>(R), N);
    ad::Tensor suns(static_cast<ad::Index>(R) * N, 3);
    for (std::size_t r = 0; r < R; ++r) {
      const Vec3 sv = solar_to_vector(pb.suns[r]);
      for (ad::Index i = 0; i < N; ++i) {
        deltas(static_cast<ad::Index>(r), i) = samples[r].deltas[static_cast<std::size_t>(i)];
        const ad::Index row = static_cast<ad::Index>(r) * N + i;
        suns(row, 0) = sv.x;
        suns(row, 1) = sv.y;
        suns(row, 2) = sv.z;
      }
    }
    const auto tr = field_.trunk(tape, points_tensor(samples), &noise_rng_, t);
    const auto bc = ad::composite(ad::reshape(tr.sigma, static_cast<ad::Index>(R), N), deltas);
    const ad::Value albedo = field_.albedo(tape, tr.features);
    ad::Value color;
    if (field_.shaded()) {
      const ad::Value vis = field_.visibility(tape, tr.features, suns, &noise_rng_, t);
      const ad::Value sky = field_.sky(tape, suns);
      color = ad::shaded_color(bc.weights, albedo, vis, sky);
    } else {
      color = ad::emissive_color(bc.weights, albedo);
    }
    return rgb_loss(color, pb.target);
  }

  ad::Value sc_loss(ad::Tape& tape, const ScBatch& sb, double t) {
    const std::size_t R = sb.rays.size();
    std::vector<SamplePoints> samples;
    for (const auto& r : sb.rays) samples.push_back(sample_altitudes(r, static_cast<std::size_t>(cfg_.n_coarse), &jitter_rng_));
    const ad::Index N = static_cast<ad::Index>(samples.front().size());

    // Density and features come from a gradient-free pass: the SC term must
    // not reach the trunk.
    ad::Tape probe(false);
    const auto tr = field_.trunk(probe, points_tensor(samples), nullptr, t);
    ad::Tensor T(static_cast<ad::Index>(R), N), W(static_cast<ad::Index>(R), N);
    ad::Tensor suns(static_cast<ad::Index>(R) * N, 3);
    for (std::size_t r = 0; r < R; ++r) {
      std::vector<double> s(static_cast<std::size_t>(N));
      for (ad::Index i = 0; i < N; ++i) s[static_cast<std::size_t>(i)] = tr.sigma.data()(static_cast<ad::Index>(r) * N + i, 0);
      const CompositeWeights cw = composite(s, samples[r].deltas);
      const Vec3 sv = solar_to_vector(sb.suns[r]);
      for (ad::Index i = 0; i < N; ++i) {
        T(static_cast<ad::Index>(r), i) = cw.transmittance[static_cast<std::size_t>(i)];
        W(static_cast<ad::Index>(r), i) = cw.weights[static_cast<std::size_t>(i)];
        const ad::Index row = static_cast<ad::Index>(r) * N + i;
        suns(row, 0) = sv.x;
        suns(row, 1) = sv.y;
        suns(row, 2) = sv.z;
      }
    }
    const ad::Value features = tape.constant(tr.features.data());
    const ad::Value vis = field_.visibility(tape, features, suns, &noise_rng_, t);
    return solar_correction_loss(T, ad::reshape(vis, static_cast<ad::Index>(R), N), W);
  }

 private:
  TrainConfig cfg_;
  TrainSet data_;
  SNerfField field_;
  ad::AdamState adam_;
  Rng batch_rng_, sc_rng_, noise_rng_, jitter_rng_;
  long iteration_ = 0;
};

struct TrainResult {
  SNerfField field;
  std::vector<LossRecord> history;
};

/// Runs to cfg.iterations. `on_checkpoint` (if set) is called every
/// cfg.checkpoint_every iterations between steps.
inline TrainResult train(const TrainConfig& cfg, const TrainSet& data, const ProgressSink& sink = {},
                         const std::function<void(const Trainer&)>& on_checkpoint = {}) {
  Trainer tr(cfg, data);
  TrainResult out;
  while (!tr.done()) {
    out.history.push_back(tr.step());
    if (sink) sink(out.history.back());
    if (on_checkpoint && cfg.checkpoint_every > 0 && tr.iteration() % cfg.checkpoint_every == 0 && !tr.done())
      on_checkpoint(tr);
  }
  out.field = tr.field();
  return out;
}

/// Field restored from a checkpoint and its sidecar (parameters only).
struct LoadedModel {
  SNerfField field;
  SceneBounds bounds;
  Json sidecar;
};

inline LoadedModel load_model(const std::filesystem::path& ckpt) {
  if (!std::filesystem::exists(ckpt)) throw Error(concat("checkpoint not found: ", ckpt.string()));
  LoadedModel m;
  m.sidecar = read_json(Trainer::sidecar_path(ckpt));
  FieldConfig f;
  try {
    const Json& j = m.sidecar.at("field");
    f.width = j.at("width").get<int>();
    f.depth = j.at("depth").get<int>();
    f.visibility_width = j.at("visibility_width").get<int>();
    f.omega0 = j.at("omega0").get<double>();
    f.density_unit = j.at("density_unit").get<double>();
    f.sigma_noise = j.at("sigma_noise").get<double>();
    f.s_noise = j.at("s_noise").get<double>();
    f.noise_end = j.at("noise_end").get<double>();
    f.shading = j.at("shading").get<bool>();
    f.box_min = vec3_from_json(j.at("box_min"));
    f.box_max = vec3_from_json(j.at("box_max"));
    const Json& b = m.sidecar.at("bounds");
    m.bounds = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                b.at(3).get<double>(), b.at(4).get<double>(), b.at(5).get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(concat("checkpoint sidecar: ", e.what()));
  }
  Rng dummy(0);
  m.field = SNerfField::init_siren(dummy, f);
  m.field.load_parameters(ad::read_checkpoint(ckpt));
  return m;
}

}  // namespace snerf
