#pragma once

// Metrics and experiment drivers: SSIM/PSNR on held-out views, altitude MAE
// against the oracle DEM, shadow IoU, albedo RMSE, and solar-path sweeps.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "snerf/common.hpp"
#include "snerf/geometry.hpp"
#include "snerf/oracle.hpp"
#include "snerf/raster.hpp"
#include "snerf/render.hpp"
#include "snerf/train.hpp"

namespace snerf {

// ---------------------------------------------------------------------------
// Image metrics

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean structural similarity over the valid (unpadded) window positions,
/// averaged over channels.
inline double ssim(const Raster& a, const Raster& b, const SsimParams& p = {}) {
  if (!a.same_shape(b)) throw Error("ssim: images differ in shape");
  if (a.width < p.window || a.height < p.window)
    throw Error(concat("ssim: images must be at least ", p.window, "x", p.window));
  std::vector<double> g(static_cast<std::size_t>(p.window));
  double gs = 0.0;
  const int half = p.window / 2;
  for (int i = 0; i < p.window; ++i) {
    g[i] = std::exp(-0.5 * (i - half) * (i - half) / (p.sigma * p.sigma));
    gs += g[i];
  }
  for (double& v : g) v /= gs;
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

  double total = 0.0;
  const int out_w = a.width - p.window + 1, out_h = a.height - p.window + 1;
  for (int ch = 0; ch < a.channels; ++ch) {
    double sum = 0.0;
    for (int r = 0; r < out_h; ++r)
      for (int c = 0; c < out_w; ++c) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int i = 0; i < p.window; ++i)
          for (int j = 0; j < p.window; ++j) {
            const double w = g[i] * g[j];
            const double x = a.at(r + i, c + j, ch), y = b.at(r + i, c + j, ch);
            mx += w * x;
            my += w * y;
            xx += w * x * x;
            yy += w * y * y;
            xy += w * x * y;
          }
        const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
        sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    total += sum / (static_cast<double>(out_w) * out_h);
  }
  return total / a.channels;
}

/// PSNR for a unit dynamic range; +inf for identical images.
inline double psnr(const Raster& a, const Raster& b) {
  if (!a.same_shape(b)) throw Error("psnr: images differ in shape");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) se += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  const double mse = se / static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

/// |I(pred) ∩ I(oracle)| / |I(pred) ∪ I(oracle)| with predicted shadow where
/// visibility < threshold. Two empty masks agree perfectly.
inline double shadow_iou(const Raster& predicted_visibility, const Raster& oracle_shadow, double threshold = 0.5) {
  if (!predicted_visibility.same_shape(oracle_shadow) || predicted_visibility.channels != 1)
    throw Error("shadow_iou: need single-channel maps of equal shape");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < oracle_shadow.data.size(); ++i) {
    const bool p = predicted_visibility.data[i] < threshold;
    const bool o = oracle_shadow.data[i] > 0.5;
    inter += p && o;
    uni += p || o;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Mask-to-mask IoU (both maps binary, 1 = set).
inline double mask_iou(const Raster& a, const Raster& b) {
  Raster vis = a;
  for (double& v : vis.data) v = v > 0.5 ? 0.0 : 1.0;
  return shadow_iou(vis, b, 0.5);
}

struct AlbedoError {
  double overall = 0.0;
  double in_mask = 0.0;
  double out_mask = 0.0;
  std::size_t in_cells = 0;
  std::size_t out_cells = 0;
};

/// RMSE over all channels, overall and split by a cell mask. An empty side
/// reports 0 with a zero count.
inline AlbedoError albedo_rmse(const Raster& predicted, const Raster& oracle, const Raster& mask) {
  if (!predicted.same_shape(oracle)) throw Error("albedo_rmse: images differ in shape");
  if (mask.width != oracle.width || mask.height != oracle.height || mask.channels != 1)
    throw Error("albedo_rmse: mask shape mismatch");
  double s_all = 0, s_in = 0, s_out = 0;
  AlbedoError e;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    double se = 0.0;
    for (int c = 0; c < oracle.channels; ++c) {
      const double d = predicted.data[i * oracle.channels + c] - oracle.data[i * oracle.channels + c];
      se += d * d;
    }
    s_all += se;
    if (mask.data[i] > 0.5) {
      s_in += se;
      ++e.in_cells;
    } else {
      s_out += se;
      ++e.out_cells;
    }
  }
  const double ch = oracle.channels;
  e.overall = std::sqrt(s_all / (ch * static_cast<double>(mask.data.size())));
  e.in_mask = e.in_cells ? std::sqrt(s_in / (ch * static_cast<double>(e.in_cells))) : 0.0;
  e.out_mask = e.out_cells ? std::sqrt(s_out / (ch * static_cast<double>(e.out_cells))) : 0.0;
  return e;
}

inline Raster abs_diff(const Raster& a, const Raster& b) {
  if (!a.same_shape(b)) throw Error("abs_diff: images differ in shape");
  Raster d = a;
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = std::abs(a.data[i] - b.data[i]);
  return d;
}

// ---------------------------------------------------------------------------
// Altitude

struct AltitudeError {
  double mae = 0.0;
  double masked_mae = 0.0;         // restricted to the mask, if one was given
  std::size_t masked_cells = 0;
  double low_confidence = 0.0;     // fraction of cells with opacity < 0.5
};

inline AltitudeError altitude_mae(const RenderedImage& nadir, const DemGrid& dem, const Raster* mask = nullptr) {
  if (nadir.width != dem.cols || nadir.height != dem.rows) throw Error("altitude_mae: grid mismatch");
  AltitudeError e;
  double sum = 0.0, msum = 0.0;
  std::size_t low = 0;
  for (std::size_t i = 0; i < dem.values.size(); ++i) {
    const double err = std::abs(nadir.pixels[i].altitude - dem.values[i]);
    sum += err;
    if (nadir.pixels[i].opacity < 0.5) ++low;
    if (mask && mask->data[i] > 0.5) {
      msum += err;
      ++e.masked_cells;
    }
  }
  const double n = static_cast<double>(dem.values.size());
  e.mae = sum / n;
  e.low_confidence = static_cast<double>(low) / n;
  e.masked_mae = e.masked_cells ? msum / static_cast<double>(e.masked_cells) : 0.0;
  return e;
}

/// Renders nadir rays through the DEM cell centres and compares the expected
/// altitude with the oracle DEM.
template <RenderableField F>
AltitudeError altitude_mae(const F& field, const SceneSpec& scene, const DemGrid& dem, const RenderConfig& cfg,
                           const Raster* mask = nullptr) {
  const RenderedImage img = render_view(field, dem_camera(scene), SolarDirection(90.0, 0.0), scene.h_min, scene.h_max, cfg);
  return altitude_mae(img, dem, mask);
}

// ---------------------------------------------------------------------------
// Solar-path sweep

struct SunSweep {
  std::vector<SolarDirection> suns;
  std::vector<Raster> images;
  std::vector<double> brightness;  // mean over pixels and channels

  /// Smallest brightness relative to the mean of the two endpoints.
  double min_ratio() const {
    const double ends = 0.5 * (brightness.front() + brightness.back());
    return *std::min_element(brightness.begin(), brightness.end()) / ends;
  }
};

template <RenderableField F>
SunSweep sun_sweep(const F& field, const OrthoCamera& cam, const SolarDirection& from, const SolarDirection& to,
                   int steps, double h_min, double h_max, const RenderConfig& cfg) {
  if (steps < 2) throw Error("sun_sweep: need at least 2 steps");
  SunSweep s;
  for (int k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / (steps - 1);
    const SolarDirection sun = interpolate_solar_path(from, to, t);
    const Raster img = render_view(field, cam, sun, h_min, h_max, cfg).rgb();
    s.suns.push_back(sun);
    s.brightness.push_back(img.mean());
    s.images.push_back(img);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Reports

struct ViewMetrics {
  int acquisition = 0;
  double ssim = 0.0;
  double psnr = 0.0;
  double shadow_iou = 0.0;
};

struct EvalReport {
  std::string mode;
  std::uint64_t seed = 0;
  std::vector<ViewMetrics> views;
  double altitude_mae = 0.0;
  double altitude_mae_shadow = 0.0;  // cells shadowed in at least one training view
  double low_confidence = 0.0;
  double albedo_rmse = 0.0;
  double albedo_rmse_persistent = 0.0;  // cells shadowed in every training view
  double albedo_rmse_lit = 0.0;
  double sweep_min_ratio = 0.0;
  std::vector<double> sweep_brightness;

  double mean_ssim() const { return mean_of(&ViewMetrics::ssim); }
  double mean_psnr() const { return mean_of(&ViewMetrics::psnr); }
  double mean_shadow_iou() const { return mean_of(&ViewMetrics::shadow_iou); }

 private:
  double mean_of(double ViewMetrics::*f) const {
    if (views.empty()) return 0.0;
    double s = 0.0;
    for (const auto& v : views) s += v.*f;
    return s / static_cast<double>(views.size());
  }
};

inline Json report_to_json(const EvalReport& r) {
  Json views = Json::array();
  for (const auto& v : r.views)
    views.push_back({{"acquisition", v.acquisition}, {"ssim", v.ssim}, {"psnr", v.psnr}, {"shadow_iou", v.shadow_iou}});
  return Json{{"mode", r.mode},
              {"seed", r.seed},
              {"views", views},
              {"altitude_mae", r.altitude_mae},
              {"altitude_mae_shadow", r.altitude_mae_shadow},
              {"low_confidence", r.low_confidence},
              {"albedo_rmse", r.albedo_rmse},
              {"albedo_rmse_persistent", r.albedo_rmse_persistent},
              {"albedo_rmse_lit", r.albedo_rmse_lit},
              {"sweep_min_ratio", r.sweep_min_ratio},
              {"sweep_brightness", r.sweep_brightness}};
}

inline EvalReport report_from_json(const Json& j) {
  EvalReport r;
  try {
    r.mode = j.at("mode").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& v : j.at("views")) {
      // PSNR may be +inf, which JSON stores as null.
      const double ps = v.at("psnr").is_null() ? std::numeric_limits<double>::infinity() : v.at("psnr").get<double>();
      r.views.push_back({v.at("acquisition").get<int>(), v.at("ssim").get<double>(), ps, v.at("shadow_iou").get<double>()});
    }
    r.altitude_mae = j.at("altitude_mae").get<double>();
    r.altitude_mae_shadow = j.at("altitude_mae_shadow").get<double>();
    r.low_confidence = j.at("low_confidence").get<double>();
    r.albedo_rmse = j.at("albedo_rmse").get<double>();
    r.albedo_rmse_persistent = j.at("albedo_rmse_persistent").get<double>();
    r.albedo_rmse_lit = j.at("albedo_rmse_lit").get<double>();
    r.sweep_min_ratio = j.at("sweep_min_ratio").get<double>();
    r.sweep_brightness = j.at("sweep_brightness").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(concat("invalid report JSON: ", e.what()));
  }
  return r;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string report_csv_header() {
  return "mode,seed,ssim,psnr,shadow_iou,altitude_mae,altitude_mae_shadow,low_confidence,albedo_rmse,"
         "albedo_rmse_persistent,albedo_rmse_lit,sweep_min_ratio\n";
}

inline std::string report_csv_row(const EvalReport& r, const std::string& seed_label = "") {
  return r.mode + "," + (seed_label.empty() ? std::to_string(r.seed) : seed_label) + "," + fmt(r.mean_ssim()) + "," +
         fmt(r.mean_psnr()) + "," + fmt(r.mean_shadow_iou()) + "," + fmt(r.altitude_mae) + "," +
         fmt(r.altitude_mae_shadow) + "," + fmt(r.low_confidence) + "," + fmt(r.albedo_rmse) + "," +
         fmt(r.albedo_rmse_persistent) + "," + fmt(r.albedo_rmse_lit) + "," + fmt(r.sweep_min_ratio) + "\n";
}

/// Per-view CSV for a single report.
inline std::string report_views_csv(const EvalReport& r) {
  std::string s = "mode,seed,acquisition,ssim,psnr,shadow_iou\n";
  for (const auto& v : r.views)
    s += r.mode + "," + std::to_string(r.seed) + "," + std::to_string(v.acquisition) + "," + fmt(v.ssim) + "," +
         fmt(v.psnr) + "," + fmt(v.shadow_iou) + "\n";
  return s;
}

inline std::string report_summary(const EvalReport& r) {
  std::string s = concat("mode ", r.mode, "  seed ", r.seed, "\n");
  for (const auto& v : r.views)
    s += concat("  view ", v.acquisition, ": SSIM ", fmt(v.ssim), "  PSNR ", fmt(v.psnr), " dB  shadow IoU ",
                fmt(v.shadow_iou), "\n");
  s += concat("  altitude MAE ", fmt(r.altitude_mae), " m (shadowed cells ", fmt(r.altitude_mae_shadow),
              " m, low-confidence fraction ", fmt(r.low_confidence), ")\n");
  s += concat("  albedo RMSE ", fmt(r.albedo_rmse), " (persistent shadow ", fmt(r.albedo_rmse_persistent), ", lit ",
              fmt(r.albedo_rmse_lit), ")\n");
  s += concat("  sun sweep min/endpoint brightness ", fmt(r.sweep_min_ratio), "\n");
  return s;
}

// ---------------------------------------------------------------------------
// Model evaluation

struct EvalOptions {
  RenderConfig render;
  int sweep_steps = 9;
  std::filesystem::path panel_dir;  // empty: no images written
};

struct EvalContext {
  SceneSpec scene;
  GroundTruthBundle gt;
  std::vector<int> test;
  std::vector<int> train;
  Raster shadow_any;         // DEM cells shadowed under some training sun
  Raster shadow_persistent;  // DEM cells shadowed under every training sun

  static EvalContext make(const SceneSpec& scene, int threads = 0) {
    EvalContext c;
    c.scene = scene;
    c.gt = render_ground_truth(scene, threads);
    c.test = split_test_acquisitions(scene);
    c.train = train_acquisitions(scene, c.test);
    std::vector<SolarDirection> suns;
    for (int a : c.train) suns.push_back(scene.acquisitions[static_cast<std::size_t>(a)].sun);
    c.shadow_any = dem_shadow_mask(scene, c.gt, suns, true);
    c.shadow_persistent = dem_shadow_mask(scene, c.gt, suns, false);
    return c;
  }
};

/// Full report for one trained field. A field without shading is judged with
/// its radiance standing in for albedo and full visibility everywhere.
template <RenderableField F>
EvalReport evaluate_model(const F& field, const EvalContext& ctx, const std::string& mode, std::uint64_t seed,
                          const EvalOptions& opt) {
  const SceneSpec& sc = ctx.scene;
  EvalReport r;
  r.mode = mode;
  r.seed = seed;
  if (!opt.panel_dir.empty()) std::filesystem::create_directories(opt.panel_dir);
  for (int a : ctx.test) {
    const Acquisition& acq = sc.acquisitions[static_cast<std::size_t>(a)];
    const RenderedImage img = render_view(field, camera_for(sc, acq), acq.sun, sc.h_min, sc.h_max, opt.render);
    const auto& truth = ctx.gt.views[static_cast<std::size_t>(a)];
    const Raster rgb = img.rgb();
    r.views.push_back({a, ssim(truth.rgb, rgb), psnr(truth.rgb, rgb), shadow_iou(img.shadow(), truth.shadow, 0.5)});
    if (!opt.panel_dir.empty()) {
      write_png(opt.panel_dir / (view_name(a, "panel") + ".png"), hconcat({truth.rgb, rgb, abs_diff(truth.rgb, rgb)}));
      write_png(opt.panel_dir / (view_name(a, "shadow") + ".png"), hconcat({truth.shadow, img.shadow()}));
      write_float_planes(opt.panel_dir / (view_name(a, "pred_rgb") + ".f32"), rgb);
    }
  }
  const RenderedImage nadir =
      render_view(field, dem_camera(sc), sc.held_out_sun, sc.h_min, sc.h_max, opt.render);
  const AltitudeError alt = altitude_mae(nadir, ctx.gt.dem, &ctx.shadow_any);
  r.altitude_mae = alt.mae;
  r.altitude_mae_shadow = alt.masked_mae;
  r.low_confidence = alt.low_confidence;
  const AlbedoError ae = albedo_rmse(nadir.albedo(), ctx.gt.dem_albedo, ctx.shadow_persistent);
  r.albedo_rmse = ae.overall;
  r.albedo_rmse_persistent = ae.in_mask;
  r.albedo_rmse_lit = ae.out_mask;

  OrthoCamera cam = dem_camera(sc);
  cam.width = cam.height = sc.image_size;
  const SunSweep sw = sun_sweep(field, cam, sc.path_start, sc.path_end, opt.sweep_steps, sc.h_min, sc.h_max, opt.render);
  r.sweep_brightness = sw.brightness;
  r.sweep_min_ratio = sw.min_ratio();
  if (!opt.panel_dir.empty()) {
    Raster dem_pred = nadir.altitude();
    Raster dem_true = ctx.gt.dem.raster();
    for (auto* d : {&dem_pred, &dem_true})
      for (double& v : d->data) v = (v - sc.h_min) / (sc.h_max - sc.h_min);
    write_png(opt.panel_dir / "dem_panel.png", hconcat({dem_true, dem_pred, abs_diff(dem_true, dem_pred)}));
    write_png(opt.panel_dir / "albedo_panel.png", hconcat({ctx.gt.dem_albedo, nadir.albedo()}));
    write_png(opt.panel_dir / "sun_sweep.png", hconcat(sw.images));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationOptions {
  TrainConfig base;             // mode and seed are overwritten per run
  std::filesystem::path out;    // tables and panels
  std::filesystem::path cache;  // per-run checkpoints and reports, keyed by config hash
  EvalOptions eval;
  int threads = 0;
  std::function<void(const std::string&)> log;
};

struct AblationResult {
  std::vector<EvalReport> runs;  // mode-major, then seed

  std::vector<const EvalReport*> of_mode(const std::string& mode) const {
    std::vector<const EvalReport*> out;
    for (const auto& r : runs)
      if (r.mode == mode) out.push_back(&r);
    return out;
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Per-mode medians of every metric, labelled "median" in the seed column.
inline EvalReport median_report(const std::vector<const EvalReport*>& rs) {
  EvalReport m;
  if (rs.empty()) return m;
  m.mode = rs.front()->mode;
  auto med = [&](auto get) {
    std::vector<double> v;
    for (const auto* r : rs) v.push_back(get(*r));
    return median(v);
  };
  m.views.push_back({-1, med([](const EvalReport& r) { return r.mean_ssim(); }),
                     med([](const EvalReport& r) { return r.mean_psnr(); }),
                     med([](const EvalReport& r) { return r.mean_shadow_iou(); })});
  m.altitude_mae = med([](const EvalReport& r) { return r.altitude_mae; });
  m.altitude_mae_shadow = med([](const EvalReport& r) { return r.altitude_mae_shadow; });
  m.low_confidence = med([](const EvalReport& r) { return r.low_confidence; });
  m.albedo_rmse = med([](const EvalReport& r) { return r.albedo_rmse; });
  m.albedo_rmse_persistent = med([](const EvalReport& r) { return r.albedo_rmse_persistent; });
  m.albedo_rmse_lit = med([](const EvalReport& r) { return r.albedo_rmse_lit; });
  m.sweep_min_ratio = med([](const EvalReport& r) { return r.sweep_min_ratio; });
  return m;
}

inline const std::vector<TrainMode>& ablation_modes() {
  static const std::vector<TrainMode> modes = {TrainMode::nerf, TrainMode::snerf_no_sc, TrainMode::snerf_sc};
  return modes;
}

/// Trains and evaluates every mode on every seed. A run whose report already
/// sits in the cache under the same configuration hash is not repeated.
inline AblationResult run_ablation(const std::string& preset, const std::vector<std::uint64_t>& seeds,
                                   const AblationOptions& opt) {
  if (seeds.empty()) throw Error("ablation: no seeds given");
  auto log = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  const std::filesystem::path cache = opt.cache.empty() ? opt.out / "runs" : opt.cache;
  std::filesystem::create_directories(cache);
  if (!opt.out.empty()) std::filesystem::create_directories(opt.out);

  AblationResult res;
  std::vector<EvalReport> by_seed_mode;
  for (std::uint64_t seed : seeds) {
    const SceneSpec scene = generate_scene(preset, seed);
    std::optional<EvalContext> ctx;
    for (TrainMode mode : ablation_modes()) {
      TrainConfig cfg = opt.base;
      cfg.mode = mode;
      cfg.seed = seed;
      const std::string hash = config_hash(cfg, scene_to_json(scene).dump());
      const std::filesystem::path run_dir = cache / (to_string(mode) + "_seed" + std::to_string(seed) + "_" + hash);
      const std::filesystem::path report_path = run_dir / "report.json";
      if (std::filesystem::exists(report_path)) {
        log(concat("cached: ", run_dir.string()));
        by_seed_mode.push_back(report_from_json(read_json(report_path)));
        continue;
      }
      if (!ctx) ctx = EvalContext::make(scene, opt.threads);
      std::filesystem::create_directories(run_dir);
      log(concat("training ", to_string(mode), " seed ", seed, " -> ", run_dir.string()));
      Trainer tr(cfg, make_train_set(scene, ctx->gt, ctx->train));
      std::vector<LossRecord> hist;
      while (!tr.done()) {
        hist.push_back(tr.step());
        if (hist.size() % 1000 == 0)
          log(concat("  iter ", hist.back().iteration, " rgb ", fmt(hist.back().rgb_loss), " sc ",
                     fmt(hist.back().sc_loss)));
      }
      tr.save(run_dir / "model.ckpt");
      write_loss_csv(run_dir / "loss.csv", hist);
      EvalOptions eo = opt.eval;
      eo.panel_dir = run_dir / "panels";
      const EvalReport rep = evaluate_model(tr.field(), *ctx, to_string(mode), seed, eo);
      write_json(report_path, report_to_json(rep));
      write_text(run_dir / "summary.txt", report_summary(rep));
      by_seed_mode.push_back(rep);
    }
  }
  for (TrainMode mode : ablation_modes())
    for (const auto& r : by_seed_mode)
      if (r.mode == to_string(mode)) res.runs.push_back(r);

  if (!opt.out.empty()) {
    std::string all = report_csv_header();
    for (const auto& r : res.runs) all += report_csv_row(r);
    write_text(opt.out / "ablation_runs.csv", all);
    std::string table = report_csv_header();
    std::string summary;
    for (TrainMode mode : ablation_modes()) {
      const EvalReport m = median_report(res.of_mode(to_string(mode)));
      table += report_csv_row(m, "median");
      summary += concat(to_string(mode), ": median altitude MAE ", fmt(m.altitude_mae), " m, shadowed-cell MAE ",
                        fmt(m.altitude_mae_shadow), " m, SSIM ", fmt(m.views.front().ssim), ", shadow IoU ",
                        fmt(m.views.front().shadow_iou), ", persistent-shadow albedo RMSE ",
                        fmt(m.albedo_rmse_persistent), ", sweep min ratio ", fmt(m.sweep_min_ratio), "\n");
    }
    write_text(opt.out / "ablation.csv", table);
    write_text(opt.out / "ablation_summary.txt", summary);
    // Gather each run's panels next to the tables.
    for (const auto& r : res.runs) {
      TrainConfig cfg = opt.base;
      cfg.mode = parse_mode(r.mode);
      cfg.seed = r.seed;
      const SceneSpec scene = generate_scene(preset, r.seed);
      const std::string name = r.mode + "_seed" + std::to_string(r.seed);
      const auto src = cache / (name + "_" + config_hash(cfg, scene_to_json(scene).dump())) / "panels";
      if (!std::filesystem::exists(src)) continue;
      const auto dst = opt.out / "panels" / name;
      std::filesystem::create_directories(dst);
      std::filesystem::copy(src, dst, std::filesystem::copy_options::overwrite_existing |
                                          std::filesystem::copy_options::recursive);
    }
  }
  return res;
}

}  // namespace snerf
