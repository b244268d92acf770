// snerf: scene generation, training, rendering and evaluation from the shell.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "snerf/snerf.hpp"

namespace fs = std::filesystem;
using namespace snerf;

namespace {

// Wall-clock stamp; SOURCE_DATE_EPOCH pins it for reproducible manifests.
std::string timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  Json j = Json::object();
  std::string started = timestamp();

  void file(const std::string& key, const fs::path& p) {
    if (!fs::exists(p)) throw Error(concat("declared output missing: ", p.string()));
    j["files"][key] = p.string();
  }
  void write(const fs::path& path) {
    j["started"] = started;
    j["finished"] = timestamp();
    write_json(path, j);
  }
};

std::vector<double> parse_pair(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(concat("cannot parse number '", item, "' in '", s, "'"));
    }
  }
  return out;
}

SolarDirection parse_sun(const std::string& s) {
  const auto v = parse_pair(s);
  if (v.size() != 2) throw Error(concat("expected elevation,azimuth in degrees, got '", s, "'"));
  return SolarDirection(v[0], v[1]);
}

/// --scene may name a dataset directory or a scene JSON file.
fs::path scene_json_path(const fs::path& p) { return fs::is_directory(p) ? p / "scene.json" : p; }
fs::path dataset_dir(const fs::path& p) { return fs::is_directory(p) ? p : p.parent_path(); }

RenderConfig render_config(const Json& sidecar, int threads) {
  RenderConfig rc;
  rc.threads = threads;
  if (sidecar.contains("train_config")) {
    rc.n_coarse = sidecar["train_config"].value("n_coarse", rc.n_coarse);
    rc.n_fine = sidecar["train_config"].value("n_fine", rc.n_fine);
  }
  return rc;
}

fs::path scene_for_checkpoint(const LoadedModel& m, const std::string& given) {
  if (!given.empty()) return scene_json_path(given);
  if (m.sidecar.contains("scene")) return m.sidecar["scene"].get<std::string>();
  throw Error("no --scene given and the checkpoint does not record one");
}

int cmd_gen_scene(const std::string& preset, std::uint64_t seed, const fs::path& out, int threads) {
  Manifest man;
  const SceneSpec scene = generate_scene(preset, seed);
  const GroundTruthBundle gt = render_ground_truth(scene, threads);
  write_dataset(out, scene, gt);
  man.j["command"] = "gen-scene";
  man.j["preset"] = preset;
  man.j["seed"] = seed;
  man.j["config_hash"] = concat(std::hex, fnv1a(scene_to_json(scene).dump()));
  man.file("scene", out / "scene.json");
  man.file("dataset", out / "dataset.json");
  man.file("dem", out / "dem.f32");
  man.write(out / "manifest.json");
  std::cout << "wrote " << scene.acquisitions.size() << " views of preset " << preset << " to " << out.string() << "\n";
  return 0;
}

int cmd_train(const fs::path& scene_arg, const std::string& config_arg, const std::string& mode_arg,
              const fs::path& out, const std::string& resume, long seed_override, long iterations_override,
              int threads) {
  Manifest man;
  TrainConfig cfg;
  if (!config_arg.empty()) {
    if (fs::exists(config_arg))
      cfg = train_config_from_json(read_json(config_arg));
    else
      cfg = train_preset(config_arg);
  }
  if (!mode_arg.empty()) cfg.mode = parse_mode(mode_arg);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (iterations_override > 0) cfg.iterations = static_cast<int>(iterations_override);
  cfg.validate();
  if (cfg.mode == TrainMode::nerf && cfg.lambda_s_given)
    std::cerr << "warning: lambda_s is ignored in mode nerf (no solar correction term)\n";
  (void)threads;  // a training step runs on one thread; see README

  const fs::path scene_path = scene_json_path(scene_arg);
  const SceneSpec scene = load_scene(scene_path);
  const auto test = split_test_acquisitions(scene);
  const auto train_idx = train_acquisitions(scene, test);
  TrainSet ts = load_train_set(dataset_dir(scene_arg), scene, train_idx);

  fs::create_directories(out);
  Trainer tr(cfg, std::move(ts));
  std::vector<LossRecord> hist;
  if (!resume.empty()) {
    tr.restore(resume);
    const fs::path prev_csv = fs::path(resume).parent_path() / "loss.csv";
    if (fs::exists(prev_csv))
      for (const auto& r : read_loss_csv(prev_csv))
        if (r.iteration < tr.iteration()) hist.push_back(r);
    std::cout << "resumed at iteration " << tr.iteration() << "\n";
  }
  const Json extra{{"scene", fs::absolute(scene_path).string()}};
  const fs::path ckpt = out / "model.ckpt";
  const fs::path csv = out / "loss.csv";
  while (!tr.done()) {
    hist.push_back(tr.step());
    const auto& r = hist.back();
    if ((r.iteration + 1) % 500 == 0 || tr.done())
      std::cout << "iter " << r.iteration + 1 << "/" << cfg.iterations << "  rgb " << fmt(r.rgb_loss) << "  sc "
                << fmt(r.sc_loss) << "  lr " << fmt(r.lr) << std::endl;
    if (cfg.checkpoint_every > 0 && tr.iteration() % cfg.checkpoint_every == 0 && !tr.done()) {
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_%06ld.ckpt", tr.iteration());
      tr.save(out / name, extra);
      write_loss_csv(csv, hist);
    }
  }
  tr.save(ckpt, extra);
  write_loss_csv(csv, hist);

  man.j["command"] = "train";
  man.j["mode"] = to_string(cfg.mode);
  man.j["seed"] = cfg.seed;
  man.j["config"] = train_config_to_json(cfg);
  man.j["config_hash"] = config_hash(cfg, scene_to_json(scene).dump());
  man.file("scene", scene_path);
  man.file("checkpoint", ckpt);
  man.file("checkpoint_sidecar", Trainer::sidecar_path(ckpt));
  man.file("loss_csv", csv);
  man.write(out / "manifest.json");
  return 0;
}

int cmd_render(const fs::path& ckpt, const std::string& scene_arg, const std::string& view, const std::string& sun_arg,
               bool albedo, bool shadow, bool depth, const fs::path& out, int threads) {
  Manifest man;
  const LoadedModel m = load_model(ckpt);
  const SceneSpec scene = load_scene(scene_for_checkpoint(m, scene_arg));
  OrthoCamera cam;
  const auto vv = parse_pair(view);
  if (vv.size() == 1) {
    const int idx = static_cast<int>(vv[0]);
    if (idx < 0 || idx >= static_cast<int>(scene.acquisitions.size())) throw Error(concat("no acquisition ", idx));
    cam = camera_for(scene, scene.acquisitions[static_cast<std::size_t>(idx)]);
  } else if (vv.size() == 2) {
    cam = camera_for(scene, Acquisition{vv[0], vv[1], SolarDirection()});
  } else {
    throw Error("--view takes an acquisition index or off_nadir,azimuth");
  }
  SolarDirection sun;
  const auto sv = parse_pair(sun_arg);
  if (sv.size() == 1) {
    const int idx = static_cast<int>(sv[0]);
    if (idx < 0 || idx >= static_cast<int>(scene.acquisitions.size())) throw Error(concat("no acquisition ", idx));
    sun = scene.acquisitions[static_cast<std::size_t>(idx)].sun;
  } else {
    sun = parse_sun(sun_arg);
  }
  const RenderedImage img = render_view(m.field, cam, sun, scene.h_min, scene.h_max, render_config(m.sidecar, threads));
  fs::create_directories(out);
  auto emit = [&](const std::string& name, const Raster& r) {
    write_png(out / (name + ".png"), r);
    write_float_planes(out / (name + ".f32"), r);
    man.file(name + "_png", out / (name + ".png"));
    man.file(name + "_planes", out / (name + ".f32"));
  };
  emit("rgb", img.rgb());
  if (albedo) emit("albedo", img.albedo());
  if (shadow) emit("shadow", img.shadow());
  if (depth) {
    Raster alt = img.altitude();
    write_float_planes(out / "altitude.f32", alt);
    for (double& v : alt.data) v = (v - scene.h_min) / (scene.h_max - scene.h_min);
    write_png(out / "altitude.png", alt);
    man.file("altitude_png", out / "altitude.png");
    man.file("altitude_planes", out / "altitude.f32");
  }
  man.j["command"] = "render";
  man.j["checkpoint"] = ckpt.string();
  man.j["sun"] = to_json(sun);
  man.write(out / "manifest.json");
  return 0;
}

int cmd_eval(const fs::path& ckpt, const std::string& scene_arg, const fs::path& out, int threads) {
  Manifest man;
  const LoadedModel m = load_model(ckpt);
  const SceneSpec scene = load_scene(scene_for_checkpoint(m, scene_arg));
  const EvalContext ctx = EvalContext::make(scene, threads);
  EvalOptions eo;
  eo.render = render_config(m.sidecar, threads);
  eo.panel_dir = out / "panels";
  const std::string mode = m.sidecar.contains("train_config") ? m.sidecar["train_config"].value("mode", "?") : "?";
  const std::uint64_t seed = m.sidecar.contains("train_config") ? m.sidecar["train_config"].value("seed", 0ull) : 0;
  const EvalReport rep = evaluate_model(m.field, ctx, mode, seed, eo);
  fs::create_directories(out);
  write_text(out / "report.csv", report_csv_header() + report_csv_row(rep));
  write_text(out / "report_views.csv", report_views_csv(rep));
  write_text(out / "summary.txt", report_summary(rep));
  write_json(out / "report.json", report_to_json(rep));
  std::cout << report_summary(rep);
  man.j["command"] = "eval";
  man.j["checkpoint"] = ckpt.string();
  man.file("report_csv", out / "report.csv");
  man.file("report_views_csv", out / "report_views.csv");
  man.file("summary", out / "summary.txt");
  man.write(out / "manifest.json");
  return 0;
}

int cmd_ablation(const std::string& preset, const std::string& seeds_arg, const fs::path& out,
                 const std::string& config_arg, const std::string& cache, long iterations_override, int threads) {
  Manifest man;
  AblationOptions opt;
  if (!config_arg.empty())
    opt.base = fs::exists(config_arg) ? train_config_from_json(read_json(config_arg)) : train_preset(config_arg);
  if (iterations_override > 0) opt.base.iterations = static_cast<int>(iterations_override);
  opt.out = out;
  opt.cache = cache;
  opt.threads = threads;
  opt.eval.render.n_coarse = opt.base.n_coarse;
  opt.eval.render.n_fine = opt.base.n_fine;
  opt.eval.render.threads = threads;
  opt.log = [](const std::string& s) { std::cout << s << std::endl; };
  std::vector<std::uint64_t> seeds;
  for (double s : parse_pair(seeds_arg)) {
    if (s < 0 || s != std::floor(s)) throw Error(concat("invalid seed ", s));
    seeds.push_back(static_cast<std::uint64_t>(s));
  }
  generate_scene(preset, 0);  // validates the preset name before any work
  run_ablation(preset, seeds, opt);
  std::cout << read_text(out / "ablation_summary.txt");
  man.j["command"] = "ablation";
  man.j["preset"] = preset;
  man.j["seeds"] = seeds;
  man.j["config"] = train_config_to_json(opt.base);
  man.file("table", out / "ablation.csv");
  man.file("runs", out / "ablation_runs.csv");
  man.file("summary", out / "ablation_summary.txt");
  man.write(out / "manifest.json");
  return 0;
}

int cmd_sweep(const fs::path& ckpt, const std::string& scene_arg, const std::string& from, const std::string& to,
              int steps, const fs::path& out, int threads) {
  Manifest man;
  const LoadedModel m = load_model(ckpt);
  const SceneSpec scene = load_scene(scene_for_checkpoint(m, scene_arg));
  const SolarDirection a = from.empty() ? scene.path_start : parse_sun(from);
  const SolarDirection b = to.empty() ? scene.path_end : parse_sun(to);
  const OrthoCamera cam = camera_for(scene, Acquisition{0.0, 0.0, SolarDirection()});
  const SunSweep sw = sun_sweep(m.field, cam, a, b, steps, scene.h_min, scene.h_max, render_config(m.sidecar, threads));
  fs::create_directories(out);
  std::string csv = "step,t,elevation,azimuth,brightness\n";
  for (int k = 0; k < steps; ++k) {
    const std::string name = concat("sweep_", k < 10 ? "0" : "", k, ".png");
    write_png(out / name, sw.images[static_cast<std::size_t>(k)]);
    man.file(concat("image_", k), out / name);
    csv += concat(k, ",", fmt(static_cast<double>(k) / (steps - 1)), ",", fmt(sw.suns[k].elevation()), ",",
                  fmt(sw.suns[k].azimuth()), ",", fmt(sw.brightness[k]), "\n");
  }
  write_text(out / "brightness.csv", csv);
  std::cout << "min/endpoint brightness ratio " << fmt(sw.min_ratio()) << "\n";
  man.j["command"] = "sweep-sun";
  man.j["checkpoint"] = ckpt.string();
  man.file("brightness_csv", out / "brightness.csv");
  man.write(out / "manifest.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Shadow-aware neural radiance fields for multi-date satellite imagery"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: SNERF_THREADS or all cores)")->check(CLI::NonNegativeNumber);

  std::string preset, out, scene, config, mode, resume, ckpt, view = "0", sun = "0", from, to, seeds = "0,1,2", cache;
  std::uint64_t seed = 0;
  long seed_override = -1, iterations = 0;
  bool want_albedo = false, want_shadow = false, want_depth = false;
  int steps = 9;

  auto* gen = app.add_subcommand("gen-scene", "Generate a synthetic scene and its ground truth");
  gen->add_option("--preset", preset, "slab, single_box, blocks, courtyard or transient")->required();
  gen->add_option("--seed", seed, "Scene seed");
  gen->add_option("--out", out, "Output directory")->required();

  auto* trn = app.add_subcommand("train", "Train a field on a generated dataset");
  trn->add_option("--scene", scene, "Dataset directory (or its scene.json)")->required();
  trn->add_option("--config", config, "Config JSON file or preset name (desk, paper, smoke)");
  trn->add_option("--mode", mode, "nerf, snerf_no_sc or snerf_sc");
  trn->add_option("--out", out, "Output directory")->required();
  trn->add_option("--resume", resume, "Checkpoint to continue from");
  trn->add_option("--seed", seed_override, "Override the config seed");
  trn->add_option("--iterations", iterations, "Override the iteration count");

  auto* ren = app.add_subcommand("render", "Render a view from a checkpoint");
  ren->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ren->add_option("--scene", scene, "Scene (default: the one recorded in the checkpoint)");
  ren->add_option("--view", view, "Acquisition index or off_nadir,azimuth in degrees");
  ren->add_option("--sun", sun, "Acquisition index or elevation,azimuth in degrees");
  ren->add_flag("--albedo", want_albedo, "Also write the albedo map");
  ren->add_flag("--shadow", want_shadow, "Also write the solar visibility map");
  ren->add_flag("--depth", want_depth, "Also write the expected altitude map");
  ren->add_option("--out", out, "Output directory")->required();

  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint against the oracle");
  evl->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  evl->add_option("--scene", scene, "Scene (default: the one recorded in the checkpoint)");
  evl->add_option("--out", out, "Output directory")->required();

  auto* abl = app.add_subcommand("ablation", "Train and evaluate all three modes over several seeds");
  abl->add_option("--preset", preset, "Scene preset")->required();
  abl->add_option("--seeds", seeds, "Comma-separated seeds");
  abl->add_option("--out", out, "Output directory")->required();
  abl->add_option("--config", config, "Config JSON file or preset name");
  abl->add_option("--cache", cache, "Run cache directory (default: <out>/runs)");
  abl->add_option("--iterations", iterations, "Override the iteration count");

  auto* swp = app.add_subcommand("sweep-sun", "Render along the solar path between two sun positions");
  swp->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  swp->add_option("--scene", scene, "Scene (default: the one recorded in the checkpoint)");
  swp->add_option("--from", from, "Start sun elevation,azimuth (default: scene solar path start)");
  swp->add_option("--to", to, "End sun elevation,azimuth (default: scene solar path end)");
  swp->add_option("--steps", steps, "Number of renders including both endpoints")->check(CLI::Range(2, 1000));
  swp->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_scene(preset, seed, out, threads);
    if (*trn) return cmd_train(scene, config, mode, out, resume, seed_override, iterations, threads);
    if (*ren) return cmd_render(ckpt, scene, view, sun, want_albedo, want_shadow, want_depth, out, threads);
    if (*evl) return cmd_eval(ckpt, scene, out, threads);
    if (*abl) return cmd_ablation(preset, seeds, out, config, cache, iterations, threads);
    if (*swp) return cmd_sweep(ckpt, scene, from, to, steps, out, threads);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
