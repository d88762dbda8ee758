// SPDX-License-Identifier: Apache-2.0
// Command-line driver: simulate -> train -> render -> eval, plus diag.
// Exit codes: 0 success, 2 validation error, 3 runtime error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "saenerf/saenerf.hpp"

namespace fs = std::filesystem;
using namespace saenerf;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

/// "orbit:COUNT[:RADIUS[:HEIGHT]]", a trajectory JSON array, or a JSON object
/// {"count", "radius", "height", "period"} describing held-out orbit views.
std::vector<Pose> parse_poses(const std::string& spec) {
  if (spec.rfind("orbit:", 0) == 0) {
    std::vector<double> parts;
    std::stringstream ss(spec.substr(6));
    std::string item;
    while (std::getline(ss, item, ':')) {
      try {
        parts.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ValidationError("bad orbit spec '" + spec + "'");
      }
    }
    if (parts.empty() || parts[0] < 1) throw ValidationError("orbit spec needs a view count >= 1");
    OrbitSpec o;
    if (parts.size() > 1) o.radius = parts[1];
    if (parts.size() > 2) o.height = parts[2];
    return held_out_views(o, static_cast<int>(parts[0]));
  }
  const nlohmann::json j = read_json(spec);
  if (j.is_array()) {
    std::vector<Pose> poses;
    for (const Keyframe& k : trajectory_from_json(j).keyframes()) poses.push_back(k.pose);
    return poses;
  }
  OrbitSpec o;
  o.radius = j.value("radius", o.radius);
  o.height = j.value("height", o.height);
  o.period = j.value("period", o.period);
  return held_out_views(o, j.value("count", 8));
}

std::string view_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03zu", i);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-supervised radiance fields on toy scenes"};
  app.require_subcommand(1);

  // simulate
  SimulationSpec sim;
  std::string sim_out, pattern = "RGGB";
  auto* simulate = app.add_subcommand("simulate", "Render a toy scene along an orbit and simulate events");
  simulate->add_option("--scene", sim.scene, "Scene preset or JSON file")->capture_default_str();
  simulate->add_option("--out", sim_out, "Output event file")->required();
  simulate->add_option("--frames", sim.frames, "Frames per orbit period")->capture_default_str();
  simulate->add_option("--period", sim.period, "Orbit period in seconds")->capture_default_str();
  simulate->add_option("--threshold", sim.threshold, "Contrast threshold C")->capture_default_str();
  simulate->add_option("--noise", sim.noise, "Spurious event fraction")->capture_default_str();
  simulate->add_option("--pattern", pattern, "Bayer pattern (RGGB or mono)")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  simulate->add_option("--res", sim.resolution, "Square resolution in pixels")->capture_default_str();
  simulate->add_option("--gt-samples", sim.gt_samples, "Ground-truth samples per ray")->capture_default_str();

  // train
  std::string events_path, config_path, ckpt_out, log_path, resume_path;
  auto* train_cmd = app.add_subcommand("train", "Fit a field to an event stream");
  train_cmd->add_option("--events", events_path, "Event file")->required();
  train_cmd->add_option("--config", config_path, "Training config JSON");
  train_cmd->add_option("--out", ckpt_out, "Output checkpoint")->required();
  train_cmd->add_option("--log", log_path, "Diagnostics log (NDJSON)");
  train_cmd->add_option("--resume", resume_path, "Continue from a checkpoint");

  // render
  std::string render_ckpt, render_scene, poses_spec, render_out;
  int render_res = 64, render_samples = 0;
  auto* render = app.add_subcommand("render", "Render views from a checkpoint or a ground-truth scene");
  render->add_option("--ckpt", render_ckpt, "Checkpoint to render");
  render->add_option("--scene", render_scene, "Render a ground-truth scene instead");
  render->add_option("--poses", poses_spec, "Trajectory JSON, orbit JSON, or orbit:COUNT[:RADIUS[:HEIGHT]]")->required();
  render->add_option("--out", render_out, "Output directory")->required();
  render->add_option("--res", render_res, "Resolution for --scene renders")->capture_default_str();
  render->add_option("--samples", render_samples, "Samples per ray (0 keeps the stored setting)");

  // eval
  std::string eval_rendered, eval_target, eval_report;
  double gamma = 2.2;
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM of rendered views against targets");
  eval->add_option("--rendered", eval_rendered, "Directory of rendered .ppm views")->required();
  eval->add_option("--target", eval_target, "Directory of target .ppm views")->required();
  eval->add_option("--gamma", gamma, "Gamma applied after brightness alignment")->capture_default_str();
  eval->add_option("--report", eval_report, "Report JSON path");

  // diag
  std::string diag_log, diag_out;
  auto* diag = app.add_subcommand("diag", "Convert a training log to CSV curves");
  diag->add_option("--log", diag_log, "Diagnostics log (NDJSON)")->required();
  diag->add_option("--out", diag_out, "CSV output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (simulate->parsed()) {
      sim.pattern = parse_pattern(pattern);
      SimulationResult res = simulate_scene(sim);
      write_events(res.stream, sim_out);
      write_sidecar(res.sidecar, sim_out);
      std::cout << "wrote " << res.stream.events.size() << " events to " << sim_out << '\n';
    } else if (train_cmd->parsed()) {
      const EventStream stream = read_events(events_path);
      const Sidecar side = read_sidecar(events_path);
      std::optional<std::ofstream> log;
      if (!log_path.empty()) {
        log.emplace(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
        if (!*log) throw std::runtime_error("cannot open " + log_path);
      }
      TrainOptions opts;
      opts.log = log ? &*log : nullptr;
      opts.checkpoint_path = ckpt_out;
      Checkpoint start;
      if (!resume_path.empty()) {
        start = load_checkpoint(resume_path);
        if (!config_path.empty()) {
          // A new config may only extend the run.
          const TrainConfig extra = train_config_from_json(read_json(config_path));
          start.config.iterations = extra.iterations;
        }
      } else {
        TrainConfig cfg = config_path.empty() ? TrainConfig{} : train_config_from_json(read_json(config_path));
        const nlohmann::json raw = config_path.empty() ? nlohmann::json::object() : read_json(config_path);
        // Scene bounds and background first, then any explicit render keys.
        cfg.render = scene_render_config(side.scene, TrainConfig{}.render);
        if (raw.contains("render")) cfg.render = render_config_from_json(raw.at("render"), cfg.render);
        start = initial_checkpoint(cfg, side.camera);
      }
      const TrainResult result = train(stream, side.trajectory, std::move(start), opts);
      save_checkpoint(ckpt_out, result.state);
      std::cout << "trained to step " << result.state.step << ", checkpoint " << ckpt_out << '\n';
    } else if (render->parsed()) {
      if (render_ckpt.empty() == render_scene.empty()) throw ValidationError("render: pass exactly one of --ckpt or --scene");
      const std::vector<Pose> poses = parse_poses(poses_spec);
      fs::create_directories(render_out);
      std::optional<Checkpoint> ckpt;
      std::optional<ToyScene> scene;
      CameraIntrinsics camera{};
      RenderConfig cfg;
      if (!render_ckpt.empty()) {
        ckpt = load_checkpoint(render_ckpt);
        camera = ckpt->camera;
        cfg = ckpt->config.render;
      } else {
        scene = load_scene(render_scene);
        if (render_res < 2) throw ValidationError("render: resolution must be >= 2");
        SimulationSpec geometry;
        geometry.resolution = render_res;
        camera = geometry.camera();
        cfg = ground_truth_config(*scene, geometry.gt_samples);
      }
      cfg.stratified = false;
      if (render_samples > 0) cfg.samples = render_samples;
      for (std::size_t i = 0; i < poses.size(); ++i) {
        const Image img = ckpt ? render_image(ckpt->params, camera, poses[i], cfg)
                               : render_ground_truth(*scene, camera, poses[i], cfg);
        const fs::path base = fs::path(render_out) / view_name(i);
        write_ppm16(img, base.string() + ".ppm");
        write_png(img, base.string() + ".png");
      }
      std::cout << "rendered " << poses.size() << " views to " << render_out << '\n';
    } else if (eval->parsed()) {
      std::vector<std::string> names;
      for (const auto& entry : fs::directory_iterator(eval_rendered)) {
        if (entry.path().extension() == ".ppm" && fs::exists(fs::path(eval_target) / entry.path().filename())) {
          names.push_back(entry.path().filename().string());
        }
      }
      std::sort(names.begin(), names.end());
      if (names.empty()) throw ValidationError("eval: no matching .ppm views in both directories");
      MetricReport report;
      for (const std::string& n : names) {
        const Image a = read_ppm((fs::path(eval_rendered) / n).string());
        const Image b = read_ppm((fs::path(eval_target) / n).string());
        report.add(n, evaluate_pair(a, b, gamma));
      }
      const std::string text = to_json(report).dump(2);
      if (!eval_report.empty()) {
        std::ofstream out(eval_report);
        if (!out) throw std::runtime_error("cannot open " + eval_report);
        out << text << '\n';
      }
      std::cout << "mean PSNR " << report.mean_psnr << " dB, mean SSIM " << report.mean_ssim << '\n';
    } else if (diag->parsed()) {
      std::ifstream in(diag_log);
      if (!in) throw std::runtime_error("cannot open " + diag_log);
      std::ofstream out(diag_out);
      if (!out) throw std::runtime_error("cannot open " + diag_out);
      out << "step,loss_total,loss_norm,loss_zero_plus,loss_zero_minus,taopet_mean,poap,poap_pos,n_pos,n_neg,"
             "n_consistent,windows_used,fallbacks\n";
      auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };
      std::string line;
      std::size_t rows = 0;
      for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        StepRecord r;
        try {
          r = step_record_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
          throw ValidationError(diag_log + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out << r.step << ',' << opt(r.loss_total) << ',' << opt(r.loss_norm) << ',' << opt(r.loss_zero_plus) << ','
            << r.loss_zero_minus << ',' << opt(r.taopet_mean) << ',' << r.poap << ',' << r.poap_pos << ',' << r.n_pos
            << ',' << r.n_neg << ',' << r.n_consistent << ',' << r.windows_used << ',' << r.fallbacks << '\n';
        ++rows;
      }
      std::cout << "wrote " << rows << " rows to " << diag_out << '\n';
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
