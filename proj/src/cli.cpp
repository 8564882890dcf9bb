#include "uamd/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "uamd/checkpoint.hpp"
#include "uamd/data.hpp"
#include "uamd/eval.hpp"
#include "uamd/png_io.hpp"
#include "uamd/sgm.hpp"
#include "uamd/training.hpp"

namespace fs = std::filesystem;

namespace uamd {

size_t worker_count() {
  const char* env = std::getenv("UAMD_THREADS");
  size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (!env) return 1;
  long v = std::strtol(env, nullptr, 10);
  if (v < 1) return 1;
  return std::min<size_t>(static_cast<size_t>(v), hw);
}

namespace {

struct RunConfig {
  NetworkConfig model;
  TrainConfig train;
  SgmConfig sgm;
};

std::array<size_t, 3> parse_channels(const std::string& v) {
  std::array<size_t, 3> out{};
  std::stringstream ss(v);
  std::string tok;
  size_t i = 0;
  while (std::getline(ss, tok, ',')) {
    if (i >= 3) throw std::invalid_argument("branch_channels needs exactly 3 entries");
    out[i++] = static_cast<size_t>(std::stoul(tok));
  }
  if (i != 3) throw std::invalid_argument("branch_channels needs exactly 3 entries");
  return out;
}

/// INI-style config: [model]/[train]/[loss]/[sgm] sections, key = value lines,
/// '#' comments. Unknown sections or keys are rejected.
void load_run_config(const std::string& path, RunConfig& cfg) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::string line, section;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                                          ": malformed section header");
      section = line.substr(1, line.size() - 2);
      if (section != "model" && section != "train" && section != "loss" && section != "sgm")
        throw std::invalid_argument(path + ": unknown section [" + section + "]");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto bad_key = [&]() {
      throw std::invalid_argument(path + ": unknown key '" + key + "' in section [" + section +
                                  "]");
    };
    if (section == "model") {
      if (key == "max_disparity") cfg.model.max_disparity = std::stoul(value);
      else if (key == "feature_scale") cfg.model.feature_scale = std::stoul(value);
      else if (key == "branch_channels") cfg.model.branch_channels = parse_channels(value);
      else if (key == "aggregated_channels") cfg.model.aggregated_channels = std::stoul(value);
      else if (key == "min_disparity_eps") cfg.model.min_disparity_eps = std::stof(value);
      else bad_key();
    } else if (section == "train") {
      if (key == "lr0") cfg.train.lr0 = std::stod(value);
      else if (key == "batch_size") cfg.train.batch_size = std::stoul(value);
      else if (key == "seed") cfg.train.seed = std::stoull(value);
      else if (key == "epochs") cfg.train.max_epochs = std::stoul(value);
      else if (key == "steps") cfg.train.max_steps = std::stoul(value);
      else bad_key();
    } else if (section == "loss") {
      if (key == "w_l") cfg.train.weights.w_l = std::stod(value);
      else if (key == "w_p") cfg.train.weights.w_p = std::stod(value);
      else if (key == "w_g") cfg.train.weights.w_g = std::stod(value);
      else if (key == "w_n") cfg.train.weights.w_n = std::stod(value);
      else if (key == "alpha") cfg.train.photometric.alpha = std::stod(value);
      else bad_key();
    } else if (section == "sgm") {
      if (key == "max_disp") cfg.sgm.max_disp = std::stoul(value);
      else if (key == "p1") cfg.sgm.p1 = std::stof(value);
      else if (key == "p2") cfg.sgm.p2 = std::stof(value);
      else if (key == "num_paths") cfg.sgm.num_paths = std::stoi(value);
      else if (key == "lr_check_tol") cfg.sgm.lr_check_tol = std::stof(value);
      else if (key == "cost_kind") {
        if (value == "census") cfg.sgm.cost_kind = SgmCostKind::Census5x5;
        else if (value == "sad") cfg.sgm.cost_kind = SgmCostKind::Sad3x3;
        else throw std::invalid_argument(path + ": cost_kind must be census or sad");
      } else bad_key();
    } else {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": key outside any section");
    }
  }
}

ModalCombo combo_from_name(const std::string& name) {
  if (name == "dual_lidar") return ModalCombo::DualLidar;
  if (name == "mono_lidar") return ModalCombo::MonoLidar;
  if (name == "dual") return ModalCombo::Dual;
  throw std::invalid_argument("unknown combo '" + name + "'");
}

int cmd_gen_data(const std::string& out, size_t count, size_t height, size_t width,
                 size_t max_disp, uint64_t seed, size_t planes) {
  if (height % 4 != 0 || width % 4 != 0)
    throw std::invalid_argument("gen-data: height and width must be divisible by 4 "
                                "(the default feature_scale)");
  fs::create_directories(out);
  for (size_t i = 0; i < count; ++i) {
    char id[8];
    std::snprintf(id, sizeof(id), "%03zu", i);
    SynthScene scene = synth_scene(height, width, planes, max_disp, seed + i);
    scene.sample.id = id;
    save_sample(scene.sample, out);
    save_disparity_sidecar(scene.true_disparity, height, width,
                           (fs::path(out) / (scene.sample.id + "_disp.png")).string());
  }
  return 0;
}

int cmd_gen_noise(const std::string& data, const std::string& out, const SgmConfig& sgm_cfg,
                  const std::string& view) {
  auto dataset = load_dataset(data, "");
  SgmView v = view == "right" ? SgmView::Right : SgmView::Left;
  size_t written = generate_noise_labels(dataset, sgm_cfg, out, v, worker_count());
  std::cout << "wrote " << written << " noise label files to " << out << "\n";
  return 0;
}

int cmd_train(const RunConfig& run, const std::string& mode, const std::string& combo,
              const std::string& data, const std::string& out, const std::string& trace_path) {
  TrainConfig cfg = run.train;
  cfg.mode = mode == "semi" ? TrainMode::Semi : TrainMode::Supervised;
  if (combo == "modal_dropout") {
    cfg.modal_dropout = true;
  } else {
    cfg.modal_dropout = false;
    cfg.fixed_combo = combo_from_name(combo);
    if (cfg.mode == TrainMode::Semi && cfg.fixed_combo == ModalCombo::MonoLidar)
      throw std::invalid_argument(
          "train: semi-supervised mode draws from the two-combo universe {dual_lidar, dual}; "
          "mono_lidar is not available");
  }
  auto dataset = load_dataset(data, "");
  auto result = fit<float>(dataset, run.model, cfg);
  save_checkpoint(out, run.model, result.params);
  std::ofstream tf(trace_path, std::ios::trunc);
  if (!tf) throw std::runtime_error("cannot write trace file " + trace_path);
  write_trace_csv(result.trace, tf);
  std::cout << "trained " << result.trace.size() << " steps; checkpoint " << out << ", trace "
            << trace_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& combo,
             const std::string& failure, double angle_deg, const std::string& report_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto dataset = load_dataset(data, "");
  std::optional<ModalCombo> mc;
  if (!combo.empty()) mc = combo_from_name(combo);
  std::optional<FailureKind> fk;
  if (!failure.empty()) {
    auto ft = failure_from_name(failure);
    if (!ft) throw std::invalid_argument("unknown failure '" + failure + "'");
    fk = FailureKind{*ft, angle_deg};
  }
  MetricsReport m = evaluate(ckpt.params, ckpt.config, dataset, mc, fk);
  ReportRow row;
  row.combo = mc ? combo_name(*mc) : combo_name(fallback_combo(*fk));
  row.failure = failure;
  row.metrics = m;
  if (report_path.empty()) {
    write_report_csv({row}, std::cout);
  } else {
    std::ofstream rf(report_path, std::ios::trunc);
    if (!rf) throw std::runtime_error("cannot write report file " + report_path);
    write_report_csv({row}, rf);
  }
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& left_path,
              const std::string& right_path, const std::string& lidar_path,
              const std::string& combo, float focal_px, float baseline_m,
              const std::string& out_path) {
  ModalCombo mc = combo_from_name(combo);
  if (mc != ModalCombo::Dual && lidar_path.empty())
    throw std::invalid_argument("infer: combo " + combo + " consumes LiDAR; pass --lidar");
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  StereoSample s;
  s.id = "infer";
  s.left = decode_rgb_png(read_file(left_path));
  s.right = right_path.empty() ? s.left : decode_rgb_png(read_file(right_path));
  s.sparse_left = lidar_path.empty() ? DepthMap::zeros(s.left.height, s.left.width)
                                     : decode_depth_png(read_file(lidar_path));
  s.sparse_right = DepthMap::zeros(s.left.height, s.left.width);
  s.gt = DepthMap::zeros(s.left.height, s.left.width);
  s.calib = Calibration{focal_px, baseline_m};
  auto reg = forward(s, mc, ckpt.params, ckpt.config, Side::Left);
  DepthMap pred{s.left.height, s.left.width,
                std::vector<float>(reg.depth.values().begin(), reg.depth.values().end())};
  for (float v : pred.meters)
    if (!std::isfinite(v)) throw DivergenceError("infer: non-finite depth output");
  write_file(out_path, encode_depth_png(pred));
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int cli_run(int argc, const char* const* argv) {
  CLI::App app{"UAMD-Net multimodal depth completion"};
  app.require_subcommand(1);

  std::string config_path;

  // gen-data
  auto* gd = app.add_subcommand("gen-data", "generate a synthetic stereo dataset");
  std::string gd_out;
  size_t gd_count = 5, gd_height = 64, gd_width = 128, gd_max_disp = 16, gd_planes = 3;
  uint64_t gd_seed = 0;
  gd->add_option("--out", gd_out, "output directory")->required();
  gd->add_option("--count", gd_count, "number of samples");
  gd->add_option("--height", gd_height, "image height");
  gd->add_option("--width", gd_width, "image width");
  gd->add_option("--max-disp", gd_max_disp, "largest plane disparity");
  gd->add_option("--seed", gd_seed, "base RNG seed");
  gd->add_option("--planes", gd_planes, "fronto-parallel plane count");

  // gen-noise
  auto* gn = app.add_subcommand("gen-noise", "generate SGM noise depth labels");
  std::string gn_data, gn_out, gn_view = "left";
  size_t gn_max_disp = 0;
  double gn_p1 = -1, gn_p2 = -1;
  int gn_paths = 0;
  gn->add_option("--config", config_path, "run configuration file");
  gn->add_option("--data", gn_data, "dataset directory")->required();
  gn->add_option("--out", gn_out, "output directory")->required();
  gn->add_option("--view", gn_view, "label view: left or right");
  gn->add_option("--max-disp", gn_max_disp, "SGM disparity range");
  gn->add_option("--p1", gn_p1, "small-jump penalty");
  gn->add_option("--p2", gn_p2, "large-jump penalty");
  gn->add_option("--paths", gn_paths, "aggregation path count (4 or 8)");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_mode = "supervised", tr_combo = "dual_lidar", tr_data, tr_out, tr_trace;
  size_t tr_steps = 0, tr_epochs = 0, tr_batch = 0;
  uint64_t tr_seed = 0;
  double tr_lr0 = -1;
  tr->add_option("--config", config_path, "run configuration file");
  tr->add_option("--mode", tr_mode, "supervised or semi")
      ->check(CLI::IsMember({"supervised", "semi"}));
  tr->add_option("--combo", tr_combo, "dual_lidar, mono_lidar, dual or modal_dropout")
      ->check(CLI::IsMember({"dual_lidar", "mono_lidar", "dual", "modal_dropout"}));
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--trace", tr_trace, "loss trace CSV path");
  auto* tr_steps_opt = tr->add_option("--steps", tr_steps, "step budget");
  auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "epoch budget");
  auto* tr_batch_opt = tr->add_option("--batch", tr_batch, "batch size");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "RNG seed");
  auto* tr_lr0_opt = tr->add_option("--lr0", tr_lr0, "initial learning rate");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_combo, ev_failure, ev_report;
  double ev_angle = 5.0;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--combo", ev_combo, "modal input combo")
      ->check(CLI::IsMember({"dual_lidar", "mono_lidar", "dual"}));
  ev->add_option("--failure", ev_failure, "failure simulation")
      ->check(CLI::IsMember({"half_h", "half_v", "full", "rotation", "lidar"}));
  ev->add_option("--angle", ev_angle, "rotation failure angle (degrees)");
  ev->add_option("--report", ev_report, "report CSV path (stdout when omitted)");

  // infer
  auto* in = app.add_subcommand("infer", "run one forward pass");
  std::string in_ckpt, in_left, in_right, in_lidar, in_combo = "dual_lidar", in_out;
  float in_focal = 100.f, in_baseline = 0.5f;
  in->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
  in->add_option("--left", in_left, "left image PNG")->required();
  in->add_option("--right", in_right, "right image PNG");
  in->add_option("--lidar", in_lidar, "sparse depth PNG");
  in->add_option("--combo", in_combo, "modal input combo")
      ->check(CLI::IsMember({"dual_lidar", "mono_lidar", "dual"}));
  in->add_option("--focal-px", in_focal, "focal length in pixels");
  in->add_option("--baseline-m", in_baseline, "stereo baseline in meters");
  in->add_option("--out", in_out, "output 16-bit depth PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig run;
    if (!config_path.empty()) load_run_config(config_path, run);

    if (gd->parsed())
      return cmd_gen_data(gd_out, gd_count, gd_height, gd_width, gd_max_disp, gd_seed, gd_planes);
    if (gn->parsed()) {
      if (gn_max_disp > 0) run.sgm.max_disp = gn_max_disp;
      if (gn_p1 >= 0) run.sgm.p1 = static_cast<float>(gn_p1);
      if (gn_p2 >= 0) run.sgm.p2 = static_cast<float>(gn_p2);
      if (gn_paths > 0) run.sgm.num_paths = gn_paths;
      return cmd_gen_noise(gn_data, gn_out, run.sgm, gn_view);
    }
    if (tr->parsed()) {
      if (tr_steps_opt->count()) run.train.max_steps = tr_steps;
      if (tr_epochs_opt->count()) run.train.max_epochs = tr_epochs;
      if (tr_batch_opt->count()) run.train.batch_size = tr_batch;
      if (tr_seed_opt->count()) run.train.seed = tr_seed;
      if (tr_lr0_opt->count()) run.train.lr0 = tr_lr0;
      if (run.train.max_steps == 0 && run.train.max_epochs == 0) run.train.max_epochs = 1;
      if (tr_trace.empty()) tr_trace = tr_out + ".trace.csv";
      return cmd_train(run, tr_mode, tr_combo, tr_data, tr_out, tr_trace);
    }
    if (ev->parsed()) {
      if (ev_combo.empty() && ev_failure.empty())
        throw std::invalid_argument("eval: pass --combo and/or --failure");
      return cmd_eval(ev_ckpt, ev_data, ev_combo, ev_failure, ev_angle, ev_report);
    }
    if (in->parsed()) {
      if (in_combo != "mono_lidar" && in_right.empty())
        throw std::invalid_argument("infer: combo " + in_combo + " needs --right");
      return cmd_infer(in_ckpt, in_left, in_right, in_lidar, in_combo, in_focal, in_baseline,
                       in_out);
    }
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

int cli_run(const std::vector<std::string>& args) {
  std::vector<std::string> all;
  all.push_back("uamd");
  all.insert(all.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : all) argv.push_back(a.c_str());
  return cli_run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace uamd
