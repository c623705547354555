// advo: preprocess KITTI, train, infer, evaluate and plot.
//
// Exit codes: 0 success, 1 user error, 2 internal error. Failures print one
// JSON object {"error": <kind>, "message": <text>} on stderr.

#include "advo/dataset.hpp"
#include "advo/error.hpp"
#include "advo/evaluation.hpp"
#include "advo/log.hpp"
#include "advo/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

int fail(std::string_view kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

std::vector<std::string> split_sequences(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& item : raw) {
    std::stringstream ss(item);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) out.push_back(tok);
    }
  }
  return out;
}

// name=path, or a bare path named after its stem.
std::pair<std::string, fs::path> named_path(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) return {fs::path(arg).stem().string(), fs::path(arg)};
  return {arg.substr(0, eq), fs::path(arg.substr(eq + 1))};
}

// --- plot rendering -------------------------------------------------------

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

void write_paths_svg(const advo::PlotData& data, const fs::path& path) {
  double min_x = 1e300, max_x = -1e300, min_z = 1e300, max_z = -1e300;
  for (const auto& t : data.paths) {
    for (const auto& p : t.xz) {
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_z = std::min(min_z, p.y());
      max_z = std::max(max_z, p.y());
    }
  }
  const double span = std::max({max_x - min_x, max_z - min_z, 1e-9});
  const double size = 560.0, margin = 20.0;
  const auto sx = [&](double x) { return margin + (x - min_x) / span * size; };
  const auto sz = [&](double z) { return margin + size - (z - min_z) / span * size; };

  std::ofstream out(path);
  if (!out) throw advo::Error(advo::ErrorKind::Io, "cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"640\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < data.paths.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : data.paths[i].xz) out << sx(p.x()) << ',' << sz(p.y()) << ' ';
    out << "\"/>\n<text x=\"" << margin << "\" y=\"" << 600 + 14 * i << "\" fill=\"" << color
        << "\" font-size=\"12\">" << data.paths[i].name << "</text>\n";
  }
  out << "</svg>\n";
}

void write_timings_svg(const advo::PlotData& data, const fs::path& path) {
  double hi = 0.0;
  for (const auto& [_, s] : data.timings) hi = std::max(hi, s.max);
  hi = std::max(hi, 1e-9);
  const double height = 300.0, top = 20.0, slot = 100.0;
  const auto y = [&](double v) { return top + height - v / hi * height; };
  std::ofstream out(path);
  if (!out) throw advo::Error(advo::ErrorKind::Io, "cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 40 + slot * data.timings.size()
      << "\" height=\"360\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < data.timings.size(); ++i) {
    const auto& [name, s] = data.timings[i];
    const double cx = 40 + slot * i + slot / 2;
    out << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << y(s.min) << "\" y2=\""
        << y(s.max) << "\" stroke=\"black\"/>\n"
        << "<rect x=\"" << cx - 25 << "\" y=\"" << y(s.q3) << "\" width=\"50\" height=\""
        << y(s.q1) - y(s.q3) << "\" fill=\"" << kPalette[i % std::size(kPalette)]
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << cx - 25 << "\" x2=\"" << cx + 25 << "\" y1=\"" << y(s.median)
        << "\" y2=\"" << y(s.median) << "\" stroke=\"black\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << cx - 25 << "\" y=\"345\" font-size=\"12\">" << name << "</text>\n";
  }
  out << "</svg>\n";
}

// --- subcommands ----------------------------------------------------------

struct PreprocessArgs {
  std::string kitti_root, out, correspondences;
  std::vector<std::string> sequences;
  bool mirror = false;
  int stride = 1;
  std::size_t max_points = 200;
};

int run_preprocess(const PreprocessArgs& a) {
  advo::PreprocessOptions opt;
  opt.kitti_root = a.kitti_root;
  opt.out = a.out;
  opt.sequences = split_sequences(a.sequences);
  opt.mirror = a.mirror;
  opt.stride = a.stride;
  opt.max_points = a.max_points;
  if (!a.correspondences.empty()) opt.correspondences = fs::path(a.correspondences);
  if (opt.sequences.empty()) throw advo::Error(advo::ErrorKind::Usage, "--sequences is empty");
  const auto summary = advo::preprocess_kitti(opt);
  std::cout << json{{"frames", summary.frames}, {"pairs", summary.pairs},
                    {"point_sets", summary.point_sets}}
                   .dump()
            << std::endl;
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  json overrides = json::object();
};

int run_train(const TrainArgs& a) {
  // defaults < config file < flags
  json merged = json::object();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw advo::Error(advo::ErrorKind::Io, "cannot open config " + a.config);
    try {
      merged = json::parse(in);
    } catch (const json::exception& e) {
      throw advo::Error(advo::ErrorKind::Config, a.config + ": " + e.what());
    }
    if (!merged.is_object()) throw advo::Error(advo::ErrorKind::Config, "config must be an object");
  }
  merged.update(a.overrides);
  advo::TrainConfig cfg = advo::TrainConfig::from_json(merged);
  if (cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = fs::path(a.out) / "checkpoints";
  std::cout << cfg.to_json().dump() << std::endl;

  advo::Dataset ds = advo::load_dataset(a.data);
  if (!cfg.test_sequence.empty()) {
    const std::size_t before = ds.size();
    ds = ds.without_sequence(cfg.test_sequence);
    advo::log::info("held out sequence ", cfg.test_sequence, ": ", before - ds.size(),
                    " pair(s) excluded");
  }
  fs::create_directories(a.out);
  {
    std::ofstream cf(fs::path(a.out) / "config.json");
    cf << cfg.to_json().dump(2) << '\n';
  }
  const std::int64_t every = std::max<std::int64_t>(1, cfg.planned_iterations() / 20);
  auto result = advo::train(cfg, ds, std::nullopt, [&](const advo::TrainLogRow& r) {
    if ((r.iteration + 1) % every == 0) {
      advo::log::info("iter ", r.iteration + 1, "/", cfg.planned_iterations(), " [", r.phase,
                      "] L_beta=", r.loss_beta, " critic=", r.critic);
    }
  });
  advo::write_training_log(result.log, fs::path(a.out) / "train_log.csv");
  advo::save_checkpoint(fs::path(a.out) / "checkpoint.pt", result.model,
                        {{"iteration", static_cast<std::int64_t>(result.log.size())},
                         {"config", cfg.to_json()}});
  return 0;
}

struct InferArgs {
  std::string checkpoint, data, out, sequence;
  bool include_mirrored = false;
};

int run_infer(const InferArgs& a) {
  auto loaded = advo::load_checkpoint(a.checkpoint);
  const advo::Dataset ds = advo::load_dataset(a.data);
  std::vector<std::string> sequences = ds.sequences();
  if (!a.sequence.empty()) sequences = {a.sequence};
  fs::create_directories(a.out);
  std::ofstream preds(fs::path(a.out) / "predictions.jsonl");

  std::vector<double> all_ms;
  for (const std::string& seq : sequences) {
    for (bool mirrored : {false, true}) {
      if (mirrored && !a.include_mirrored) continue;
      std::vector<advo::TrainingSample> samples;
      for (const auto& s : ds.samples) {
        if (s.first->sequence == seq && s.first->mirrored == mirrored &&
            s.second->index == s.first->index + 1) {
          samples.push_back(s);
        }
      }
      if (samples.empty()) continue;
      std::sort(samples.begin(), samples.end(),
                [](const auto& l, const auto& r) { return l.first->index < r.first->index; });
      std::vector<advo::FramePair> pairs;
      std::vector<advo::MotionLabel> gt_labels;
      for (const auto& s : samples) {
        pairs.push_back({s.first, s.second});
        gt_labels.push_back(s.label);
      }
      const auto result = advo::infer(loaded.model, pairs);
      std::vector<advo::MotionLabel> est_labels;
      for (std::size_t i = 0; i < result.predictions.size(); ++i) {
        const auto& p = result.predictions[i];
        est_labels.push_back(p.label());
        preds << json{{"seq", seq},
                      {"mirrored", mirrored},
                      {"frame", samples[i].first->index},
                      {"x_hat", {p.x_hat[0], p.x_hat[1], p.x_hat[2]}},
                      {"q_hat", {p.q_hat[0], p.q_hat[1], p.q_hat[2], p.q_hat[3]}},
                      {"ms", result.milliseconds[i]}}
                     .dump()
              << '\n';
      }
      const std::string stem = seq + (mirrored ? "_m" : "");
      advo::export_trajectory({advo::compose_trajectory(est_labels), std::nullopt},
                              fs::path(a.out) / (stem + ".txt"));
      advo::export_trajectory({advo::compose_trajectory(gt_labels), std::nullopt},
                              fs::path(a.out) / (stem + "_gt.txt"));
      advo::write_timings_csv(result.milliseconds, fs::path(a.out) / (stem + "_timings.csv"));
      all_ms.insert(all_ms.end(), result.milliseconds.begin(), result.milliseconds.end());
    }
  }
  if (all_ms.empty()) throw advo::Error(advo::ErrorKind::EmptyDataset, "no pairs to infer");
  const auto s = advo::five_number_summary(all_ms);
  std::cout << json{{"pairs", all_ms.size()}, {"median_ms", s.median}}.dump() << std::endl;
  return 0;
}

struct EvalArgs {
  std::string est, gt, align = "none";
  std::size_t stride = 1;
  bool json_out = false;
};

int run_eval(const EvalArgs& a) {
  advo::Trajectory est = advo::import_trajectory(a.est);
  const advo::Trajectory gt = advo::import_trajectory(a.gt);
  if (a.align != "none") {
    est = advo::umeyama_align(est, gt, a.align == "sim3").aligned;
  }
  const auto report = advo::kitti_metric(est, gt, {a.stride});
  if (a.json_out) {
    json rows = json::array();
    for (const auto& r : report.per_length) {
      rows.push_back({{"length", r.length}, {"subsequences", r.subsequences},
                      {"t_rel", r.t_rel}, {"r_rel", r.r_rel}});
    }
    std::cout << json{{"t_rel", report.t_rel}, {"r_rel", report.r_rel},
                      {"subsequences", report.subsequences}, {"per_length", rows}}
                     .dump()
              << std::endl;
    return 0;
  }
  if (report.empty()) {
    std::cout << "n/a n/a" << std::endl;
    advo::log::warn("ground truth is shorter than 100 m; no subsequence to evaluate");
    return 0;
  }
  std::printf("%.2f %.2f\n", report.t_rel, report.r_rel);
  return 0;
}

struct PlotArgs {
  std::vector<std::string> trajectories, timings;
  std::string out;
};

int run_plot(const PlotArgs& a) {
  std::vector<advo::NamedTrajectory> trajs;
  for (const auto& arg : a.trajectories) {
    auto [name, path] = named_path(arg);
    trajs.push_back({name, advo::import_trajectory(path)});
  }
  std::vector<advo::NamedTimings> times;
  for (const auto& arg : a.timings) {
    auto [name, path] = named_path(arg);
    times.push_back({name, advo::read_timings_csv(path)});
  }
  const auto data = advo::plot_data(trajs, times);
  fs::create_directories(a.out);
  if (!data.paths.empty()) {
    advo::write_paths_csv(data, fs::path(a.out) / "paths.csv");
    write_paths_svg(data, fs::path(a.out) / "paths.svg");
  }
  if (!data.timings.empty()) {
    advo::write_timing_summary_csv(data, fs::path(a.out) / "timings_summary.csv");
    write_timings_svg(data, fs::path(a.out) / "timings.svg");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially pre-trained monocular visual odometry"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

  PreprocessArgs pre;
  auto* cmd_pre = app.add_subcommand("preprocess", "Crop, resize and pair KITTI sequences");
  cmd_pre->add_option("--kitti-root", pre.kitti_root, "KITTI odometry root")->required();
  cmd_pre->add_option("--out", pre.out, "Output dataset directory")->required();
  cmd_pre->add_option("--sequences", pre.sequences, "Sequence ids, e.g. 00,01")->required();
  cmd_pre->add_flag("--mirror", pre.mirror, "Also write mirrored twins");
  cmd_pre->add_option("--stride", pre.stride, "Frame distance within a pair")->check(CLI::PositiveNumber);
  cmd_pre->add_option("--correspondences", pre.correspondences,
                      "Directory of <seq>.jsonl stereo matches for point sets");
  cmd_pre->add_option("--max-points", pre.max_points, "Points kept per frame");

  TrainArgs tr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> regime, test_sequence, loss;
  std::optional<std::int64_t> batch_size, adv_iters, pose_iters, total_iters, base_channels,
      critic_steps;
  std::optional<double> lr, beta;
  auto* cmd_train = app.add_subcommand("train", "Train one of the three regimes");
  cmd_train->add_option("--config", tr.config, "JSON training config");
  cmd_train->add_option("--data", tr.data, "Preprocessed dataset directory")->required();
  cmd_train->add_option("--out", tr.out, "Output directory")->required();
  cmd_train->add_option("--seed", seed, "Seed for every random draw");
  cmd_train->add_option("--regime", regime, "semi_supervised | only_vo | simultaneous");
  cmd_train->add_option("--test-sequence", test_sequence, "Held-out sequence");
  cmd_train->add_option("--loss", loss, "beta | reprojection");
  cmd_train->add_option("--batch-size", batch_size);
  cmd_train->add_option("--adversarial-iters", adv_iters);
  cmd_train->add_option("--pose-iters", pose_iters);
  cmd_train->add_option("--total-iters", total_iters);
  cmd_train->add_option("--base-channels", base_channels);
  cmd_train->add_option("--critic-steps", critic_steps);
  cmd_train->add_option("--learning-rate", lr);
  cmd_train->add_option("--beta", beta);

  InferArgs inf;
  auto* cmd_infer = app.add_subcommand("infer", "Predict motion for every pair of a dataset");
  cmd_infer->add_option("--checkpoint", inf.checkpoint)->required();
  cmd_infer->add_option("--data", inf.data)->required();
  cmd_infer->add_option("--out", inf.out)->required();
  cmd_infer->add_option("--sequence", inf.sequence, "Only this sequence");
  cmd_infer->add_flag("--include-mirrored", inf.include_mirrored);

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "KITTI translational/rotational error");
  cmd_eval->add_option("--est", ev.est, "Estimated trajectory (KITTI format)")->required();
  cmd_eval->add_option("--gt", ev.gt, "Ground-truth trajectory (KITTI format)")->required();
  cmd_eval->add_option("--align", ev.align, "none | se3 | sim3")
      ->check(CLI::IsMember({"none", "se3", "sim3"}));
  cmd_eval->add_option("--stride", ev.stride, "Frames between subsequence starts")
      ->check(CLI::PositiveNumber);
  cmd_eval->add_flag("--json", ev.json_out, "Print the per-length breakdown as JSON");

  PlotArgs pl;
  auto* cmd_plot = app.add_subcommand("plot", "Trajectory and timing plot tables");
  cmd_plot->add_option("--traj", pl.trajectories, "[name=]trajectory.txt");
  cmd_plot->add_option("--timings", pl.timings, "[name=]timings.csv");
  cmd_plot->add_option("--out", pl.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 1);
  }
  if (quiet) advo::log::set_level(advo::log::Level::Warn);

  try {
    if (*cmd_pre) return run_preprocess(pre);
    if (*cmd_train) {
      if (seed) tr.overrides["seed"] = *seed;
      if (regime) tr.overrides["regime"] = *regime;
      if (test_sequence) tr.overrides["test_sequence"] = *test_sequence;
      if (loss) tr.overrides["loss"] = *loss;
      if (batch_size) tr.overrides["batch_size"] = *batch_size;
      if (adv_iters) tr.overrides["adversarial_iters"] = *adv_iters;
      if (pose_iters) tr.overrides["pose_iters"] = *pose_iters;
      if (total_iters) tr.overrides["total_iters"] = *total_iters;
      if (base_channels) tr.overrides["base_channels"] = *base_channels;
      if (critic_steps) tr.overrides["critic_steps"] = *critic_steps;
      if (lr) tr.overrides["learning_rate"] = *lr;
      if (beta) tr.overrides["beta"] = *beta;
      return run_train(tr);
    }
    if (*cmd_infer) return run_infer(inf);
    if (*cmd_eval) return run_eval(ev);
    if (*cmd_plot) return run_plot(pl);
  } catch (const advo::Error& e) {
    return fail(advo::to_string(e.kind()), e.what(), advo::is_user_error(e.kind()) ? 1 : 2);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 2);
  }
  return fail("usage", "no subcommand", 1);
}
