#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clip2scene/bundle_io.hpp"
#include "clip2scene/checks.hpp"
#include "clip2scene/config.hpp"
#include "clip2scene/error.hpp"
#include "clip2scene/eval.hpp"
#include "clip2scene/model.hpp"
#include "clip2scene/synth.hpp"
#include "clip2scene/trainer.hpp"

namespace clip2scene::cli {

inline constexpr double kGradTolerance = 1e-6;
inline constexpr double kOracleTolerance = 1e-10;
inline constexpr double kConvexityTolerance = 1e-12;

struct RunConfig {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string ckpt;
  std::optional<double> fraction;
  std::vector<std::string> scenes;
  std::vector<std::string> eval_scenes;
  bool quiet = false;
};

namespace fs = std::filesystem;

// A path is either one bundle (has manifest.json) or a directory of bundles.
inline std::vector<SceneBundle> load_scenes(const std::vector<std::string> &paths) {
  std::vector<SceneBundle> scenes;
  for (const auto &p : paths) {
    const fs::path dir(p);
    if (fs::exists(dir / "manifest.json")) {
      scenes.push_back(load_scene(dir));
      continue;
    }
    require_valid(fs::is_directory(dir), "not a scene bundle or directory: " + p);
    std::vector<fs::path> subdirs;
    for (const auto &entry : fs::directory_iterator(dir))
      if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
        subdirs.push_back(entry.path());
    std::sort(subdirs.begin(), subdirs.end());
    require_valid(!subdirs.empty(), "no scene bundles under " + p);
    for (const auto &s : subdirs) scenes.push_back(load_scene(s));
  }
  return scenes;
}

inline std::vector<SceneBundle> holdout_scenes(const Settings &s) {
  SceneConfig cfg = s.scene;
  cfg.seed = s.scene.seed + s.holdout_seed_offset;
  return generate_scenes(cfg, s.holdout_count);
}

inline std::string scene_dir_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03d", i);
  return buf;
}

class Runner {
public:
  Runner(RunConfig rc, std::ostream &out) : rc_(std::move(rc)), out_(out) {
    if (!rc_.config_path.empty()) settings_ = load_settings(rc_.config_path);
    if (rc_.seed) settings_.set_seed(*rc_.seed);
    if (rc_.fraction) settings_.probe.fraction = *rc_.fraction;
  }

  int run() {
    const std::string &c = rc_.command;
    if (c == "gen") return gen();
    if (c == "pretrain") return pretrain_cmd();
    if (c == "eval-zero") return eval_zero();
    if (c == "eval-probe") return eval_probe();
    if (c == "gradcheck") return gradcheck();
    if (c == "losscheck") return losscheck();
    throw ConfigError("unknown command " + c);
  }

private:
  fs::path out_dir() const {
    const fs::path dir(rc_.out_dir);
    fs::create_directories(dir);
    return dir;
  }

  void say(const std::string &line) {
    if (!rc_.quiet) out_ << line << '\n';
  }

  std::vector<SceneBundle> training_scenes() {
    if (!rc_.scenes.empty()) return load_scenes(rc_.scenes);
    return generate_scenes(settings_.scene, settings_.scene_count);
  }

  std::vector<SceneBundle> evaluation_scenes(bool positional_are_eval) {
    if (positional_are_eval && !rc_.scenes.empty()) return load_scenes(rc_.scenes);
    if (!rc_.eval_scenes.empty()) return load_scenes(rc_.eval_scenes);
    return holdout_scenes(settings_);
  }

  EncoderParams encoder_for(const std::vector<SceneBundle> &scenes) {
    if (!rc_.ckpt.empty()) {
      Checkpoint ck = load_checkpoint(rc_.ckpt);
      require_valid(ck.params.dim == scenes.front().text_bank.dim(),
                    "checkpoint feature dimension does not match the scenes");
      return ck.params;
    }
    return init_encoder(settings_.train.hidden, scenes.front().text_bank.dim(),
                        settings_.train.seed);
  }

  int gen() {
    const fs::path dir = out_dir();
    const auto train = generate_scenes(settings_.scene, settings_.scene_count);
    for (std::size_t i = 0; i < train.size(); ++i)
      save_scene(dir / "train" / scene_dir_name(static_cast<int>(i)), train[i]);
    const auto held = holdout_scenes(settings_);
    for (std::size_t i = 0; i < held.size(); ++i)
      save_scene(dir / "holdout" / scene_dir_name(static_cast<int>(i)), held[i]);
    say("wrote " + std::to_string(train.size()) + " training and " +
        std::to_string(held.size()) + " held-out scenes to " + dir.string());
    return 0;
  }

  int pretrain_cmd() {
    const fs::path dir = out_dir();
    const auto scenes = training_scenes();
    const PretrainResult r = pretrain(settings_.train, scenes);
    save_checkpoint((dir / "ckpt.f32").string(), r.params, settings_.train.epochs);
    write_train_log((dir / "train_log.csv").string(), r.log);
    for (const auto &e : r.log.epochs) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %3d  loss %.6f  L_S %.6f  L_T %.6f  self %.3f  lr %.5f",
                    e.epoch, e.loss, e.loss_s, e.loss_t, e.self_frac, e.lr);
      say(buf);
    }
    return 0;
  }

  int eval_zero() {
    const fs::path dir = out_dir();
    const auto scenes = evaluation_scenes(true);
    const EncoderParams params = encoder_for(scenes);
    const LabeledPoints data = first_sweep_points(scenes);
    const auto preds = predict_zero_shot(params, data.points, scenes.front().text_bank);
    const EvalReport rep =
        miou(preds, data.labels, scenes.front().num_classes(), settings_.probe.convention);
    write_eval_report((dir / "eval_report.json").string(), rep, scenes.front().class_names);
    export_error_map((dir / "error_map.txt").string(), preds, data.labels, data.points);
    char buf[96];
    std::snprintf(buf, sizeof buf, "annotation-free mIoU %.6f over %zu points", rep.miou, rep.points);
    say(buf);
    return 0;
  }

  int eval_probe() {
    const fs::path dir = out_dir();
    const auto train = training_scenes();
    const auto held = evaluation_scenes(false);
    const EncoderParams params = encoder_for(train);
    const ProbeResult r = finetune_probe(params, train, held, settings_.probe);
    nlohmann::json j = eval_report_json(r.eval, train.front().class_names);
    j["fraction"] = settings_.probe.fraction;
    j["labeled_points"] = r.selected.size();
    j["train_miou"] = r.train.miou;
    std::ofstream f(dir / "eval_report.json");
    f << j.dump(2) << '\n';
    char buf[128];
    std::snprintf(buf, sizeof buf, "probe fraction %.4f: %zu labels, held-out mIoU %.6f",
                  settings_.probe.fraction, r.selected.size(), r.eval.miou);
    say(buf);
    return 0;
  }

  int gradcheck() {
    const auto lines = checks::run_gradcheck(rc_.seed.value_or(0));
    bool ok = true;
    for (const auto &l : lines) {
      const bool pass = l.max_error <= kGradTolerance;
      ok = ok && pass;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-28s max_rel_error %.3e  configs %d  %s", l.name.c_str(),
                    l.max_error, l.configurations, pass ? "ok" : "FAIL");
      out_ << buf << '\n';
    }
    return ok ? 0 : 1;
  }

  int losscheck() {
    const auto r = checks::run_losscheck(rc_.seed.value_or(0));
    bool ok = true;
    for (const auto &l : r.lines) {
      const bool pass = l.max_error <= kOracleTolerance;
      ok = ok && pass;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-28s max_rel_diff %.3e  instances %d  %s", l.name.c_str(),
                    l.max_error, l.configurations, pass ? "ok" : "FAIL");
      out_ << buf << '\n';
    }
    const bool convex = r.max_weight_sum_deviation <= kConvexityTolerance && r.min_weight > 0;
    ok = ok && convex;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-28s max|sum(a+b)-1| %.3e  min weight %.3e  cells %zu  %s",
                  "fusion_weights", r.max_weight_sum_deviation, r.min_weight, r.cells,
                  convex ? "ok" : "FAIL");
    out_ << buf << '\n';
    return ok ? 0 : 1;
  }

  RunConfig rc_;
  std::ostream &out_;
  Settings settings_;
};

/// Entry point: 0 on success, 1 on configuration/validation errors, 2 on bad
/// usage.
inline int run(int argc, const char *const *argv, std::ostream &out = std::cout,
               std::ostream &err = std::cerr) {
  CLI::App app{"Semantic-driven cross-modal contrastive pre-training on synthetic scenes",
               "clip2scene"};
  app.require_subcommand(1);
  RunConfig rc;
  std::uint64_t seed = 0;
  double fraction = 0.0;

  auto add_common = [&](CLI::App *sub, bool writes_files) {
    sub->add_option("--config", rc.config_path, "key = value configuration file")
        ->check(CLI::ExistingFile);
    auto *o = sub->add_option("--out", rc.out_dir, "output directory");
    if (writes_files) o->required();
    sub->add_option("--seed", seed, "seed override");
    sub->add_flag("--quiet", rc.quiet, "suppress progress output");
  };

  auto *gen = app.add_subcommand("gen", "generate synthetic scene bundles");
  add_common(gen, true);
  auto *pre = app.add_subcommand("pretrain", "pre-train the point encoder");
  add_common(pre, true);
  pre->add_option("scenes", rc.scenes, "scene bundle directories");
  auto *ez = app.add_subcommand("eval-zero", "annotation-free segmentation via the text bank");
  add_common(ez, true);
  ez->add_option("--ckpt", rc.ckpt, "encoder checkpoint")->check(CLI::ExistingFile);
  ez->add_option("scenes", rc.scenes, "evaluation scene bundle directories");
  auto *ep = app.add_subcommand("eval-probe", "label-efficient fine-tuning probe");
  add_common(ep, true);
  ep->add_option("--ckpt", rc.ckpt, "encoder checkpoint")->check(CLI::ExistingFile);
  ep->add_option("--fraction", fraction, "fraction of labeled training points");
  ep->add_option("--eval", rc.eval_scenes, "held-out scene bundle directories");
  ep->add_option("scenes", rc.scenes, "training scene bundle directories");
  auto *gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(gc, false);
  auto *lc = app.add_subcommand("losscheck", "stabilized losses against naive oracles");
  add_common(lc, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  for (auto *sub : app.get_subcommands()) {
    rc.command = sub->get_name();
    if (sub->count("--seed")) rc.seed = seed;
    if (sub->get_option_no_throw("--fraction") && sub->count("--fraction")) rc.fraction = fraction;
  }

  try {
    Runner runner(rc, out);
    return runner.run();
  } catch (const ConfigError &e) {
    err << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError &e) {
    err << "validation error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

} // namespace clip2scene::cli
