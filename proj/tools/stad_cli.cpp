#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "stad/config.hpp"
#include "stad/io.hpp"
#include "stad/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

stad::Config load_config(const std::string& path) {
  return stad::Config::parse(stad::read_file(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal action detection on synthetic sparse-annotated video"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, stage = "burn-in", strategy, split = "val";
  std::string checkpoint, which_model = "auto", detections;
  std::uint64_t seed = 1;
  bool render = false;
  int max_clips = -1;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen->add_option("--config", config_path, "Config file")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Generator seed");

  auto* train = app.add_subcommand("train", "Train a detector stage");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--data", data_dir, "Dataset directory (from gen-data)")->required();
  train->add_option("--stage", stage, "burn-in or ssad")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--seed", seed, "Training seed");
  train->add_option("--checkpoint", checkpoint, "Checkpoint to resume from");
  train->add_option("--strategy", strategy,
                    "Pseudo-label strategy override (tla|hard|per-class|interp|none|ema)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (frame-mAP at IoU 0.5)");
  eval->add_option("--config", config_path, "Config file")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file");
  eval->add_option("--detections", detections, "Score a detections file instead of a checkpoint");
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--split", split, "train or val");
  eval->add_option("--model", which_model, "auto, student or teacher");
  eval->add_option("--out", out_dir, "Write the result as JSON here");

  auto* pseudo = app.add_subcommand("pseudo-label", "Dump pseudo labels for unlabeled clips");
  pseudo->add_option("--config", config_path, "Config file")->required();
  pseudo->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  pseudo->add_option("--data", data_dir, "Dataset directory")->required();
  pseudo->add_option("--strategy", strategy, "tla|hard|per-class|interp")->capture_default_str();
  pseudo->add_option("--out", out_dir, "Output JSONL path")->required();
  pseudo->add_flag("--render", render, "Also write annotated keyframes as PPM images");
  pseudo->add_option("--max-clips", max_clips, "Limit the number of clips");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const stad::Config cfg = load_config(config_path);
      const auto r = stad::cmd_gen_data(cfg, stad::resolve_data_path(out_dir), seed);
      std::cout << "dataset written to " << out_dir << "\n"
                << "  classes:          " << cfg.get_int("dataset.classes", 6) << "\n"
                << "  labeled clips:    " << r.train_labeled << "\n"
                << "  unlabeled clips:  " << r.train_unlabeled << "\n"
                << "  val keyframes:    " << r.val_labeled << "\n";
      return 0;
    }
    if (train->parsed()) {
      stad::Config cfg = load_config(config_path);
      if (!strategy.empty())
        cfg = stad::Config::parse(cfg.raw() + "\n[ssad]\nstrategy = " + strategy + "\n");
      std::optional<fs::path> resume;
      if (!checkpoint.empty()) resume = fs::path(checkpoint);
      const auto r = stad::cmd_train(cfg, stad::resolve_data_path(data_dir), stage,
                                     fs::path(out_dir), seed, resume, &std::cout);
      std::cout << "checkpoint: " << r.checkpoint.string() << "\n";
      return 0;
    }
    if (eval->parsed()) {
      const stad::Config cfg = load_config(config_path);
      std::optional<fs::path> out;
      if (!out_dir.empty()) out = fs::path(out_dir);
      stad::EvalOutput r;
      if (!detections.empty()) {
        r = stad::cmd_eval_detections(cfg, detections, stad::resolve_data_path(data_dir), split,
                                      out);
      } else if (!checkpoint.empty()) {
        r = stad::cmd_eval(cfg, checkpoint, stad::resolve_data_path(data_dir), split, which_model,
                           out);
      } else {
        std::cerr << "eval: need --checkpoint or --detections\n";
        return 1;
      }
      std::cout << r.json.dump(2) << "\n";
      return 0;
    }
    if (pseudo->parsed()) {
      const stad::Config cfg = load_config(config_path);
      if (strategy.empty()) strategy = "tla";
      const auto s = stad::cmd_pseudo_label(cfg, checkpoint, stad::resolve_data_path(data_dir),
                                            strategy, fs::path(out_dir), render, max_clips);
      std::cout << "clips: " << s.clips << "  boxes: " << s.boxes
                << "  background: " << s.background << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
