// vps: train, infer, eval, synth and overlay entry points.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "vps/dataset.hpp"
#include "vps/error.hpp"
#include "vps/keyvalue.hpp"
#include "vps/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

vps::RunConfig load_run_config(const std::string& path, std::optional<std::uint64_t> seed,
                               const std::string& out) {
  vps::RunConfig cfg = path.empty() ? vps::RunConfig{} : vps::RunConfig::load(path);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.output_dir = out;
  return cfg;
}

vps::ClassTable load_classes(const std::string& path) {
  return path.empty() ? vps::ClassTable::standard() : vps::ClassTable::load(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video panoptic segmentation with query propagation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, data_root, sequence, classes_path;
  std::string pred_dir, gt_dir, report_path, frame_png, panoptic_png, synth_manifest;
  std::optional<std::uint64_t> seed;
  std::size_t sequences = 1;

  auto* train = app.add_subcommand("train", "Train on a dataset root");
  train->add_option("--config", config_path, "Run configuration file")->required();
  train->add_option("--seed", seed, "Override the configured seed");
  train->add_option("--out", out_dir, "Override the output directory");

  auto* infer = app.add_subcommand("infer", "Run the online tracker over sequences");
  infer->add_option("--config", config_path, "Run configuration file")->required();
  infer->add_option("--checkpoint", checkpoint, "Trained weights")->required();
  infer->add_option("--data", data_root, "Dataset root (defaults to dataset.root)");
  infer->add_option("--sequence", sequence, "Only this sequence");
  infer->add_option("--seed", seed, "Override the configured seed");
  infer->add_option("--out", out_dir, "Override the output directory");

  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--pred", pred_dir, "Prediction root")->required();
  eval->add_option("--gt", gt_dir, "Ground-truth root")->required();
  eval->add_option("--classes", classes_path, "Class table file");
  eval->add_option("--config", config_path, "Run configuration (for the class table)");
  eval->add_option("--seed", seed, "Unused; accepted for uniformity");
  eval->add_option("--out", out_dir, "Directory for report.txt");
  eval->add_option("--report", report_path, "Report file path");

  auto* synth = app.add_subcommand("synth", "Generate synthetic sequences");
  synth->add_option("--config", synth_manifest, "Synthetic manifest (key = value)");
  synth->add_option("--classes", classes_path, "Class table file");
  synth->add_option("--seed", seed, "Override the manifest seed");
  synth->add_option("--sequences", sequences, "Number of sequences")->check(CLI::PositiveNumber);
  synth->add_option("--out", out_dir, "Dataset root to write")->required();

  auto* overlay = app.add_subcommand("overlay", "Render a panoptic map over a frame");
  overlay->add_option("--frame", frame_png, "RGB frame")->required();
  overlay->add_option("--panoptic", panoptic_png, "Panoptic PNG")->required();
  overlay->add_option("--out", out_dir, "Output PNG path")->required();
  overlay->add_option("--config", config_path, "Unused; accepted for uniformity");
  overlay->add_option("--seed", seed, "Unused; accepted for uniformity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) {
      const auto cfg = load_run_config(config_path, seed, out_dir);
      const auto result = vps::run_train(cfg, &std::cout);
      std::cout << "checkpoint " << result.checkpoint.string() << '\n';
    } else if (*infer) {
      auto cfg = load_run_config(config_path, seed, out_dir);
      if (!data_root.empty()) cfg.dataset_root = data_root;
      vps::run_infer(cfg, checkpoint,
                     sequence.empty() ? std::nullopt : std::optional<std::string>(sequence));
    } else if (*eval) {
      vps::ClassTable classes = load_classes(classes_path);
      if (classes_path.empty() && !config_path.empty()) {
        classes = vps::RunConfig::load(config_path).classes();
      }
      if (report_path.empty() && !out_dir.empty()) report_path = (fs::path(out_dir) / "report.txt").string();
      const auto report = vps::run_eval(pred_dir, gt_dir, classes, report_path);
      std::cout << report.summary_line() << '\n';
    } else if (*synth) {
      vps::SyntheticConfig cfg;
      if (!synth_manifest.empty()) {
        const auto kv = vps::KeyValues::load(synth_manifest);
        std::string text;
        for (const auto& [k, v] : kv.entries()) text += k + " = " + v + "\n";
        cfg = vps::parse_synthetic_config(text, synth_manifest);
      }
      if (seed) cfg.seed = *seed;
      vps::run_synth(cfg, load_classes(classes_path), out_dir, sequences);
    } else if (*overlay) {
      const auto frame = vps::read_png(frame_png);
      const auto map = vps::read_panoptic_png(panoptic_png);
      vps::write_png(out_dir, vps::render_overlay(frame, map));
    }
  } catch (const vps::Error& e) {
    std::cerr << "ERROR " << e.kind() << ' ' << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ERROR IoError " << e.what() << '\n';
    return 2;
  }
  return 0;
}
