#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vps/dataset.hpp"
#include "vps/loss.hpp"
#include "vps/network.hpp"
#include "vps/stq.hpp"
#include "vps/tracker.hpp"

VPS_BEGIN_NAMESPACE

struct OptimizerConfig {
  double step = 1e-3;
  double momentum = 0.9;
  std::size_t iterations = 2000;
  std::size_t checkpoint_every = 0;  // 0 = only the final checkpoint
  // Up to this many frames preceding each episode are run as context (no
  // loss, no gradient), uniformly drawn per iteration.
  std::size_t max_context = 12;

  bool operator==(const OptimizerConfig&) const = default;
};

struct RunConfig {
  std::filesystem::path dataset_root;
  std::filesystem::path class_table;  // empty = built-in table
  ModelConfig model;                  // num_classes follows the class table
  LossWeights loss;
  TrackerConfig tracker;
  OptimizerConfig optim;
  std::uint64_t seed = 42;
  std::filesystem::path output_dir = "out";

  // Unknown keys and malformed values are ConfigErrors. Relative paths are
  // resolved against `base_dir`.
  static RunConfig parse(const std::string& text, const std::string& source,
                         const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  std::string serialize() const;

  ClassTable classes() const;
  // Checks value ranges and that referenced paths exist.
  void validate(bool needs_dataset) const;
};

struct TrainingLogRecord {
  std::size_t iteration = 0;
  std::size_t episode_length = 0;
  double l_sd = 0.0;
  double l_t = 0.0;
  double l_total = 0.0;
  double seconds = 0.0;

  std::string format() const;
  static TrainingLogRecord parse(const std::string& line);
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<TrainingLogRecord> log;
};

// Writes <out>/checkpoint.ckpt (plus checkpoint_<iter>.ckpt every
// checkpoint_every iterations), <out>/train_log.txt and <out>/config.txt.
// Progress lines go to `progress` when given.
TrainResult run_train(const RunConfig& config, std::ostream* progress = nullptr);

// Runs the online tracker over every sequence under the dataset root (or only
// `sequence`), writing <out>/panoptic/<seq>/<frame>.png and
// <out>/tracks/<seq>.txt.
void run_infer(const RunConfig& config, const std::filesystem::path& checkpoint,
               const std::optional<std::string>& sequence = std::nullopt);

// Compares <pred>/panoptic/<seq> against <gt>/panoptic/<seq> for every
// ground-truth sequence; writes the report to `report_path` when non-empty.
StqReport run_eval(const std::filesystem::path& pred_root, const std::filesystem::path& gt_root,
                   const ClassTable& classes, const std::filesystem::path& report_path = {});

// `count` sequences named synth_000, synth_001, ... with seeds seed, seed+1,
// ...; also writes classes.txt and synth.txt (the manifest) under `root`.
void run_synth(const SyntheticConfig& config, const ClassTable& classes,
               const std::filesystem::path& root, std::size_t count = 1);

// Deterministic color per (class, instance).
std::array<std::uint8_t, 3> overlay_color(std::uint32_t semantic_id, std::uint32_t instance_id);
// Half-transparent segment colors over the frame; void pixels are untouched.
Image render_overlay(const Image& frame, const PanopticMap& map);

VPS_END_NAMESPACE
