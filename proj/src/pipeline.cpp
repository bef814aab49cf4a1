#include "vps/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "vps/checkpoint.hpp"
#include "vps/episode.hpp"
#include "vps/error.hpp"
#include "vps/keyvalue.hpp"
#include "vps/rng.hpp"
#include "vps/teacher_forcing.hpp"

namespace fs = std::filesystem;

VPS_BEGIN_NAMESPACE

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "dataset.root",         "dataset.class_table",   "model.embed_dim",
      "model.decoder_layers", "model.heads",           "model.free_queries",
      "model.patch",          "model.ffn_dim",         "loss.lambda_sd",
      "loss.lambda_t",        "loss.class_weight",     "loss.dice_weight",
      "loss.mask_weight",     "tracker.m",             "tracker.detection_threshold",
      "tracker.track_threshold", "tracker.min_area",   "tracker.overlap_threshold",
      "tracker.spawn_iou",    "optim.step",            "optim.momentum",
      "optim.iterations",     "optim.checkpoint_every", "optim.max_context", "seed",
      "output.dir"};
  return keys;
}

fs::path resolve(const std::string& value, const fs::path& base) {
  if (value.empty()) return {};
  fs::path p(value);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

std::string write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
  return path.string();
}

ModelConfig effective_model(const RunConfig& config, const ClassTable& classes) {
  ModelConfig m = config.model;
  m.num_classes = classes.size();
  return m;
}

}  // namespace

// ---------------------------------------------------------------- RunConfig

RunConfig RunConfig::parse(const std::string& text, const std::string& source,
                           const fs::path& base_dir) {
  const KeyValues kv = KeyValues::parse(text, source);
  const auto unknown = kv.unknown_keys(known_keys());
  if (!unknown.empty()) {
    throw ConfigError(source + ": unknown key '" + *unknown.begin() + "'");
  }
  RunConfig c;
  c.dataset_root = resolve(kv.get_string("dataset.root", ""), base_dir);
  c.class_table = resolve(kv.get_string("dataset.class_table", ""), base_dir);
  c.model.embed_dim = kv.get_uint("model.embed_dim", c.model.embed_dim);
  c.model.decoder_layers = kv.get_uint("model.decoder_layers", c.model.decoder_layers);
  c.model.heads = kv.get_uint("model.heads", c.model.heads);
  c.model.free_queries = kv.get_uint("model.free_queries", c.model.free_queries);
  c.model.patch = kv.get_uint("model.patch", c.model.patch);
  c.model.ffn_dim = kv.get_uint("model.ffn_dim", c.model.ffn_dim);
  c.loss.lambda_sd = kv.get_double("loss.lambda_sd", c.loss.lambda_sd);
  c.loss.lambda_t = kv.get_double("loss.lambda_t", c.loss.lambda_t);
  c.loss.class_weight = kv.get_double("loss.class_weight", c.loss.class_weight);
  c.loss.dice_weight = kv.get_double("loss.dice_weight", c.loss.dice_weight);
  c.loss.mask_weight = kv.get_double("loss.mask_weight", c.loss.mask_weight);
  c.tracker.max_misses = kv.get_uint("tracker.m", c.tracker.max_misses);
  c.tracker.detection_threshold =
      kv.get_double("tracker.detection_threshold", c.tracker.detection_threshold);
  c.tracker.track_threshold = kv.get_double("tracker.track_threshold", c.tracker.track_threshold);
  c.tracker.min_area = kv.get_uint("tracker.min_area", c.tracker.min_area);
  c.tracker.overlap_threshold =
      kv.get_double("tracker.overlap_threshold", c.tracker.overlap_threshold);
  c.tracker.spawn_iou = kv.get_double("tracker.spawn_iou", c.tracker.spawn_iou);
  c.optim.step = kv.get_double("optim.step", c.optim.step);
  c.optim.momentum = kv.get_double("optim.momentum", c.optim.momentum);
  c.optim.iterations = kv.get_uint("optim.iterations", c.optim.iterations);
  c.optim.checkpoint_every = kv.get_uint("optim.checkpoint_every", c.optim.checkpoint_every);
  c.optim.max_context = kv.get_uint("optim.max_context", c.optim.max_context);
  c.seed = kv.get_uint("seed", c.seed);
  c.output_dir = resolve(kv.get_string("output.dir", c.output_dir.string()), base_dir);
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path.string(), path.parent_path());
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "dataset.root = " << dataset_root.string() << '\n';
  if (!class_table.empty()) os << "dataset.class_table = " << class_table.string() << '\n';
  os << "model.embed_dim = " << model.embed_dim << '\n'
     << "model.decoder_layers = " << model.decoder_layers << '\n'
     << "model.heads = " << model.heads << '\n'
     << "model.free_queries = " << model.free_queries << '\n'
     << "model.patch = " << model.patch << '\n'
     << "model.ffn_dim = " << model.ffn_dim << '\n'
     << "loss.lambda_sd = " << format_double(loss.lambda_sd) << '\n'
     << "loss.lambda_t = " << format_double(loss.lambda_t) << '\n'
     << "loss.class_weight = " << format_double(loss.class_weight) << '\n'
     << "loss.dice_weight = " << format_double(loss.dice_weight) << '\n'
     << "loss.mask_weight = " << format_double(loss.mask_weight) << '\n'
     << "tracker.m = " << tracker.max_misses << '\n'
     << "tracker.detection_threshold = " << format_double(tracker.detection_threshold) << '\n'
     << "tracker.track_threshold = " << format_double(tracker.track_threshold) << '\n'
     << "tracker.min_area = " << tracker.min_area << '\n'
     << "tracker.overlap_threshold = " << format_double(tracker.overlap_threshold) << '\n'
     << "tracker.spawn_iou = " << format_double(tracker.spawn_iou) << '\n'
     << "optim.step = " << format_double(optim.step) << '\n'
     << "optim.momentum = " << format_double(optim.momentum) << '\n'
     << "optim.iterations = " << optim.iterations << '\n'
     << "optim.checkpoint_every = " << optim.checkpoint_every << '\n'
     << "optim.max_context = " << optim.max_context << '\n'
     << "seed = " << seed << '\n'
     << "output.dir = " << output_dir.string() << '\n';
  return os.str();
}

ClassTable RunConfig::classes() const {
  return class_table.empty() ? ClassTable::standard() : ClassTable::load(class_table);
}

void RunConfig::validate(bool needs_dataset) const {
  if (!class_table.empty() && !fs::is_regular_file(class_table)) {
    throw ConfigError("class table " + class_table.string() + " does not exist");
  }
  if (needs_dataset) {
    if (dataset_root.empty()) throw ConfigError("dataset.root is not set");
    if (!fs::is_directory(dataset_root)) {
      throw ConfigError("dataset root " + dataset_root.string() + " does not exist");
    }
  }
  effective_model(*this, classes()).validate();
  loss.validate();
  tracker.validate();
  if (!(optim.step > 0.0) || !std::isfinite(optim.step)) {
    throw ConfigError("optim.step must be positive");
  }
  if (!(optim.momentum >= 0.0 && optim.momentum < 1.0)) {
    throw ConfigError("optim.momentum must lie in [0, 1)");
  }
  if (output_dir.empty()) throw ConfigError("output.dir is not set");
}

// ---------------------------------------------------------------- training

std::string TrainingLogRecord::format() const {
  char time_buf[32];
  std::snprintf(time_buf, sizeof time_buf, "%.3f", seconds);
  return "iter=" + std::to_string(iteration) + " K=" + std::to_string(episode_length) +
         " l_sd=" + format_double(l_sd) + " l_t=" + format_double(l_t) +
         " l_total=" + format_double(l_total) + " time=" + time_buf;
}

TrainingLogRecord TrainingLogRecord::parse(const std::string& line) {
  TrainingLogRecord r;
  std::istringstream in(line);
  std::string token;
  KeyValues kv;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw FormatError("malformed training log line: " + line);
    kv.set(token.substr(0, eq), token.substr(eq + 1));
  }
  for (const char* key : {"iter", "K", "l_sd", "l_t", "l_total", "time"}) {
    if (!kv.has(key)) throw FormatError("training log line lacks '" + std::string(key) + "'");
  }
  r.iteration = kv.get_uint("iter", 0);
  r.episode_length = kv.get_uint("K", 0);
  r.l_sd = kv.get_double("l_sd", 0);
  r.l_t = kv.get_double("l_t", 0);
  r.l_total = kv.get_double("l_total", 0);
  r.seconds = kv.get_double("time", 0);
  return r;
}

TrainResult run_train(const RunConfig& config, std::ostream* progress) {
  config.validate(true);
  const ClassTable classes = config.classes();
  const ModelConfig model_config = effective_model(config, classes);

  std::vector<SequenceDataset> data;
  for (const auto& name : list_sequences(config.dataset_root)) {
    data.push_back(load_sequence(config.dataset_root, name, classes));
    if (data.back().size() < kMaxEpisodeLength) {
      throw SamplingError("sequence " + name + " has " + std::to_string(data.back().size()) +
                          " frames; episodes need at least " +
                          std::to_string(kMaxEpisodeLength));
    }
  }
  if (data.empty()) {
    throw ConfigError("dataset root " + config.dataset_root.string() + " holds no sequences");
  }

  fs::create_directories(config.output_dir);
  write_text(config.output_dir / "config.txt", config.serialize());

  Model model(model_config, config.seed);
  Rng sampler(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::vector<Real>> velocity;
  for (const auto& [name, p] : model.parameters()) velocity.emplace_back(p.numel(), Real(0));

  TrainResult result;
  std::ofstream log(config.output_dir / "train_log.txt", std::ios::binary);
  if (!log) throw IoError("cannot write " + (config.output_dir / "train_log.txt").string());
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t it = 1; it <= config.optim.iterations; ++it) {
    const auto& seq = data[static_cast<std::size_t>(
        sampler.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
    EpisodePlan plan = sample_episode(seq.size(), sampler);
    plan.sequence = seq.name;
    const std::size_t first = plan.frames.front();
    const auto context = static_cast<std::size_t>(sampler.uniform_int(
        0, static_cast<std::int64_t>(std::min(config.optim.max_context, first))));
    std::vector<Image> frames;
    std::vector<PanopticMap> annotations;
    for (std::size_t f = first - context; f < first; ++f) {
      frames.push_back(seq.frames[f]);
      annotations.push_back(seq.annotations[f]);
    }
    for (std::size_t f : plan.frames) {
      frames.push_back(seq.frames[f]);
      annotations.push_back(seq.annotations[f]);
    }
    const SdtPartition targets = partition_sdt(annotations, classes);

    Tape tape;
    EpisodeForward fwd;
    {
      auto recording = tape.record();
      EpisodeOptions options;
      options.context_frames = context;
      fwd = forward_episode(model, frames, targets, classes, config.loss, options);
    }
    if (!std::isfinite(fwd.breakdown.l_total)) {
      throw NumericError("non-finite loss at iteration " + std::to_string(it));
    }
    tape.backward(fwd.l_total);

    const auto mu = static_cast<Real>(config.optim.momentum);
    const auto lr = static_cast<Real>(config.optim.step);
    auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i].second;
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.data();
      auto& v = velocity[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = mu * v[j] + g[j];
        w[j] -= lr * v[j];
      }
    }

    TrainingLogRecord rec;
    rec.iteration = it;
    rec.episode_length = plan.length();
    rec.l_sd = fwd.breakdown.l_sd;
    rec.l_t = fwd.breakdown.l_t;
    rec.l_total = fwd.breakdown.l_total;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << rec.format() << '\n';
    if (progress != nullptr && (it % 100 == 0 || it == 1)) *progress << rec.format() << std::endl;
    result.log.push_back(rec);

    if (config.optim.checkpoint_every != 0 && it % config.optim.checkpoint_every == 0) {
      save_checkpoint(config.output_dir / ("checkpoint_" + std::to_string(it) + ".ckpt"),
                      model.state());
    }
  }
  result.checkpoint = config.output_dir / "checkpoint.ckpt";
  save_checkpoint(result.checkpoint, model.state());
  return result;
}

// ---------------------------------------------------------------- inference

void run_infer(const RunConfig& config, const fs::path& checkpoint,
               const std::optional<std::string>& sequence) {
  config.validate(true);
  const ClassTable classes = config.classes();
  Model model(effective_model(config, classes), config.seed);
  model.load_state(load_checkpoint(checkpoint));

  std::vector<std::string> names;
  if (sequence) {
    names.push_back(*sequence);
  } else {
    names = list_sequences(config.dataset_root);
  }
  for (const auto& name : names) {
    const auto paths = list_frames(config.dataset_root / "images" / name);
    if (paths.empty()) throw IoError("sequence " + name + " has no frames");
    SequenceTracker tracker(model, classes, config.tracker);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const PanopticMap map = tracker.process(read_png(paths[i]));
      write_panoptic_png(panoptic_path(config.output_dir, name, i), map);
    }
    const auto ledger = tracker.ledger();
    write_text(config.output_dir / "tracks" / (name + ".txt"), format_ledger(ledger));
  }
}

// ---------------------------------------------------------------- evaluation

StqReport run_eval(const fs::path& pred_root, const fs::path& gt_root, const ClassTable& classes,
                   const fs::path& report_path) {
  const auto names = list_sequences(gt_root, "panoptic");
  std::vector<std::vector<PanopticMap>> preds, gts;
  std::string mismatched;
  for (const auto& name : names) {
    gts.push_back(load_panoptic_sequence(gt_root, name));
    const fs::path dir = pred_root / "panoptic" / name;
    preds.push_back(fs::is_directory(dir) ? load_panoptic_sequence(pred_root, name)
                                          : std::vector<PanopticMap>{});
    if (preds.back().size() != gts.back().size()) {
      mismatched += (mismatched.empty() ? "" : ", ") + name + " (" +
                    std::to_string(preds.back().size()) + " predicted vs " +
                    std::to_string(gts.back().size()) + " ground truth)";
    }
  }
  if (!mismatched.empty()) throw AlignmentError("frame count mismatch: " + mismatched);

  StqAccumulator acc(classes);
  for (std::size_t i = 0; i < names.size(); ++i) acc.add_sequence(names[i], preds[i], gts[i]);
  StqReport report = acc.report();
  if (!report_path.empty()) write_text(report_path, report.to_text());
  return report;
}

// ---------------------------------------------------------------- synthetic data

void run_synth(const SyntheticConfig& config, const ClassTable& classes, const fs::path& root,
               std::size_t count) {
  if (count == 0) throw ConfigError("synth: need at least one sequence");
  // Generate everything first so that a bad config leaves no partial output.
  std::vector<SequenceDataset> sequences;
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticConfig c = config;
    c.seed = config.seed + i;
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03zu", i);
    sequences.push_back(generate_synthetic_sequence(c, classes, name));
  }
  for (const auto& s : sequences) save_sequence(root, s);
  write_text(root / "classes.txt", classes.serialize());
  write_text(root / "synth.txt", "# sequences: " + std::to_string(count) + "\n" +
                                     serialize_synthetic_config(config));
}

// ---------------------------------------------------------------- overlay

std::array<std::uint8_t, 3> overlay_color(std::uint32_t semantic_id, std::uint32_t instance_id) {
  std::uint64_t z = (static_cast<std::uint64_t>(semantic_id) << 32 | instance_id) +
                    0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return {static_cast<std::uint8_t>(z), static_cast<std::uint8_t>(z >> 8),
          static_cast<std::uint8_t>(z >> 16)};
}

Image render_overlay(const Image& frame, const PanopticMap& map) {
  if (frame.width != map.width || frame.height != map.height) {
    throw ShapeError("overlay: frame " + std::to_string(frame.width) + "x" +
                     std::to_string(frame.height) + " vs panoptic map " +
                     std::to_string(map.width) + "x" + std::to_string(map.height));
  }
  Image out = frame;
  for (std::size_t i = 0; i < map.pixel_count(); ++i) {
    if (map.semantic[i] == kVoidSemantic) continue;
    const auto color = overlay_color(map.semantic[i], map.instance[i]);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      std::uint8_t& v = out.rgb[i * 3 + ch];
      v = static_cast<std::uint8_t>((v + color[ch] + 1) / 2);
    }
  }
  return out;
}

VPS_END_NAMESPACE
