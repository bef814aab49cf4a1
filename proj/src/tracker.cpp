#include "vps/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vps/error.hpp"

VPS_BEGIN_NAMESPACE

void TrackerConfig::validate() const {
  if (max_misses < 1) throw ConfigError("tracker: miss budget M must be at least 1");
  for (auto [value, name] : {std::pair{detection_threshold, "detection_threshold"},
                             std::pair{track_threshold, "track_threshold"},
                             std::pair{overlap_threshold, "overlap_threshold"},
                             std::pair{spawn_iou, "spawn_iou"}}) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw ConfigError(std::string("tracker: ") + name + " must lie in [0, 1]");
    }
  }
}

namespace {

std::vector<double> class_probabilities(const Prediction& p, std::size_t row) {
  const std::size_t n = p.class_logits.dim(1);
  const auto logits = p.class_logits.data().subspan(row * n, n);
  double mx = logits[0];
  for (Real v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> out(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void check_prediction(const Prediction& p, const ClassTable& classes) {
  if (p.class_logits.rank() != 2 || p.class_logits.dim(1) != classes.size() + 1) {
    throw ShapeError("prediction has " + shape_string(p.class_logits.shape()) +
                     " class logits for a table of " + std::to_string(classes.size()) +
                     " classes");
  }
  const std::size_t pixels = static_cast<std::size_t>(p.width) * static_cast<std::size_t>(p.height);
  if (p.mask_logits.rank() != 2 || p.mask_logits.dim(0) != p.query_count() ||
      p.mask_logits.dim(1) != pixels) {
    throw ShapeError("prediction mask logits " + shape_string(p.mask_logits.shape()) +
                     " do not cover a " + std::to_string(p.width) + "x" +
                     std::to_string(p.height) + " frame");
  }
}

// Index into `queries` owning each pixel, or -1.
std::vector<int> pixel_owners(const Prediction& p, std::span<const FusionQuery> queries,
                              const TrackerConfig& cfg) {
  const std::size_t pixels = p.mask_logits.dim(1);
  const auto masks = p.mask_logits.data();
  std::vector<int> owner(pixels, -1);
  for (std::size_t px = 0; px < pixels; ++px) {
    double best = -1.0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const double s = queries[i].confidence * sigmoid(masks[queries[i].row * pixels + px]);
      if (s > best) {
        best = s;
        owner[px] = static_cast<int>(i);
      }
    }
    if (best < cfg.overlap_threshold) owner[px] = -1;
  }
  return owner;
}

std::vector<std::uint8_t> raw_mask(const Prediction& p, std::size_t row) {
  const std::size_t pixels = p.mask_logits.dim(1);
  const auto logits = p.mask_logits.data().subspan(row * pixels, pixels);
  std::vector<std::uint8_t> m(pixels);
  for (std::size_t i = 0; i < pixels; ++i) m[i] = logits[i] > 0 ? 1 : 0;
  return m;
}

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] & b[i];
    uni += a[i] | b[i];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

struct Candidate {
  std::size_t row;
  std::uint32_t semantic_id;
  double confidence;
};

}  // namespace

PanopticMap fuse_queries(const Prediction& prediction, std::span<const FusionQuery> queries,
                         const TrackerConfig& cfg) {
  PanopticMap map(prediction.width, prediction.height);
  const std::vector<int> owner = pixel_owners(prediction, queries, cfg);
  for (std::size_t px = 0; px < owner.size(); ++px) {
    if (owner[px] < 0) continue;
    const FusionQuery& q = queries[static_cast<std::size_t>(owner[px])];
    map.semantic[px] = q.semantic_id;
    map.instance[px] = q.instance_id;
  }
  return map;
}

PanopticMap fuse_panoptic(const Prediction& prediction, const ClassTable& classes,
                          const TrackerConfig& cfg) {
  check_prediction(prediction, classes);
  std::vector<FusionQuery> queries;
  for (std::size_t r = 0; r < prediction.query_count(); ++r) {
    const auto probs = class_probabilities(prediction, r);
    const std::size_t c = argmax(probs);
    if (c == classes.size()) continue;
    const ClassInfo& info = classes.at(c);
    queries.push_back({r, info.id, info.is_thing ? static_cast<std::uint32_t>(r + 1) : 0u,
                       probs[c]});
  }
  return fuse_queries(prediction, queries, cfg);
}

StepResult associate(const Prediction& prediction, std::span<const TrackState> tracks,
                     const ClassTable& classes, const TrackerConfig& cfg,
                     std::uint64_t& next_id, std::size_t frame_index) {
  check_prediction(prediction, classes);
  for (const auto& t : tracks) {
    if (t.status == TrackStatus::kTerminated) {
      throw ContractError("track " + std::to_string(t.id) + " is terminated");
    }
  }
  if (tracks.size() > prediction.query_count()) {
    throw ShapeError("prediction has " + std::to_string(prediction.query_count()) +
                     " rows for " + std::to_string(tracks.size()) + " tracks");
  }

  // Tracks that are confident enough compete for pixels, lowest id first.
  std::vector<FusionQuery> track_queries;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const auto idx = classes.index_of(tracks[i].semantic_id);
    if (!idx || !classes.at(*idx).is_thing) {
      throw IntegrityError("track " + std::to_string(tracks[i].id) + " has non-thing class " +
                           std::to_string(tracks[i].semantic_id));
    }
    const double conf = class_probabilities(prediction, i)[*idx];
    if (conf >= cfg.track_threshold) {
      track_queries.push_back({i, tracks[i].semantic_id,
                               static_cast<std::uint32_t>(tracks[i].id), conf});
    }
  }
  std::sort(track_queries.begin(), track_queries.end(),
            [](const FusionQuery& a, const FusionQuery& b) {
              return a.instance_id < b.instance_id;
            });

  std::vector<FusionQuery> stuff;
  std::vector<Candidate> candidates;
  for (std::size_t r = tracks.size(); r < prediction.query_count(); ++r) {
    const auto probs = class_probabilities(prediction, r);
    const std::size_t c = argmax(probs);
    if (c == classes.size()) continue;
    const ClassInfo& info = classes.at(c);
    if (!info.is_thing) {
      stuff.push_back({r, info.id, 0, probs[c]});
    } else if (probs[c] >= cfg.detection_threshold) {
      candidates.push_back({r, info.id, probs[c]});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return a.confidence > b.confidence;
                   });

  // First pass: everything that could claim pixels.
  std::vector<FusionQuery> all = track_queries;
  for (const auto& c : candidates) all.push_back({c.row, c.semantic_id, 0, c.confidence});
  all.insert(all.end(), stuff.begin(), stuff.end());
  const std::vector<int> owner = pixel_owners(prediction, all, cfg);
  std::vector<std::size_t> area(all.size(), 0);
  for (int o : owner)
    if (o >= 0) ++area[static_cast<std::size_t>(o)];

  StepResult result;
  result.tracks.assign(tracks.begin(), tracks.end());
  std::vector<FusionQuery> final_queries;
  std::vector<std::vector<std::uint8_t>> claimed;  // raw masks of tracked and spawned objects
  for (std::size_t i = 0; i < track_queries.size(); ++i) {
    if (area[i] == 0) continue;
    final_queries.push_back(track_queries[i]);
    claimed.push_back(raw_mask(prediction, track_queries[i].row));
  }
  std::vector<bool> tracked(tracks.size(), false);
  for (const auto& q : final_queries) tracked[q.row] = true;

  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (area[track_queries.size() + k] < cfg.min_area) continue;
    const auto mask = raw_mask(prediction, candidates[k].row);
    const bool duplicate = std::any_of(claimed.begin(), claimed.end(), [&](const auto& m) {
      return mask_iou(mask, m) >= cfg.spawn_iou;
    });
    if (duplicate) continue;
    claimed.push_back(mask);
    TrackState s;
    s.id = next_id++;
    s.embedding = slice(prediction.embeddings, 0, candidates[k].row, candidates[k].row + 1).detach();
    s.semantic_id = candidates[k].semantic_id;
    s.birth_frame = frame_index;
    final_queries.push_back({candidates[k].row, s.semantic_id, static_cast<std::uint32_t>(s.id),
                             candidates[k].confidence});
    result.spawned.push_back(std::move(s));
  }
  final_queries.insert(final_queries.end(), stuff.begin(), stuff.end());
  result.map = fuse_queries(prediction, final_queries, cfg);

  for (std::size_t i = 0; i < result.tracks.size(); ++i) {
    TrackState& t = result.tracks[i];
    if (tracked[i]) {
      t.embedding = slice(prediction.embeddings, 0, i, i + 1).detach();
      t.miss_count = 0;
    } else if (++t.miss_count >= cfg.max_misses) {
      t.status = TrackStatus::kTerminated;
    }
  }
  return result;
}

StepResult start_sequence(const Prediction& prediction, const ClassTable& classes,
                          const TrackerConfig& cfg, std::uint64_t& next_id,
                          std::size_t frame_index) {
  return associate(prediction, {}, classes, cfg, next_id, frame_index);
}

StepResult step(const Model& model, const Image& frame, std::span<const TrackState> tracks,
                const ClassTable& classes, const TrackerConfig& cfg, std::uint64_t& next_id,
                std::size_t frame_index) {
  std::vector<QuerySlot> slots;
  for (const auto& t : tracks) {
    if (t.status == TrackStatus::kTerminated) {
      throw ContractError("track " + std::to_string(t.id) + " is terminated");
    }
    slots.push_back({t.embedding, QueryRole::kTrack, t.id});
  }
  const auto free = model.free_queries();
  slots.insert(slots.end(), free.begin(), free.end());
  const Prediction p = model.predict(frame, slots);
  return associate(p, tracks, classes, cfg, next_id, frame_index);
}

SequenceTracker::SequenceTracker(const Model& model, const ClassTable& classes, TrackerConfig cfg)
    : model_(&model), classes_(classes), cfg_(cfg) {
  cfg_.validate();
}

PanopticMap SequenceTracker::process(const Image& frame) {
  StepResult r = step(*model_, frame, live_, classes_, cfg_, next_id_, frame_);
  live_.clear();
  for (auto& t : r.tracks) {
    if (t.status == TrackStatus::kTerminated) {
      finished_.push_back({t.id, t.semantic_id, t.birth_frame, frame_});
    } else {
      live_.push_back(std::move(t));
    }
  }
  for (auto& t : r.spawned) live_.push_back(std::move(t));
  ++frame_;
  return std::move(r.map);
}

std::vector<TrackRecord> SequenceTracker::ledger() const {
  std::vector<TrackRecord> out = finished_;
  for (const auto& t : live_) {
    out.push_back({t.id, t.semantic_id, t.birth_frame, frame_ == 0 ? 0 : frame_ - 1});
  }
  std::sort(out.begin(), out.end(),
            [](const TrackRecord& a, const TrackRecord& b) { return a.id < b.id; });
  return out;
}

std::string format_ledger(std::span<const TrackRecord> records) {
  std::ostringstream os;
  os << "# id class birth death\n";
  for (const auto& r : records) {
    os << r.id << ' ' << r.semantic_id << ' ' << r.birth_frame << ' ' << r.death_frame << '\n';
  }
  return os.str();
}

std::vector<TrackRecord> parse_ledger(const std::string& text, const std::string& source) {
  std::vector<TrackRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    TrackRecord r;
    std::string extra;
    if (!(fields >> r.id >> r.semantic_id >> r.birth_frame >> r.death_frame) || (fields >> extra)) {
      throw FormatError(source + ":" + std::to_string(line_no) + ": malformed ledger line");
    }
    out.push_back(r);
  }
  return out;
}

VPS_END_NAMESPACE
