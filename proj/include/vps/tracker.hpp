#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vps/network.hpp"
#include "vps/panoptic.hpp"

VPS_BEGIN_NAMESPACE

struct TrackerConfig {
  std::size_t max_misses = 5;  // M
  double detection_threshold = 0.5;  // τ_det, to spawn a track
  double track_threshold = 0.3;      // τ_track, to keep a track alive
  std::size_t min_area = 8;          // fused pixels needed to spawn
  double overlap_threshold = 0.3;    // per-pixel score needed to claim a pixel
  double spawn_iou = 0.5;            // a candidate overlapping a track this much is a duplicate

  void validate() const;
  bool operator==(const TrackerConfig&) const = default;
};

enum class TrackStatus { kLive, kTerminated };

struct TrackState {
  std::uint64_t id = 0;
  Tensor embedding;  // [1 × d]
  std::uint32_t semantic_id = 0;
  std::size_t miss_count = 0;
  TrackStatus status = TrackStatus::kLive;
  std::size_t birth_frame = 0;
};

// One line of the per-sequence ledger.
struct TrackRecord {
  std::uint64_t id = 0;
  std::uint32_t semantic_id = 0;
  std::size_t birth_frame = 0;
  std::size_t death_frame = 0;

  bool operator==(const TrackRecord&) const = default;
};

// A query taking part in panoptic fusion, in priority order.
struct FusionQuery {
  std::size_t row = 0;
  std::uint32_t semantic_id = 0;
  std::uint32_t instance_id = 0;  // 0 for stuff
  double confidence = 0.0;        // class probability used in the pixel score
};

// Per pixel, score(q) = confidence(q) · sigmoid(mask logit of q). The pixel
// goes to the highest-scoring query if that score reaches the overlap
// threshold, otherwise it is void. Exact ties go to the earlier query.
PanopticMap fuse_queries(const Prediction& prediction, std::span<const FusionQuery> queries,
                         const TrackerConfig& cfg);

// Plain panoptic inference without identities: every query whose most likely
// label is not no-object takes part with its most likely class; thing
// queries are stamped with row + 1 as instance id.
PanopticMap fuse_panoptic(const Prediction& prediction, const ClassTable& classes,
                          const TrackerConfig& cfg);

struct StepResult {
  PanopticMap map;
  std::vector<TrackState> tracks;   // the input tracks, updated (some may be Terminated)
  std::vector<TrackState> spawned;  // new Live tracks, ids ascending
};

// Track association for one frame. Rows [0, tracks.size()) of the prediction
// belong to the given tracks in order; the remaining rows are free queries.
// `next_id` is advanced for every spawned track.
StepResult associate(const Prediction& prediction, std::span<const TrackState> tracks,
                     const ClassTable& classes, const TrackerConfig& cfg,
                     std::uint64_t& next_id, std::size_t frame_index);

// First frame of a sequence: free queries only.
StepResult start_sequence(const Prediction& prediction, const ClassTable& classes,
                          const TrackerConfig& cfg, std::uint64_t& next_id,
                          std::size_t frame_index = 0);

// Runs the model with the live tracks inserted as Track queries ahead of the
// free queries and associates the result.
StepResult step(const Model& model, const Image& frame, std::span<const TrackState> tracks,
                const ClassTable& classes, const TrackerConfig& cfg, std::uint64_t& next_id,
                std::size_t frame_index);

// Online tracker over one sequence.
class SequenceTracker {
 public:
  SequenceTracker(const Model& model, const ClassTable& classes, TrackerConfig cfg);

  PanopticMap process(const Image& frame);

  const std::vector<TrackState>& live_tracks() const { return live_; }
  std::size_t frames_processed() const { return frame_; }
  // Terminated tracks with their termination frame, then live tracks with
  // the last processed frame; sorted by id.
  std::vector<TrackRecord> ledger() const;

 private:
  const Model* model_;
  ClassTable classes_;
  TrackerConfig cfg_;
  std::vector<TrackState> live_;
  std::vector<TrackRecord> finished_;
  std::uint64_t next_id_ = 1;
  std::size_t frame_ = 0;
};

// "# id class birth death" header, then one record per line.
std::string format_ledger(std::span<const TrackRecord> records);
std::vector<TrackRecord> parse_ledger(const std::string& text, const std::string& source);

VPS_END_NAMESPACE
