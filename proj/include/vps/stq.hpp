#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vps/panoptic.hpp"

namespace vps {

// Segmentation and Tracking Quality.
//
//   SQ  = mean over classes present in the ground truth of
//         TP_c / (TP_c + FP_c + FN_c), counts accumulated over all frames.
//   AQ  = mean over ground-truth thing tubes g of
//         1/|g| * sum_p |p∩g| * IoU(p, g),  IoU = |p∩g| / (|p| + |g| - |p∩g|)
//         where tubes are (class, instance id) pixel-frame sets of a sequence.
//   STQ = sqrt(AQ * SQ)
//
// Ground-truth pixels whose class is not in the table are void and skipped
// for both terms; stuff only contributes to SQ.

double compute_stq(double aq, double sq);

struct ClassIou {
  std::uint32_t semantic_id = 0;
  std::string name;
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double iou = 0.0;
  bool present = false;  // class occurs in the ground truth
};

struct TrackAq {
  std::string sequence;
  std::uint32_t semantic_id = 0;
  std::uint32_t instance_id = 0;
  std::uint64_t size = 0;  // pixel-frames in the ground-truth tube
  double aq = 0.0;
};

struct StqReport {
  double stq = 0.0, aq = 0.0, sq = 0.0;
  std::vector<ClassIou> classes;
  std::vector<TrackAq> tracks;
  std::uint64_t evaluated_pixels = 0;
  std::uint64_t void_pixels = 0;

  // "STQ=<v> AQ=<v> SQ=<v>"
  std::string summary_line() const;
  // Summary line, then per-class and per-track tables.
  std::string to_text() const;
};

// Streaming statistics for one sequence. Tube ids are only meaningful within
// a sequence.
class SequenceStats {
 public:
  SequenceStats() = default;
  explicit SequenceStats(const ClassTable& classes);

  void add_frame(const PanopticMap& prediction, const PanopticMap& ground_truth);
  // Sums counts; associative and commutative.
  void merge(const SequenceStats& other);

  using TubeKey = std::pair<std::uint32_t, std::uint32_t>;  // (semantic, instance)

  const std::vector<std::uint64_t>& tp() const { return tp_; }
  const std::vector<std::uint64_t>& fp() const { return fp_; }
  const std::vector<std::uint64_t>& fn() const { return fn_; }
  const std::map<TubeKey, std::uint64_t>& gt_tubes() const { return gt_size_; }
  const std::map<TubeKey, std::uint64_t>& pred_tubes() const { return pred_size_; }
  const std::map<std::pair<TubeKey, TubeKey>, std::uint64_t>& intersections() const {
    return inter_;
  }
  std::uint64_t evaluated_pixels() const { return evaluated_; }
  std::uint64_t void_pixels() const { return void_; }

 private:
  ClassTable classes_;
  std::vector<std::uint64_t> tp_, fp_, fn_;
  std::map<TubeKey, std::uint64_t> gt_size_, pred_size_;
  std::map<std::pair<TubeKey, TubeKey>, std::uint64_t> inter_;
  std::uint64_t evaluated_ = 0, void_ = 0;
};

class StqAccumulator {
 public:
  explicit StqAccumulator(ClassTable classes) : classes_(std::move(classes)) {}

  // Frames must be added in order within a sequence; sequences in any order.
  void add_frame(const std::string& sequence, const PanopticMap& prediction,
                 const PanopticMap& ground_truth);
  void add_sequence(const std::string& sequence, std::span<const PanopticMap> predictions,
                    std::span<const PanopticMap> ground_truth);
  void merge(const StqAccumulator& other);

  StqReport report() const;
  const std::map<std::string, SequenceStats>& sequences() const { return sequences_; }

 private:
  ClassTable classes_;
  std::map<std::string, SequenceStats> sequences_;
};

struct SqResult {
  double sq = 0.0;
  std::vector<ClassIou> classes;
};

struct AqResult {
  double aq = 0.0;
  std::vector<TrackAq> tracks;
};

// Whole-sequence convenience wrappers over the streaming accumulator.
SqResult compute_sq(std::span<const PanopticMap> predictions,
                    std::span<const PanopticMap> ground_truth, const ClassTable& classes);
AqResult compute_aq(std::span<const PanopticMap> predictions,
                    std::span<const PanopticMap> ground_truth, const ClassTable& classes);

}  // namespace vps
