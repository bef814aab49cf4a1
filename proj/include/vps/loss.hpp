#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "vps/episode.hpp"
#include "vps/network.hpp"
#include "vps/tensor.hpp"

VPS_BEGIN_NAMESPACE

struct LossWeights {
  double lambda_sd = 0.3;  // detection loss (stuff + first occurrences)
  double lambda_t = 0.7;   // tracking loss
  double class_weight = 1.0;
  double dice_weight = 1.0;
  double mask_weight = 1.0;  // pixelwise binary cross-entropy

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Row-major cost matrix.
struct CostMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  std::vector<std::size_t> unmatched_rows;
  std::vector<std::size_t> unmatched_cols;
  double cost = 0.0;  // sum of matched entries, in row order
};

// Minimum-cost assignment of size min(rows, cols) (Kuhn-Munkres with
// potentials, O(n²m)). Deterministic; among equal-cost columns the lowest
// index is preferred during augmentation. NaN or infinite entries are a
// NumericError.
MatchResult hungarian(const CostMatrix& cost);

// A ground-truth segment in model terms.
struct MaskTarget {
  std::size_t class_index = 0;
  std::vector<Real> mask;  // 0/1 per pixel
  std::uint64_t track_key = 0;  // 0 for stuff
};

MaskTarget make_target(const GtSegment& segment, const ClassTable& classes);
std::vector<MaskTarget> make_targets(std::span<const GtSegment> segments,
                                     const ClassTable& classes);

// class_weight * -log p(class) + dice_weight * dice(sigmoid(mask), gt)
//   + mask_weight * mean BCE(sigmoid(mask), gt),
// with dice = 1 - 2·Σpg / (Σp + Σg). Inputs are single rows.
Tensor pair_loss(const Tensor& class_logits, const Tensor& mask_logits, const MaskTarget& target,
                 const LossWeights& weights);
// Same value computed directly in double precision, without taping.
double pair_loss_value(std::span<const Real> class_logits, std::span<const Real> mask_logits,
                       const MaskTarget& target, const LossWeights& weights);
// class_weight * -log p(no-object).
Tensor no_object_loss(const Tensor& class_logits, const LossWeights& weights);
double no_object_loss_value(std::span<const Real> class_logits, const LossWeights& weights);

struct DetectionLoss {
  Tensor loss;  // sum over matched pairs and unmatched no-object terms
  MatchResult match;  // rows index into free_queries, cols into targets
};

// Matches free queries to S∪D targets and sums pair losses plus no-object
// losses of unmatched free queries. The assignment minimizes exactly that
// sum (cost = pair loss - no-object loss of the query). `fixed` replays a
// previous assignment instead of matching.
DetectionLoss detection_loss(const Prediction& prediction,
                             std::span<const std::size_t> free_queries,
                             std::span<const MaskTarget> targets, const LossWeights& weights,
                             const MatchResult* fixed = nullptr);

struct TrackQueryRef {
  std::size_t query = 0;  // row in the prediction
  std::uint64_t track_key = 0;
};

struct TrackingLoss {
  Tensor loss;  // sum over track queries
  std::vector<std::optional<std::size_t>> target_of;  // per track query
};

// Each track query is paired with the T target carrying its identity; a
// query whose identity is absent this frame pays the no-object loss.
TrackingLoss tracking_loss(const Prediction& prediction, std::span<const TrackQueryRef> tracks,
                           std::span<const MaskTarget> targets, const LossWeights& weights);

struct FrameLoss {
  double detection = 0.0;  // per-segment average over S ∪ D
  double tracking = 0.0;   // per-query average over track queries
  std::size_t targets = 0;
  std::size_t track_queries = 0;
};

struct LossBreakdown {
  double l_sd = 0.0;
  double l_t = 0.0;
  double l_total = 0.0;
  std::vector<FrameLoss> frames;
};

// lambda_sd * l_sd + lambda_t * l_t
double total_loss(double l_sd, double l_t, const LossWeights& weights);
Tensor total_loss(const Tensor& l_sd, const Tensor& l_t, const LossWeights& weights);

VPS_END_NAMESPACE
