#include "vps/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "vps/error.hpp"

VPS_BEGIN_NAMESPACE

void LossWeights::validate() const {
  for (double w : {lambda_sd, lambda_t, class_weight, dice_weight, mask_weight}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("loss weights must be finite and non-negative");
    }
  }
}

// ---------------------------------------------------------------- hungarian

MatchResult hungarian(const CostMatrix& cost) {
  for (double v : cost.values) {
    if (!std::isfinite(v)) throw NumericError("hungarian: cost matrix has NaN or infinite entry");
  }
  MatchResult result;
  const bool transposed = cost.rows > cost.cols;
  const std::size_t n = transposed ? cost.cols : cost.rows;  // n <= m
  const std::size_t m = transposed ? cost.rows : cost.cols;
  auto a = [&](std::size_t i, std::size_t j) {
    return transposed ? cost.at(j - 1, i - 1) : cost.at(i - 1, j - 1);
  };

  // 1-based potentials formulation; p[j] = row assigned to column j.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t row = transposed ? j - 1 : p[j] - 1;
    const std::size_t col = transposed ? p[j] - 1 : j - 1;
    result.pairs.emplace_back(row, col);
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  std::vector<bool> row_used(cost.rows, false), col_used(cost.cols, false);
  for (const auto& [r, c] : result.pairs) {
    row_used[r] = true;
    col_used[c] = true;
    result.cost += cost.at(r, c);
  }
  for (std::size_t r = 0; r < cost.rows; ++r)
    if (!row_used[r]) result.unmatched_rows.push_back(r);
  for (std::size_t c = 0; c < cost.cols; ++c)
    if (!col_used[c]) result.unmatched_cols.push_back(c);
  return result;
}

// ---------------------------------------------------------------- targets

MaskTarget make_target(const GtSegment& segment, const ClassTable& classes) {
  const auto idx = classes.index_of(segment.semantic_id);
  if (!idx) {
    throw IntegrityError("segment class " + std::to_string(segment.semantic_id) +
                         " is not in the class table");
  }
  MaskTarget t;
  t.class_index = *idx;
  t.mask.assign(segment.mask.begin(), segment.mask.end());
  t.track_key = segment.instance_id == 0 ? 0 : segment.track_key();
  return t;
}

std::vector<MaskTarget> make_targets(std::span<const GtSegment> segments,
                                     const ClassTable& classes) {
  std::vector<MaskTarget> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(make_target(s, classes));
  return out;
}

// ---------------------------------------------------------------- pair loss

namespace {

void check_pair_shapes(std::size_t class_count, std::size_t mask_count, const MaskTarget& target) {
  if (mask_count != target.mask.size()) {
    throw ShapeError("pair_loss: mask has " + std::to_string(mask_count) +
                     " pixels, target has " + std::to_string(target.mask.size()));
  }
  if (target.class_index >= class_count) {
    throw ShapeError("pair_loss: target class " + std::to_string(target.class_index) +
                     " outside " + std::to_string(class_count) + " logits");
  }
}

double log_softmax_at(std::span<const Real> logits, std::size_t index) {
  double mx = logits[0];
  for (Real v : logits) mx = std::max(mx, static_cast<double>(v));
  double total = 0.0;
  for (Real v : logits) total += std::exp(static_cast<double>(v) - mx);
  return static_cast<double>(logits[index]) - mx - std::log(total);
}

}  // namespace

Tensor pair_loss(const Tensor& class_logits, const Tensor& mask_logits, const MaskTarget& target,
                 const LossWeights& weights) {
  check_pair_shapes(class_logits.numel(), mask_logits.numel(), target);
  const Tensor logp = log_softmax(reshape(class_logits, {class_logits.numel()}), 0);
  const std::size_t cls[] = {target.class_index};
  const Tensor class_term = scale(take(logp, cls), Real(-weights.class_weight));

  const Tensor flat = reshape(mask_logits, {mask_logits.numel()});
  const Tensor prob = sigmoid(flat);
  const Tensor gt = Tensor::from({target.mask.size()}, target.mask);
  const Tensor inter = sum(mul(prob, gt));
  const Tensor denom = add_scalar(sum(prob), static_cast<Real>(std::accumulate(
                                                 target.mask.begin(), target.mask.end(), 0.0)));
  const Tensor dice = sub(Tensor::scalar(Real(1)), scale(div(inter, denom), Real(2)));
  const Tensor bce = bce_with_logits(flat, target.mask);

  return add(add(class_term, scale(dice, Real(weights.dice_weight))),
             scale(bce, Real(weights.mask_weight)));
}

double pair_loss_value(std::span<const Real> class_logits, std::span<const Real> mask_logits,
                       const MaskTarget& target, const LossWeights& weights) {
  check_pair_shapes(class_logits.size(), mask_logits.size(), target);
  const double class_term = -log_softmax_at(class_logits, target.class_index);
  double inter = 0.0, psum = 0.0, gsum = 0.0, bce = 0.0;
  for (std::size_t i = 0; i < mask_logits.size(); ++i) {
    const double x = mask_logits[i];
    const double g = target.mask[i];
    const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    inter += p * g;
    psum += p;
    gsum += g;
    bce += std::max(x, 0.0) - x * g + std::log1p(std::exp(-std::abs(x)));
  }
  const double dice = 1.0 - 2.0 * inter / (psum + gsum);
  bce /= static_cast<double>(mask_logits.size());
  return weights.class_weight * class_term + weights.dice_weight * dice +
         weights.mask_weight * bce;
}

Tensor no_object_loss(const Tensor& class_logits, const LossWeights& weights) {
  const Tensor logp = log_softmax(reshape(class_logits, {class_logits.numel()}), 0);
  const std::size_t idx[] = {class_logits.numel() - 1};
  return scale(take(logp, idx), Real(-weights.class_weight));
}

double no_object_loss_value(std::span<const Real> class_logits, const LossWeights& weights) {
  return -weights.class_weight * log_softmax_at(class_logits, class_logits.size() - 1);
}

// ---------------------------------------------------------------- frame losses

namespace {

std::span<const Real> row_span(const Tensor& t, std::size_t row) {
  const std::size_t cols = t.dim(1);
  return t.data().subspan(row * cols, cols);
}

Tensor row_of(const Tensor& t, std::size_t row) { return slice(t, 0, row, row + 1); }

}  // namespace

DetectionLoss detection_loss(const Prediction& prediction,
                             std::span<const std::size_t> free_queries,
                             std::span<const MaskTarget> targets, const LossWeights& weights,
                             const MatchResult* fixed) {
  if (targets.size() > free_queries.size()) {
    throw CapacityError("detection_loss: " + std::to_string(targets.size()) +
                        " targets exceed " + std::to_string(free_queries.size()) +
                        " free queries");
  }
  const Tensor& cls = prediction.class_logits;
  const Tensor& masks = prediction.mask_logits;

  DetectionLoss out;
  if (fixed != nullptr) {
    out.match = *fixed;
  } else {
    CostMatrix cost(free_queries.size(), targets.size());
    for (std::size_t r = 0; r < free_queries.size(); ++r) {
      const std::size_t q = free_queries[r];
      const double empty = no_object_loss_value(row_span(cls, q), weights);
      for (std::size_t c = 0; c < targets.size(); ++c) {
        cost.at(r, c) =
            pair_loss_value(row_span(cls, q), row_span(masks, q), targets[c], weights) - empty;
      }
    }
    out.match = hungarian(cost);
  }

  std::vector<Tensor> terms;
  for (const auto& [r, c] : out.match.pairs) {
    const std::size_t q = free_queries[r];
    terms.push_back(pair_loss(row_of(cls, q), row_of(masks, q), targets[c], weights));
  }
  for (std::size_t r : out.match.unmatched_rows) {
    terms.push_back(no_object_loss(row_of(cls, free_queries[r]), weights));
  }
  out.loss = terms.empty() ? Tensor::scalar(Real(0)) : terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) out.loss = add(out.loss, terms[i]);
  return out;
}

TrackingLoss tracking_loss(const Prediction& prediction, std::span<const TrackQueryRef> tracks,
                           std::span<const MaskTarget> targets, const LossWeights& weights) {
  std::set<std::uint64_t> keys;
  for (const auto& t : tracks) {
    if (!keys.insert(t.track_key).second) {
      throw IntegrityError("tracking_loss: duplicate track id " + std::to_string(t.track_key));
    }
  }
  const Tensor& cls = prediction.class_logits;
  const Tensor& masks = prediction.mask_logits;
  TrackingLoss out;
  std::vector<Tensor> terms;
  for (const auto& track : tracks) {
    std::optional<std::size_t> match;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i].track_key == track.track_key) match = i;
    }
    out.target_of.push_back(match);
    if (match) {
      terms.push_back(
          pair_loss(row_of(cls, track.query), row_of(masks, track.query), targets[*match], weights));
    } else {
      terms.push_back(no_object_loss(row_of(cls, track.query), weights));
    }
  }
  out.loss = terms.empty() ? Tensor::scalar(Real(0)) : terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) out.loss = add(out.loss, terms[i]);
  return out;
}

double total_loss(double l_sd, double l_t, const LossWeights& weights) {
  return weights.lambda_sd * l_sd + weights.lambda_t * l_t;
}

Tensor total_loss(const Tensor& l_sd, const Tensor& l_t, const LossWeights& weights) {
  return add(scale(l_sd, Real(weights.lambda_sd)), scale(l_t, Real(weights.lambda_t)));
}

VPS_END_NAMESPACE
