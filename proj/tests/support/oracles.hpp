#pragma once

// Reference implementations used as test oracles. They follow the textbook
// definitions as literally as possible and make no attempt to be fast.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "vps/panoptic.hpp"
#include "vps/rng.hpp"

namespace oracle {

// Minimum total cost over every injective assignment of size min(rows, cols).
inline double brute_force_assignment(const std::vector<double>& cost, std::size_t rows,
                                     std::size_t cols) {
  const bool flip = rows > cols;
  const std::size_t n = flip ? cols : rows;
  const std::size_t m = flip ? rows : cols;
  auto at = [&](std::size_t i, std::size_t j) {
    return flip ? cost[j * cols + i] : cost[i * cols + j];
  };
  // Choose which n of the m columns are used, then every order of them.
  std::vector<std::size_t> cols_idx(m);
  std::iota(cols_idx.begin(), cols_idx.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> pick(m, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n), true);
  do {
    std::vector<std::size_t> chosen;
    for (std::size_t j = 0; j < m; ++j)
      if (pick[j]) chosen.push_back(j);
    do {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += at(i, chosen[i]);
      best = std::min(best, total);
    } while (std::next_permutation(chosen.begin(), chosen.end()));
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return n == 0 ? 0.0 : best;
}

struct NaiveMetrics {
  double sq = 0.0;
  double aq = 0.0;
};

// SQ and AQ straight from their definitions over one sequence: per-class IoU
// over all pixel-frames, and for each ground-truth thing tube the
// overlap-weighted IoU with every predicted tube. Void ground truth (class not
// in the table) is ignored by both. Vacuous results follow the library
// convention (SQ = 1 with no class present; AQ = 1 with no tubes at all).
inline NaiveMetrics naive_metrics(const std::vector<vps::PanopticMap>& pred,
                                  const std::vector<vps::PanopticMap>& gt,
                                  const vps::ClassTable& classes) {
  using PixelFrame = std::pair<std::size_t, std::size_t>;
  using Tube = std::pair<std::uint32_t, std::uint32_t>;
  NaiveMetrics out;

  double iou_sum = 0.0;
  std::size_t present = 0;
  for (const auto& info : classes.classes()) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t f = 0; f < gt.size(); ++f) {
      for (std::size_t i = 0; i < gt[f].pixel_count(); ++i) {
        if (!classes.contains(gt[f].semantic[i])) continue;
        const bool g = gt[f].semantic[i] == info.id;
        const bool p = pred[f].semantic[i] == info.id;
        tp += g && p;
        fp += !g && p;
        fn += g && !p;
      }
    }
    if (tp + fn == 0) continue;
    ++present;
    iou_sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  }
  out.sq = present ? iou_sum / static_cast<double>(present) : 1.0;

  std::map<Tube, std::set<PixelFrame>> gt_tubes, pred_tubes;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    for (std::size_t i = 0; i < gt[f].pixel_count(); ++i) {
      const std::uint32_t gs = gt[f].semantic[i];
      if (!classes.contains(gs)) continue;
      if (classes.is_thing(gs) && gt[f].instance[i] != 0) {
        gt_tubes[{gs, gt[f].instance[i]}].insert({f, i});
      }
      const std::uint32_t ps = pred[f].semantic[i];
      if (classes.contains(ps) && classes.is_thing(ps) && pred[f].instance[i] != 0) {
        pred_tubes[{ps, pred[f].instance[i]}].insert({f, i});
      }
    }
  }
  if (gt_tubes.empty()) {
    out.aq = pred_tubes.empty() ? 1.0 : 0.0;
    return out;
  }
  double aq_sum = 0.0;
  for (const auto& [gk, g] : gt_tubes) {
    double score = 0.0;
    for (const auto& [pk, p] : pred_tubes) {
      std::size_t inter = 0;
      for (const auto& px : p) inter += g.count(px);
      if (inter == 0) continue;
      const double uni = static_cast<double>(p.size() + g.size() - inter);
      score += static_cast<double>(inter) * (static_cast<double>(inter) / uni);
    }
    aq_sum += score / static_cast<double>(g.size());
  }
  out.aq = aq_sum / static_cast<double>(gt_tubes.size());
  return out;
}

// Random panoptic video over the standard class table plus an unlisted
// (void) class: up to `tracks` thing identities, stuff elsewhere.
inline std::vector<vps::PanopticMap> random_video(vps::Rng& rng, int width, int height,
                                                  std::size_t frames, std::uint32_t tracks) {
  const std::uint32_t stuff[] = {0, 2, 10};
  const std::uint32_t things[] = {11, 13};
  std::vector<vps::PanopticMap> video;
  for (std::size_t f = 0; f < frames; ++f) {
    vps::PanopticMap m(width, height);
    for (std::size_t i = 0; i < m.pixel_count(); ++i) {
      const auto kind = rng.uniform_int(0, 9);
      if (kind == 0) {
        m.semantic[i] = rng.uniform_int(0, 1) ? vps::kVoidSemantic : 7;
      } else if (kind <= 4 || tracks == 0) {
        m.semantic[i] = stuff[rng.uniform_int(0, 2)];
      } else {
        m.semantic[i] = things[rng.uniform_int(0, 1)];
        m.instance[i] = static_cast<std::uint32_t>(rng.uniform_int(0, tracks));
      }
    }
    video.push_back(std::move(m));
  }
  return video;
}

// A prediction correlated with `gt`: each pixel keeps its label with
// probability 1/2, otherwise it is redrawn at random.
inline std::vector<vps::PanopticMap> perturb_video(vps::Rng& rng,
                                                   const std::vector<vps::PanopticMap>& gt,
                                                   std::uint32_t tracks) {
  auto noise = random_video(rng, gt[0].width, gt[0].height, gt.size(), tracks);
  for (std::size_t f = 0; f < gt.size(); ++f) {
    for (std::size_t i = 0; i < gt[f].pixel_count(); ++i) {
      if (rng.uniform_int(0, 1) == 0) {
        noise[f].semantic[i] = gt[f].semantic[i];
        noise[f].instance[i] = gt[f].instance[i];
      }
    }
  }
  return noise;
}

// Chi-square statistic of observed counts against a uniform expectation.
inline double chi_square_uniform(const std::vector<std::size_t>& counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0.0;
  for (std::size_t c : counts) {
    const double d = static_cast<double>(c) - expected;
    stat += d * d / expected;
  }
  return stat;
}

// Upper 1% critical values of the chi-square distribution, df = 1..5.
inline double chi_square_critical_001(std::size_t df) {
  static const double table[] = {6.635, 9.210, 11.345, 13.277, 15.086};
  return table[df - 1];
}

}  // namespace oracle
