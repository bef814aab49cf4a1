#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support/oracles.hpp"
#include "vps/error.hpp"
#include "vps/stq.hpp"

using namespace vps;

namespace {

// One w×h frame per entry, every pixel given by (semantic, instance).
std::vector<PanopticMap> constant_video(int w, int h, std::size_t frames, std::uint32_t sem,
                                        std::uint32_t inst) {
  std::vector<PanopticMap> v;
  for (std::size_t f = 0; f < frames; ++f) {
    PanopticMap m(w, h, sem);
    std::fill(m.instance.begin(), m.instance.end(), inst);
    v.push_back(std::move(m));
  }
  return v;
}

}  // namespace

TEST(Stq, KnownScorePairs) {
  EXPECT_NEAR(compute_stq(0.5516, 0.6071), 0.5787, 5e-4);
  EXPECT_NEAR(compute_stq(0.4555, 0.5981), 0.5219, 5e-4);
  EXPECT_EQ(compute_stq(1, 1), 1);
}

TEST(Stq, SymmetricMonotoneAndRangeChecked) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(), s = rng.uniform(), d = rng.uniform(0, 1 - std::max(a, s));
    EXPECT_EQ(compute_stq(a, s), compute_stq(s, a));
    EXPECT_LE(compute_stq(a, s), compute_stq(a + d, s));
    EXPECT_LE(compute_stq(a, s), compute_stq(a, s + d));
  }
  EXPECT_THROW(compute_stq(1.5, 0.5), RangeError);
  EXPECT_THROW(compute_stq(0.5, -0.1), RangeError);
  EXPECT_THROW(compute_stq(NAN, 0.5), RangeError);
}

TEST(Sq, PerfectPredictionIsOne) {
  Rng rng(2);
  const auto gt = oracle::random_video(rng, 6, 5, 3, 3);
  EXPECT_EQ(compute_sq(gt, gt, ClassTable::standard()).sq, 1.0);
}

TEST(Sq, HalfSwappedTwoClassFrame) {
  // Left half road, right half sky; prediction swaps half of each.
  PanopticMap gt(4, 1, 0), pred(4, 1, 0);
  gt.semantic = {0, 0, 10, 10};
  pred.semantic = {0, 10, 10, 0};
  const SqResult r = compute_sq(std::vector{pred}, std::vector{gt}, ClassTable::standard());
  EXPECT_DOUBLE_EQ(r.sq, 1.0 / 3.0);
  for (const auto& c : r.classes) {
    if (c.present) {
      EXPECT_DOUBLE_EQ(c.iou, 1.0 / 3.0);
    }
  }
}

TEST(Sq, ClassesAbsentFromGroundTruthAreNotAveraged) {
  PanopticMap gt(2, 1, 0), pred(2, 1, 0);
  pred.semantic = {0, 2};  // building predicted, not in gt
  const SqResult r = compute_sq(std::vector{pred}, std::vector{gt}, ClassTable::standard());
  EXPECT_DOUBLE_EQ(r.sq, 0.5);
  std::size_t present = 0;
  for (const auto& c : r.classes) present += c.present;
  EXPECT_EQ(present, 1u);
}

TEST(Aq, PerfectTrackingIsOne) {
  const auto gt = constant_video(3, 3, 4, 13, 2);
  EXPECT_EQ(compute_aq(gt, gt, ClassTable::standard()).aq, 1.0);
}

TEST(Aq, IdSwitchHalvesAssociation) {
  const auto gt = constant_video(2, 2, 10, 13, 1);
  auto pred = gt;
  for (std::size_t f = 5; f < 10; ++f) std::fill(pred[f].instance.begin(), pred[f].instance.end(), 2);
  const AqResult r = compute_aq(pred, gt, ClassTable::standard());
  EXPECT_DOUBLE_EQ(r.aq, 0.5);
  ASSERT_EQ(r.tracks.size(), 1u);
  EXPECT_EQ(r.tracks[0].size, 40u);
  EXPECT_DOUBLE_EQ(oracle::naive_metrics(pred, gt, ClassTable::standard()).aq, 0.5);
}

TEST(Aq, VoidGroundTruthIsIgnored) {
  auto gt = constant_video(2, 1, 1, 13, 1);
  auto pred = gt;
  gt[0].semantic[1] = kVoidSemantic;
  gt[0].instance[1] = 0;
  // The predicted tube extends over the void pixel; that pixel is not counted.
  const StqReport r = [&] {
    StqAccumulator acc(ClassTable::standard());
    acc.add_sequence("s", pred, gt);
    return acc.report();
  }();
  EXPECT_EQ(r.aq, 1.0);
  EXPECT_EQ(r.sq, 1.0);
  EXPECT_EQ(r.void_pixels, 1u);
}

TEST(Stq, StreamingEqualsNaiveOnRandomTinyVideos) {
  const ClassTable classes = ClassTable::standard();
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = static_cast<int>(rng.uniform_int(1, 8));
    const int h = static_cast<int>(rng.uniform_int(1, 8));
    const auto frames = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto tracks = static_cast<std::uint32_t>(rng.uniform_int(0, 3));
    const auto gt = oracle::random_video(rng, w, h, frames, tracks);
    const auto pred = oracle::perturb_video(rng, gt, tracks);
    const auto naive = oracle::naive_metrics(pred, gt, classes);
    ASSERT_EQ(compute_sq(pred, gt, classes).sq, naive.sq) << "trial " << trial;
    ASSERT_EQ(compute_aq(pred, gt, classes).aq, naive.aq) << "trial " << trial;
  }
}

TEST(Stq, MergeOrderDoesNotChangeTheReport) {
  const ClassTable classes = ClassTable::standard();
  Rng rng(4);
  std::vector<std::pair<std::vector<PanopticMap>, std::vector<PanopticMap>>> seqs;
  for (int s = 0; s < 4; ++s) {
    auto gt = oracle::random_video(rng, 5, 4, 3, 2);
    auto pred = oracle::perturb_video(rng, gt, 2);
    seqs.emplace_back(std::move(pred), std::move(gt));
  }
  StqAccumulator all(classes);
  for (std::size_t s = 0; s < seqs.size(); ++s)
    all.add_sequence("s" + std::to_string(s), seqs[s].first, seqs[s].second);

  // Per-sequence accumulators merged in a different order and grouping.
  std::vector<StqAccumulator> parts;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    parts.emplace_back(classes);
    parts.back().add_sequence("s" + std::to_string(s), seqs[s].first, seqs[s].second);
  }
  StqAccumulator left(classes), right(classes);
  left.merge(parts[3]);
  left.merge(parts[1]);
  right.merge(parts[2]);
  right.merge(parts[0]);
  right.merge(left);
  EXPECT_EQ(right.report().to_text(), all.report().to_text());

  // Frame-level split of one sequence merges back to the same counts.
  SequenceStats whole(classes), a(classes), b(classes);
  for (std::size_t f = 0; f < 3; ++f) {
    whole.add_frame(seqs[0].first[f], seqs[0].second[f]);
    (f < 2 ? a : b).add_frame(seqs[0].first[f], seqs[0].second[f]);
  }
  b.merge(a);
  EXPECT_EQ(b.tp(), whole.tp());
  EXPECT_EQ(b.intersections(), whole.intersections());
  EXPECT_EQ(b.gt_tubes(), whole.gt_tubes());
}

TEST(Stq, ReportInvariantsAndFormat) {
  const ClassTable classes = ClassTable::standard();
  Rng rng(5);
  const auto gt = oracle::random_video(rng, 6, 6, 3, 3);
  const auto pred = oracle::perturb_video(rng, gt, 3);
  StqAccumulator acc(classes);
  acc.add_sequence("s", pred, gt);
  const StqReport r = acc.report();
  EXPECT_NEAR(r.stq, std::sqrt(r.aq * r.sq), 1e-9);
  for (double v : {r.stq, r.aq, r.sq}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(r.to_text().substr(0, r.summary_line().size()), r.summary_line());

  StqAccumulator same(classes);
  same.add_sequence("s", gt, gt);
  EXPECT_EQ(same.report().summary_line(), "STQ=1 AQ=1 SQ=1");
}

TEST(Stq, MisalignedInputsAreRejected) {
  StqAccumulator acc(ClassTable::standard());
  const std::vector<PanopticMap> two(2, PanopticMap(2, 2, 0)), three(3, PanopticMap(2, 2, 0));
  EXPECT_THROW(acc.add_sequence("s", two, three), AlignmentError);
  EXPECT_THROW(acc.add_frame("t", PanopticMap(2, 2, 0), PanopticMap(3, 2, 0)), ShapeError);
}
