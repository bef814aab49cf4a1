#include <gtest/gtest.h>

#include <set>

#include "vps/dataset.hpp"
#include "vps/error.hpp"
#include "vps/teacher_forcing.hpp"

using namespace vps;

namespace {

ModelConfig small_model(const ClassTable& classes) {
  ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.heads = 4;
  cfg.ffn_dim = 32;
  cfg.free_queries = 6;
  cfg.num_classes = classes.size();
  return cfg;
}

SequenceDataset scripted(int frames, int instances, std::vector<Disappearance> gone = {}) {
  SyntheticConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.frames = frames;
  cfg.instances = instances;
  cfg.min_size = 4;
  cfg.max_size = 5;
  cfg.disappearances = std::move(gone);
  return generate_synthetic_sequence(cfg, ClassTable::standard());
}

std::set<std::uint32_t> ids_in(const PanopticMap& m) {
  std::set<std::uint32_t> ids;
  for (auto v : m.instance)
    if (v) ids.insert(v);
  return ids;
}

}  // namespace

TEST(TeacherForcing, SingleFrameEpisodeIsPlainPrediction) {
  const ClassTable classes = ClassTable::standard();
  const SequenceDataset ds = scripted(1, 1);
  Model model(small_model(classes), 1);
  const SdtPartition targets = partition_sdt(ds.annotations, classes);
  const EpisodeForward fwd = forward_episode(model, ds.frames, targets, classes, {});
  ASSERT_EQ(fwd.frames.size(), 1u);
  EXPECT_TRUE(fwd.frames[0].track_rows.empty());
  EXPECT_EQ(fwd.breakdown.l_t, 0.0);
  const Prediction plain = model.predict(ds.frames[0], model.free_queries());
  for (std::size_t i = 0; i < plain.mask_logits.numel(); ++i) {
    ASSERT_EQ(plain.mask_logits.at(i), fwd.frames[0].prediction.mask_logits.at(i));
  }
}

TEST(TeacherForcing, OneObjectBecomesOneTrackQueryWithItsId) {
  const ClassTable classes = ClassTable::standard();
  const SequenceDataset ds = scripted(3, 1);
  Model model(small_model(classes), 2);
  const SdtPartition targets = partition_sdt(ds.annotations, classes);
  const EpisodeForward fwd = forward_episode(model, ds.frames, targets, classes, {});
  const std::uint64_t key = targets.frames[0].detected.at(0).track_key();
  EXPECT_TRUE(fwd.frames[0].track_rows.empty());
  for (std::size_t t = 1; t < 3; ++t) {
    ASSERT_EQ(fwd.frames[t].track_rows.size(), 1u);
    EXPECT_EQ(fwd.frames[t].track_rows[0].track_key, key);
    EXPECT_EQ(fwd.frames[t].queries[0].role, QueryRole::kTrack);
    EXPECT_EQ(fwd.frames[t].queries[0].track_id, key);
  }
}

TEST(TeacherForcing, QueryCountFollowsPropagatedTracks) {
  const ClassTable classes = ClassTable::standard();
  // Instance 2 is missing at frames 0 and 2.
  const SequenceDataset ds = scripted(5, 2, {{2, 0, 0}, {2, 2, 2}});
  Model model(small_model(classes), 3);
  const SdtPartition targets = partition_sdt(ds.annotations, classes);
  const EpisodeForward fwd = forward_episode(model, ds.frames, targets, classes, {});

  // Oracle: an identity carries a query into frame t iff it was visible at
  // t-1 and either first appeared there or already carried a query into t-1.
  std::set<std::uint32_t> carried, seen;
  for (std::size_t t = 0; t < ds.size(); ++t) {
    EXPECT_EQ(fwd.frames[t].queries.size(), 6u + carried.size()) << "frame " << t;
    EXPECT_EQ(fwd.frames[t].track_rows.size(), carried.size()) << "frame " << t;
    std::set<std::uint32_t> next;
    for (std::uint32_t id : ids_in(ds.annotations[t])) {
      if (!seen.count(id) || carried.count(id)) next.insert(id);
      seen.insert(id);
    }
    carried = next;
  }
}

TEST(TeacherForcing, DeterministicAndLossRecordsAreConsistent) {
  const ClassTable classes = ClassTable::standard();
  const SequenceDataset ds = scripted(4, 2);
  Model model(small_model(classes), 4);
  const SdtPartition targets = partition_sdt(ds.annotations, classes);
  const LossWeights w;
  const EpisodeForward a = forward_episode(model, ds.frames, targets, classes, w);
  const EpisodeForward b = forward_episode(model, ds.frames, targets, classes, w);
  EXPECT_EQ(a.l_total.item(), b.l_total.item());
  EXPECT_EQ(a.breakdown.l_total, total_loss(a.breakdown.l_sd, a.breakdown.l_t, w));
  ASSERT_EQ(a.breakdown.frames.size(), 4u);
  double sd = 0.0;
  for (const auto& f : a.breakdown.frames) sd += f.detection;
  EXPECT_NEAR(a.breakdown.l_sd, sd / 4.0, 1e-5);
}

TEST(TeacherForcing, ContextFramesAgeTracksWithoutLoss) {
  const ClassTable classes = ClassTable::standard();
  const SequenceDataset ds = scripted(5, 1);
  Model model(small_model(classes), 5);
  const SdtPartition targets = partition_sdt(ds.annotations, classes);
  EpisodeOptions opt;
  opt.context_frames = 3;
  Tape tape;
  EpisodeForward fwd;
  {
    auto rec = tape.record();
    fwd = forward_episode(model, ds.frames, targets, classes, {}, opt);
  }
  ASSERT_EQ(fwd.frames.size(), 2u);
  EXPECT_EQ(fwd.breakdown.frames.size(), 2u);
  // The object was seen during context, so it arrives as a track query.
  EXPECT_EQ(fwd.frames[0].track_rows.size(), 1u);
  tape.backward(fwd.l_total);
  double norm = 0.0;
  for (const auto& [name, t] : model.parameters())
    for (Real g : t.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(TeacherForcing, ContractViolations) {
  const ClassTable classes = ClassTable::standard();
  const SequenceDataset ds = scripted(2, 1);
  Model model(small_model(classes), 6);
  const SdtPartition targets = partition_sdt(ds.annotations, classes);
  EpisodeOptions all_context;
  all_context.context_frames = 2;
  EXPECT_THROW(forward_episode(model, ds.frames, targets, classes, {}, all_context), ContractError);
  const SdtPartition short_targets = partition_sdt(std::span(ds.annotations).first(1), classes);
  EXPECT_THROW(forward_episode(model, ds.frames, short_targets, classes, {}), AlignmentError);
  ModelConfig wrong = small_model(classes);
  wrong.num_classes = 3;
  Model other(wrong, 6);
  EXPECT_THROW(forward_episode(other, ds.frames, targets, classes, {}), ConfigError);
}
