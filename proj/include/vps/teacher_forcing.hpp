#pragma once

#include <span>
#include <vector>

#include "vps/episode.hpp"
#include "vps/loss.hpp"
#include "vps/network.hpp"

VPS_BEGIN_NAMESPACE

struct EpisodeFrame {
  std::vector<QuerySlot> queries;  // track slots first, then the free queries
  Prediction prediction;
  std::vector<std::size_t> free_rows;
  std::vector<TrackQueryRef> track_rows;
  MatchResult detection_match;  // rows index into free_rows
  std::vector<std::optional<std::size_t>> track_targets;
};

struct EpisodeForward {
  std::vector<EpisodeFrame> frames;  // loss frames only
  Tensor l_sd;
  Tensor l_t;
  Tensor l_total;
  LossBreakdown breakdown;
};

struct EpisodeOptions {
  // Leading frames that only propagate queries: no loss, no gradient. Track
  // queries enter the first loss frame already aged by that many steps.
  std::size_t context_frames = 0;
  // One detection assignment per loss frame, replayed instead of matching so
  // that the loss is a smooth function of the weights (finite differences).
  const std::vector<MatchResult>* frozen_matches = nullptr;
};

// Runs an episode with ground-truth-driven propagation: free queries matched
// to D segments and track queries whose identity is present in T carry their
// fresh output embedding into the next frame as Track slots. l_sd averages
// the per-frame detection losses over all loss frames, l_t the per-frame
// tracking losses over loss frames that have track queries. `targets` covers
// context and loss frames alike.
EpisodeForward forward_episode(const Model& model, std::span<const Image> frames,
                               const SdtPartition& targets, const ClassTable& classes,
                               const LossWeights& weights, const EpisodeOptions& options = {});

VPS_END_NAMESPACE
