#include "vps/teacher_forcing.hpp"

#include <algorithm>
#include <optional>

#include "vps/error.hpp"

VPS_BEGIN_NAMESPACE

namespace {

Tensor sum_terms(const std::vector<Tensor>& terms) {
  if (terms.empty()) return Tensor::scalar(Real(0));
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

}  // namespace

EpisodeForward forward_episode(const Model& model, std::span<const Image> frames,
                               const SdtPartition& targets, const ClassTable& classes,
                               const LossWeights& weights, const EpisodeOptions& options) {
  if (frames.size() <= options.context_frames) {
    throw ContractError("forward_episode: empty episode (" + std::to_string(frames.size()) +
                        " frames, " + std::to_string(options.context_frames) + " of them context)");
  }
  if (targets.frames.size() != frames.size()) {
    throw AlignmentError("forward_episode: " + std::to_string(frames.size()) + " frames but " +
                         std::to_string(targets.frames.size()) + " target sets");
  }
  if (model.config().num_classes != classes.size()) {
    throw ConfigError("model predicts " + std::to_string(model.config().num_classes) +
                      " classes but the class table has " + std::to_string(classes.size()));
  }
  const std::size_t loss_frames = frames.size() - options.context_frames;
  if (options.frozen_matches != nullptr && options.frozen_matches->size() != loss_frames) {
    throw ContractError("forward_episode: frozen matches do not cover every loss frame");
  }

  EpisodeForward out;
  const std::vector<QuerySlot> free = model.free_queries();
  std::vector<QuerySlot> tracks;
  std::vector<Tensor> sd_terms, t_terms;

  for (std::size_t t = 0; t < frames.size(); ++t) {
    const bool context = t < options.context_frames;
    std::optional<Tape::Pause> pause;
    if (context) pause.emplace();

    EpisodeFrame ef;
    ef.queries = tracks;
    ef.queries.insert(ef.queries.end(), free.begin(), free.end());
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      ef.track_rows.push_back({i, *tracks[i].track_id});
    }
    for (std::size_t i = 0; i < free.size(); ++i) ef.free_rows.push_back(tracks.size() + i);
    ef.prediction = model.predict(frames[t], ef.queries);

    const FrameTargets& ft = targets.frames[t];
    std::vector<MaskTarget> sd = make_targets(ft.stuff, classes);
    const std::vector<MaskTarget> detected = make_targets(ft.detected, classes);
    const std::size_t first_detected = sd.size();
    sd.insert(sd.end(), detected.begin(), detected.end());
    const std::vector<MaskTarget> tracked = make_targets(ft.tracked, classes);

    const MatchResult* fixed =
        (!context && options.frozen_matches != nullptr)
            ? &(*options.frozen_matches)[t - options.context_frames]
            : nullptr;
    DetectionLoss det = detection_loss(ef.prediction, ef.free_rows, sd, weights, fixed);
    TrackingLoss trk = tracking_loss(ef.prediction, ef.track_rows, tracked, weights);

    if (!context) {
      FrameLoss fl;
      fl.targets = sd.size();
      fl.track_queries = ef.track_rows.size();
      const Tensor det_avg =
          scale(det.loss, Real(1) / static_cast<Real>(std::max<std::size_t>(1, sd.size())));
      fl.detection = det_avg.item();
      sd_terms.push_back(det_avg);
      if (!ef.track_rows.empty()) {
        const Tensor trk_avg = scale(trk.loss, Real(1) / static_cast<Real>(ef.track_rows.size()));
        fl.tracking = trk_avg.item();
        t_terms.push_back(trk_avg);
      }
      out.breakdown.frames.push_back(fl);
    }

    // Next frame's track slots: surviving tracks, then new detections.
    std::vector<QuerySlot> next;
    for (std::size_t i = 0; i < ef.track_rows.size(); ++i) {
      if (!trk.target_of[i]) continue;
      const std::size_t row = ef.track_rows[i].query;
      next.push_back({slice(ef.prediction.embeddings, 0, row, row + 1), QueryRole::kTrack,
                      ef.track_rows[i].track_key});
    }
    for (const auto& [r, c] : det.match.pairs) {
      if (c < first_detected) continue;
      const std::size_t row = ef.free_rows[r];
      next.push_back({slice(ef.prediction.embeddings, 0, row, row + 1), QueryRole::kTrack,
                      sd[c].track_key});
    }
    tracks = std::move(next);

    if (!context) {
      ef.detection_match = std::move(det.match);
      ef.track_targets = std::move(trk.target_of);
      out.frames.push_back(std::move(ef));
    }
  }

  out.l_sd = scale(sum_terms(sd_terms), Real(1) / static_cast<Real>(sd_terms.size()));
  out.l_t = t_terms.empty()
                ? Tensor::scalar(Real(0))
                : scale(sum_terms(t_terms), Real(1) / static_cast<Real>(t_terms.size()));
  out.l_total = total_loss(out.l_sd, out.l_t, weights);
  out.breakdown.l_sd = out.l_sd.item();
  out.breakdown.l_t = out.l_t.item();
  out.breakdown.l_total = total_loss(out.breakdown.l_sd, out.breakdown.l_t, weights);
  return out;
}

VPS_END_NAMESPACE
