#include "vps/episode.hpp"

#include <map>
#include <set>
#include <sstream>

#include "vps/error.hpp"

namespace vps {

EpisodePlan sample_episode(std::size_t sequence_length, Rng& rng,
                           std::optional<std::size_t> forced_length) {
  if (sequence_length < kMaxEpisodeLength) {
    throw SamplingError("sequence of length " + std::to_string(sequence_length) +
                        " is too short to sample episodes (need at least " +
                        std::to_string(kMaxEpisodeLength) + " frames)");
  }
  std::size_t k = 0;
  if (forced_length) {
    k = *forced_length;
    if (k < kMinEpisodeLength || k > kMaxEpisodeLength) {
      throw SamplingError("episode length " + std::to_string(k) + " outside [2, 5]");
    }
  } else {
    k = static_cast<std::size_t>(rng.uniform_int(kMinEpisodeLength, kMaxEpisodeLength));
  }
  std::vector<std::size_t> gaps(k - 1);
  std::size_t span = 0;
  do {
    span = 0;
    for (auto& g : gaps) {
      g = static_cast<std::size_t>(rng.uniform_int(kMinFrameGap, kMaxFrameGap));
      span += g;
    }
  } while (span > sequence_length - 1);

  EpisodePlan plan;
  std::size_t frame = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(sequence_length - 1 - span)));
  plan.frames.push_back(frame);
  for (std::size_t g : gaps) {
    frame += g;
    plan.frames.push_back(frame);
  }
  return plan;
}

void validate_plan(const EpisodePlan& plan, std::size_t sequence_length) {
  const std::size_t k = plan.length();
  if (k < kMinEpisodeLength || k > kMaxEpisodeLength) {
    throw SamplingError("episode length " + std::to_string(k) + " outside [2, 5]");
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (plan.frames[i] >= sequence_length) {
      throw SamplingError("frame " + std::to_string(plan.frames[i]) + " beyond sequence of " +
                          std::to_string(sequence_length));
    }
    if (i > 0) {
      const std::size_t prev = plan.frames[i - 1];
      if (plan.frames[i] <= prev || plan.frames[i] - prev > kMaxFrameGap) {
        throw SamplingError("gap between frames " + std::to_string(prev) + " and " +
                            std::to_string(plan.frames[i]) + " outside [1, 4]");
      }
    }
  }
}

std::string serialize_plan(const EpisodePlan& plan) {
  std::ostringstream os;
  os << "sequence=" << plan.sequence << " frames=";
  for (std::size_t i = 0; i < plan.frames.size(); ++i) os << (i ? "," : "") << plan.frames[i];
  return os.str();
}

EpisodePlan parse_plan(const std::string& line) {
  std::istringstream in(line);
  std::string seq_field, frames_field;
  if (!(in >> seq_field >> frames_field) || seq_field.rfind("sequence=", 0) != 0 ||
      frames_field.rfind("frames=", 0) != 0) {
    throw FormatError("bad episode plan line: '" + line + "'");
  }
  EpisodePlan plan;
  plan.sequence = seq_field.substr(9);
  std::istringstream frames(frames_field.substr(7));
  std::string item;
  while (std::getline(frames, item, ',')) {
    try {
      plan.frames.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw FormatError("bad frame index '" + item + "' in episode plan");
    }
  }
  return plan;
}

SdtPartition partition_sdt(std::span<const PanopticMap> annotations, const ClassTable& classes) {
  SdtPartition out;
  if (annotations.empty()) return out;
  const int width = annotations[0].width;
  const int height = annotations[0].height;
  const std::size_t pixels = annotations[0].pixel_count();
  std::set<std::uint64_t> seen_things;

  for (std::size_t f = 0; f < annotations.size(); ++f) {
    const PanopticMap& map = annotations[f];
    if (map.width != width || map.height != height) {
      throw AlignmentError("episode frame " + std::to_string(f) + " has size " +
                           std::to_string(map.width) + "x" + std::to_string(map.height) +
                           ", expected " + std::to_string(width) + "x" + std::to_string(height));
    }
    // Ordered by (semantic, instance) so segment order is deterministic.
    std::map<std::pair<std::uint32_t, std::uint32_t>, GtSegment> segments;
    for (std::size_t i = 0; i < pixels; ++i) {
      const std::uint32_t sem = map.semantic[i];
      const std::uint32_t inst = map.instance[i];
      const auto idx = classes.index_of(sem);
      if (!idx) continue;  // void
      const bool thing = classes.at(*idx).is_thing;
      if (!thing && inst != 0) {
        throw IntegrityError("episode frame " + std::to_string(f) + ", pixel " +
                             std::to_string(i) + ": instance id " + std::to_string(inst) +
                             " on stuff class " + std::to_string(sem));
      }
      if (thing && inst == 0) continue;  // unidentified thing pixels are void
      auto [it, inserted] = segments.try_emplace({sem, inst});
      GtSegment& seg = it->second;
      if (inserted) {
        seg.frame = f;
        seg.semantic_id = sem;
        seg.instance_id = inst;
        seg.mask.assign(pixels, 0);
      }
      seg.mask[i] = 1;
      ++seg.area;
    }
    FrameTargets targets;
    for (auto& [key, seg] : segments) {
      if (seg.instance_id == 0) {
        targets.stuff.push_back(std::move(seg));
      } else if (seen_things.insert(seg.track_key()).second) {
        targets.detected.push_back(std::move(seg));
      } else {
        targets.tracked.push_back(std::move(seg));
      }
    }
    out.frames.push_back(std::move(targets));
  }
  return out;
}

}  // namespace vps
