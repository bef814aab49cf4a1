#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vps/panoptic.hpp"
#include "vps/rng.hpp"

namespace vps {

inline constexpr std::size_t kMinEpisodeLength = 2;
inline constexpr std::size_t kMaxEpisodeLength = 5;
inline constexpr std::size_t kMinFrameGap = 1;
inline constexpr std::size_t kMaxFrameGap = 4;

struct EpisodePlan {
  std::string sequence;
  std::vector<std::size_t> frames;  // strictly increasing, length K

  std::size_t length() const { return frames.size(); }
  bool operator==(const EpisodePlan&) const = default;
};

// K ~ U{2..5}, each gap ~ U{1..4}; the start frame is uniform over every
// position where the whole plan fits. Gap draws that cannot fit the sequence
// are redrawn, which only matters for sequences shorter than the longest
// possible span (17 frames). `forced_length` pins K.
EpisodePlan sample_episode(std::size_t sequence_length, Rng& rng,
                           std::optional<std::size_t> forced_length = std::nullopt);

// Throws SamplingError describing the first violated invariant.
void validate_plan(const EpisodePlan& plan, std::size_t sequence_length);

// "sequence=<name> frames=<i,j,...>"
std::string serialize_plan(const EpisodePlan& plan);
EpisodePlan parse_plan(const std::string& line);

// One ground-truth segment of one episode frame. Stuff classes give one
// segment per (frame, class); thing instances one per (frame, class, id).
struct GtSegment {
  std::size_t frame = 0;  // position within the episode
  std::uint32_t semantic_id = 0;
  std::uint32_t instance_id = 0;  // 0 for stuff
  std::vector<std::uint8_t> mask;  // 0/1 per pixel
  std::size_t area = 0;

  // Identity key for thing segments; unique across thing classes.
  std::uint64_t track_key() const {
    return (static_cast<std::uint64_t>(semantic_id) << 32) | instance_id;
  }
};

struct FrameTargets {
  std::vector<GtSegment> stuff;     // S
  std::vector<GtSegment> detected;  // D: first episode occurrence of a thing
  std::vector<GtSegment> tracked;   // T: later occurrences
};

struct SdtPartition {
  std::vector<FrameTargets> frames;
};

// Splits per-frame annotations into S, D, T. Pixels of classes outside the
// table and thing pixels without an instance id are void and belong to no
// segment. An instance id on a stuff class is an IntegrityError.
SdtPartition partition_sdt(std::span<const PanopticMap> annotations, const ClassTable& classes);

}  // namespace vps
