#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vps/panoptic.hpp"

namespace vps {

// PNG codec for 8-bit RGB images. Reading anything other than an 8-bit
// 3-channel image (palette, gray, alpha, 16-bit) is a FormatError.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
std::string encode_png(const Image& image);
Image decode_png(const std::string& bytes, const std::string& source);

PanopticMap read_panoptic_png(const std::filesystem::path& path);
void write_panoptic_png(const std::filesystem::path& path, const PanopticMap& map);

struct SequenceDataset {
  std::string name;
  std::vector<Image> frames;
  std::vector<PanopticMap> annotations;
  ClassTable classes;

  std::size_t size() const { return frames.size(); }
};

// Layout: <root>/images/<seq>/<frame:06d>.png and
//         <root>/panoptic/<seq>/<frame:06d>.png
std::filesystem::path frame_path(const std::filesystem::path& root, const std::string& sequence,
                                 std::size_t frame);
std::filesystem::path panoptic_path(const std::filesystem::path& root,
                                    const std::string& sequence, std::size_t frame);

// PNG files in a directory, ordered by the integer value of their stem.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);
// Sequence names under <root>/<subdir>, sorted.
std::vector<std::string> list_sequences(const std::filesystem::path& root,
                                        const std::string& subdir = "images");

std::vector<PanopticMap> load_panoptic_sequence(const std::filesystem::path& root,
                                                const std::string& sequence);
SequenceDataset load_sequence(const std::filesystem::path& root, const std::string& sequence,
                              const ClassTable& classes);
void save_sequence(const std::filesystem::path& root, const SequenceDataset& dataset);

// A scripted span [first_frame, last_frame] during which an instance is not drawn.
struct Disappearance {
  std::uint32_t instance = 0;
  int first_frame = 0;
  int last_frame = 0;

  bool operator==(const Disappearance&) const = default;
};

struct SyntheticConfig {
  int width = 32;
  int height = 32;
  int frames = 20;
  int instances = 2;
  std::uint32_t instance_class = 13;
  std::vector<std::uint32_t> stuff_classes = {10, 2, 0};  // top to bottom
  double min_speed = 0.5;  // pixels per frame
  double max_speed = 1.5;
  int min_size = 7;
  int max_size = 10;
  std::vector<Disappearance> disappearances;
  std::uint64_t seed = 42;

  bool operator==(const SyntheticConfig&) const = default;
};

// Manifest: flat "key = value" lines recording every field, including seed.
std::string serialize_synthetic_config(const SyntheticConfig& cfg);
SyntheticConfig parse_synthetic_config(const std::string& text, const std::string& source);

// Horizontal stuff bands with moving rectangles/circles on top, rendered
// with exact per-frame ground truth. Instance ids are 1..instances; later
// instances occlude earlier ones.
SequenceDataset generate_synthetic_sequence(const SyntheticConfig& cfg, const ClassTable& classes,
                                            const std::string& name = "synth");

}  // namespace vps
