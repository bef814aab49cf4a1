#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vps {

// 8-bit, 3-channel, row-major interleaved RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t* pixel(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int x, int y) const {
    return &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  bool operator==(const Image&) const = default;
};

// Semantic id stamped on pixels that belong to no segment.
inline constexpr std::uint32_t kVoidSemantic = 255;

struct PanopticMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> semantic;
  std::vector<std::uint32_t> instance;  // 0 = stuff / no instance

  PanopticMap() = default;
  PanopticMap(int w, int h, std::uint32_t fill_semantic = kVoidSemantic)
      : width(w),
        height(h),
        semantic(static_cast<std::size_t>(w) * h, fill_semantic),
        instance(static_cast<std::size_t>(w) * h, 0) {}

  std::size_t pixel_count() const { return semantic.size(); }
  bool operator==(const PanopticMap&) const = default;
};

struct ClassInfo {
  std::uint32_t id = 0;
  std::string name;
  bool is_thing = false;
};

// Class taxonomy; the model's class index for a semantic id is its position
// in this table.
class ClassTable {
 public:
  ClassTable() = default;
  explicit ClassTable(std::vector<ClassInfo> classes);

  // Two thing classes (person 11, car 13) and three stuff classes
  // (road 0, building 2, sky 10).
  static ClassTable standard();

  // One class per line: "<id> <name> thing|stuff"; '#' starts a comment.
  static ClassTable parse(const std::string& text, const std::string& source);
  static ClassTable load(const std::filesystem::path& path);
  std::string serialize() const;

  std::size_t size() const { return classes_.size(); }
  const std::vector<ClassInfo>& classes() const { return classes_; }
  const ClassInfo& at(std::size_t index) const { return classes_.at(index); }

  std::optional<std::size_t> index_of(std::uint32_t semantic_id) const;
  bool contains(std::uint32_t semantic_id) const { return index_of(semantic_id).has_value(); }
  bool is_thing(std::uint32_t semantic_id) const;
  std::vector<std::uint32_t> thing_ids() const;
  std::vector<std::uint32_t> stuff_ids() const;

 private:
  std::vector<ClassInfo> classes_;
};

// R = semantic id, instance id = G * 256 + B.
PanopticMap decode_panoptic(const Image& image);
Image encode_panoptic(const PanopticMap& map);

// Throws IntegrityError if a pixel carries an instance id on a class that is
// not a thing class.
void validate_panoptic(const PanopticMap& map, const ClassTable& classes);

}  // namespace vps
