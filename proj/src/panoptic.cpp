#include "vps/panoptic.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "vps/error.hpp"

namespace vps {

ClassTable::ClassTable(std::vector<ClassInfo> classes) : classes_(std::move(classes)) {
  std::set<std::uint32_t> seen;
  for (const auto& c : classes_) {
    if (c.id >= kVoidSemantic) {
      throw ConfigError("class id " + std::to_string(c.id) + " (" + c.name +
                        ") must be below " + std::to_string(kVoidSemantic));
    }
    if (!seen.insert(c.id).second) {
      throw ConfigError("duplicate class id " + std::to_string(c.id));
    }
  }
}

ClassTable ClassTable::standard() {
  return ClassTable({{0, "road", false},
                     {2, "building", false},
                     {10, "sky", false},
                     {11, "person", true},
                     {13, "car", true}});
}

ClassTable ClassTable::parse(const std::string& text, const std::string& source) {
  std::vector<ClassInfo> classes;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string id_text, name, kind;
    if (!(fields >> id_text)) continue;
    if (!(fields >> name >> kind)) {
      throw ConfigError(source + ":" + std::to_string(line_no) +
                        ": expected '<id> <name> thing|stuff'");
    }
    ClassInfo info;
    try {
      std::size_t used = 0;
      const unsigned long id = std::stoul(id_text, &used);
      if (used != id_text.size()) throw std::invalid_argument(id_text);
      info.id = static_cast<std::uint32_t>(id);
    } catch (const std::exception&) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": bad class id '" +
                        id_text + "'");
    }
    info.name = name;
    if (kind == "thing") {
      info.is_thing = true;
    } else if (kind != "stuff") {
      throw ConfigError(source + ":" + std::to_string(line_no) +
                        ": class kind must be 'thing' or 'stuff', got '" + kind + "'");
    }
    classes.push_back(std::move(info));
  }
  if (classes.empty()) throw ConfigError(source + ": class table is empty");
  return ClassTable(std::move(classes));
}

ClassTable ClassTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read class table " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string ClassTable::serialize() const {
  std::ostringstream os;
  os << "# id name kind\n";
  for (const auto& c : classes_) {
    os << c.id << ' ' << c.name << ' ' << (c.is_thing ? "thing" : "stuff") << '\n';
  }
  return os.str();
}

std::optional<std::size_t> ClassTable::index_of(std::uint32_t semantic_id) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].id == semantic_id) return i;
  }
  return std::nullopt;
}

bool ClassTable::is_thing(std::uint32_t semantic_id) const {
  const auto idx = index_of(semantic_id);
  return idx && classes_[*idx].is_thing;
}

std::vector<std::uint32_t> ClassTable::thing_ids() const {
  std::vector<std::uint32_t> ids;
  for (const auto& c : classes_) if (c.is_thing) ids.push_back(c.id);
  return ids;
}

std::vector<std::uint32_t> ClassTable::stuff_ids() const {
  std::vector<std::uint32_t> ids;
  for (const auto& c : classes_) if (!c.is_thing) ids.push_back(c.id);
  return ids;
}

PanopticMap decode_panoptic(const Image& image) {
  if (image.rgb.size() != image.pixel_count() * 3) {
    throw FormatError("panoptic image buffer does not hold 3 channels");
  }
  PanopticMap map(image.width, image.height, 0);
  for (std::size_t i = 0; i < map.pixel_count(); ++i) {
    const std::uint8_t* px = &image.rgb[i * 3];
    map.semantic[i] = px[0];
    map.instance[i] = static_cast<std::uint32_t>(px[1]) * 256u + px[2];
  }
  return map;
}

Image encode_panoptic(const PanopticMap& map) {
  Image image(map.width, map.height);
  for (std::size_t i = 0; i < map.pixel_count(); ++i) {
    const std::uint32_t sem = map.semantic[i];
    const std::uint32_t inst = map.instance[i];
    if (sem >= 256 || inst >= 65536) {
      throw RangeError("pixel " + std::to_string(i) + ": semantic " + std::to_string(sem) +
                       " / instance " + std::to_string(inst) +
                       " outside encodable range (<256, <65536)");
    }
    image.rgb[i * 3 + 0] = static_cast<std::uint8_t>(sem);
    image.rgb[i * 3 + 1] = static_cast<std::uint8_t>(inst / 256u);
    image.rgb[i * 3 + 2] = static_cast<std::uint8_t>(inst % 256u);
  }
  return image;
}

void validate_panoptic(const PanopticMap& map, const ClassTable& classes) {
  if (map.semantic.size() != map.pixel_count() || map.instance.size() != map.pixel_count() ||
      map.pixel_count() != static_cast<std::size_t>(map.width) * map.height) {
    throw IntegrityError("panoptic map buffers do not match its size");
  }
  for (std::size_t i = 0; i < map.pixel_count(); ++i) {
    if (map.instance[i] != 0 && !classes.is_thing(map.semantic[i])) {
      throw IntegrityError("pixel " + std::to_string(i) + " has instance id " +
                           std::to_string(map.instance[i]) + " on non-thing class " +
                           std::to_string(map.semantic[i]));
    }
  }
}

}  // namespace vps
