#include "vps/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include "vps/error.hpp"
#include "vps/keyvalue.hpp"
#include "vps/rng.hpp"

namespace vps {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- PNG

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Image decode_png(const std::string& bytes, const std::string& source) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError(source + ": not a readable PNG (" + msg + ")");
  }
  const bool rgb = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (png.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  const bool linear = (png.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  const bool colormap = (png.format & PNG_FORMAT_FLAG_COLORMAP) != 0;
  if (!rgb || alpha || linear || colormap) {
    png_image_free(&png);
    throw FormatError(source + ": expected an 8-bit 3-channel PNG");
  }
  png.format = PNG_FORMAT_RGB;
  Image image(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, image.rgb.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError(source + ": corrupt PNG (" + msg + ")");
  }
  return image;
}

Image read_png(const fs::path& path) { return decode_png(read_file(path), path.string()); }

std::string encode_png(const Image& image) {
  if (image.rgb.size() != image.pixel_count() * 3 || image.width <= 0 || image.height <= 0) {
    throw ShapeError("encode_png: image buffer does not match " + std::to_string(image.width) +
                     "x" + std::to_string(image.height) + "x3");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + png.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

void write_png(const fs::path& path, const Image& image) {
  const std::string bytes = encode_png(image);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

PanopticMap read_panoptic_png(const fs::path& path) { return decode_panoptic(read_png(path)); }

void write_panoptic_png(const fs::path& path, const PanopticMap& map) {
  write_png(path, encode_panoptic(map));
}

// ---------------------------------------------------------------- layout

namespace {

std::string frame_name(std::size_t frame) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.png", frame);
  return buf;
}

}  // namespace

fs::path frame_path(const fs::path& root, const std::string& sequence, std::size_t frame) {
  return root / "images" / sequence / frame_name(frame);
}

fs::path panoptic_path(const fs::path& root, const std::string& sequence, std::size_t frame) {
  return root / "panoptic" / sequence / frame_name(frame);
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::pair<unsigned long long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    const std::string stem = entry.path().stem().string();
    char* end = nullptr;
    const unsigned long long index = std::strtoull(stem.c_str(), &end, 10);
    if (stem.empty() || *end != '\0') {
      throw FormatError(entry.path().string() + ": frame file name is not a frame index");
    }
    found.emplace_back(index, entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> paths;
  paths.reserve(found.size());
  for (auto& [index, path] : found) paths.push_back(std::move(path));
  return paths;
}

std::vector<std::string> list_sequences(const fs::path& root, const std::string& subdir) {
  const fs::path dir = root / subdir;
  if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<PanopticMap> load_panoptic_sequence(const fs::path& root, const std::string& sequence) {
  std::vector<PanopticMap> maps;
  for (const auto& path : list_frames(root / "panoptic" / sequence)) {
    maps.push_back(read_panoptic_png(path));
  }
  return maps;
}

SequenceDataset load_sequence(const fs::path& root, const std::string& sequence,
                              const ClassTable& classes) {
  SequenceDataset ds;
  ds.name = sequence;
  ds.classes = classes;
  for (const auto& path : list_frames(root / "images" / sequence)) {
    ds.frames.push_back(read_png(path));
  }
  ds.annotations = load_panoptic_sequence(root, sequence);
  if (ds.frames.size() != ds.annotations.size()) {
    throw AlignmentError("sequence " + sequence + ": " + std::to_string(ds.frames.size()) +
                         " frames but " + std::to_string(ds.annotations.size()) +
                         " annotations");
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.frames[i].width != ds.annotations[i].width ||
        ds.frames[i].height != ds.annotations[i].height ||
        ds.frames[i].width != ds.frames[0].width || ds.frames[i].height != ds.frames[0].height) {
      throw AlignmentError("sequence " + sequence + ": frame " + std::to_string(i) +
                           " size differs from its annotation or from frame 0");
    }
    validate_panoptic(ds.annotations[i], classes);
  }
  return ds;
}

void save_sequence(const fs::path& root, const SequenceDataset& dataset) {
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    write_png(frame_path(root, dataset.name, i), dataset.frames[i]);
    write_panoptic_png(panoptic_path(root, dataset.name, i), dataset.annotations[i]);
  }
}

// ---------------------------------------------------------------- manifest

std::string serialize_synthetic_config(const SyntheticConfig& cfg) {
  std::ostringstream os;
  os << "width = " << cfg.width << '\n'
     << "height = " << cfg.height << '\n'
     << "frames = " << cfg.frames << '\n'
     << "instances = " << cfg.instances << '\n'
     << "instance_class = " << cfg.instance_class << '\n'
     << "stuff_classes = ";
  for (std::size_t i = 0; i < cfg.stuff_classes.size(); ++i) {
    os << (i ? "," : "") << cfg.stuff_classes[i];
  }
  os << '\n'
     << "min_speed = " << format_double(cfg.min_speed) << '\n'
     << "max_speed = " << format_double(cfg.max_speed) << '\n'
     << "min_size = " << cfg.min_size << '\n'
     << "max_size = " << cfg.max_size << '\n'
     << "disappearances = ";
  for (std::size_t i = 0; i < cfg.disappearances.size(); ++i) {
    const auto& d = cfg.disappearances[i];
    os << (i ? "," : "") << d.instance << ':' << d.first_frame << '-' << d.last_frame;
  }
  os << '\n' << "seed = " << cfg.seed << '\n';
  return os.str();
}

SyntheticConfig parse_synthetic_config(const std::string& text, const std::string& source) {
  const KeyValues kv = KeyValues::parse(text, source);
  const auto unknown = kv.unknown_keys({"width", "height", "frames", "instances",
                                        "instance_class", "stuff_classes", "min_speed",
                                        "max_speed", "min_size", "max_size", "disappearances",
                                        "seed"});
  if (!unknown.empty()) throw ConfigError(source + ": unknown key '" + *unknown.begin() + "'");
  SyntheticConfig cfg;
  cfg.width = static_cast<int>(kv.get_int("width", cfg.width));
  cfg.height = static_cast<int>(kv.get_int("height", cfg.height));
  cfg.frames = static_cast<int>(kv.get_int("frames", cfg.frames));
  cfg.instances = static_cast<int>(kv.get_int("instances", cfg.instances));
  cfg.instance_class = static_cast<std::uint32_t>(kv.get_uint("instance_class", cfg.instance_class));
  cfg.min_speed = kv.get_double("min_speed", cfg.min_speed);
  cfg.max_speed = kv.get_double("max_speed", cfg.max_speed);
  cfg.min_size = static_cast<int>(kv.get_int("min_size", cfg.min_size));
  cfg.max_size = static_cast<int>(kv.get_int("max_size", cfg.max_size));
  cfg.seed = kv.get_uint("seed", cfg.seed);
  if (kv.has("stuff_classes")) {
    cfg.stuff_classes.clear();
    std::istringstream in(kv.get_string("stuff_classes", ""));
    std::string item;
    while (std::getline(in, item, ',')) {
      std::uint32_t id = 0;
      std::istringstream field(item);
      if (!(field >> id)) throw ConfigError(source + ": bad stuff class '" + item + "'");
      cfg.stuff_classes.push_back(id);
    }
  }
  if (kv.has("disappearances")) {
    std::istringstream in(kv.get_string("disappearances", ""));
    std::string item;
    while (std::getline(in, item, ',')) {
      Disappearance d;
      char colon = 0, dash = 0;
      std::istringstream fields(item);
      if (!(fields >> d.instance >> colon >> d.first_frame >> dash >> d.last_frame) ||
          colon != ':' || dash != '-') {
        throw ConfigError(source + ": bad disappearance '" + item +
                          "' (expected instance:first-last)");
      }
      cfg.disappearances.push_back(d);
    }
  }
  return cfg;
}

// ---------------------------------------------------------------- synthetic

namespace {

using Rgb = std::array<int, 3>;

Rgb stuff_color(std::uint32_t semantic_id) {
  switch (semantic_id) {
    case 0: return {128, 64, 128};   // road
    case 2: return {70, 70, 70};     // building
    case 10: return {70, 130, 180};  // sky
    default: {
      const std::uint32_t h = semantic_id * 2654435761u;
      return {static_cast<int>(h & 0xff), static_cast<int>((h >> 8) & 0xff),
              static_cast<int>((h >> 16) & 0xff)};
    }
  }
}

int color_distance(const Rgb& a, const Rgb& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

struct MovingShape {
  std::uint32_t id = 0;
  bool circle = false;
  int size = 0;
  double x = 0, y = 0, vx = 0, vy = 0;
  Rgb color{};
};

void validate(const SyntheticConfig& cfg, const ClassTable& classes) {
  if (cfg.width < 1 || cfg.height < 1) throw ConfigError("synthetic: image size must be positive");
  if (cfg.frames < 1) throw ConfigError("synthetic: frame count must be at least 1");
  if (cfg.instances < 0) throw ConfigError("synthetic: instance count must be non-negative");
  if (cfg.instances >= 65536) throw ConfigError("synthetic: too many instances to encode");
  if (cfg.stuff_classes.empty()) throw ConfigError("synthetic: need at least one stuff class");
  if (static_cast<int>(cfg.stuff_classes.size()) > cfg.height) {
    throw ConfigError("synthetic: more stuff bands than image rows");
  }
  for (auto id : cfg.stuff_classes) {
    if (!classes.contains(id) || classes.is_thing(id)) {
      throw ConfigError("synthetic: " + std::to_string(id) + " is not a stuff class");
    }
  }
  if (cfg.instances > 0 && !classes.is_thing(cfg.instance_class)) {
    throw ConfigError("synthetic: instance class " + std::to_string(cfg.instance_class) +
                      " is not a thing class");
  }
  if (cfg.min_size < 1 || cfg.min_size > cfg.max_size) {
    throw ConfigError("synthetic: need 1 <= min_size <= max_size");
  }
  if (cfg.instances > 0 && cfg.max_size > std::min(cfg.width, cfg.height)) {
    throw ConfigError("synthetic: instance size " + std::to_string(cfg.max_size) +
                      " does not fit a " + std::to_string(cfg.width) + "x" +
                      std::to_string(cfg.height) + " image");
  }
  if (cfg.min_speed < 0 || cfg.min_speed > cfg.max_speed) {
    throw ConfigError("synthetic: need 0 <= min_speed <= max_speed");
  }
  for (const auto& d : cfg.disappearances) {
    if (d.instance < 1 || static_cast<int>(d.instance) > cfg.instances || d.first_frame < 0 ||
        d.last_frame < d.first_frame || d.last_frame >= cfg.frames) {
      throw ConfigError("synthetic: invalid disappearance for instance " +
                        std::to_string(d.instance));
    }
  }
}

bool boxes_overlap(const MovingShape& a, const MovingShape& b) {
  return a.x < b.x + b.size + 1 && b.x < a.x + a.size + 1 && a.y < b.y + b.size + 1 &&
         b.y < a.y + a.size + 1;
}

void advance(MovingShape& s, int width, int height) {
  const double max_x = width - s.size;
  const double max_y = height - s.size;
  s.x += s.vx;
  s.y += s.vy;
  if (s.x < 0) { s.x = -s.x; s.vx = -s.vx; }
  if (s.x > max_x) { s.x = 2 * max_x - s.x; s.vx = -s.vx; }
  if (s.y < 0) { s.y = -s.y; s.vy = -s.vy; }
  if (s.y > max_y) { s.y = 2 * max_y - s.y; s.vy = -s.vy; }
  s.x = std::clamp(s.x, 0.0, max_x);
  s.y = std::clamp(s.y, 0.0, max_y);
}

bool hidden(const SyntheticConfig& cfg, std::uint32_t id, int frame) {
  for (const auto& d : cfg.disappearances) {
    if (d.instance == id && frame >= d.first_frame && frame <= d.last_frame) return true;
  }
  return false;
}

}  // namespace

SequenceDataset generate_synthetic_sequence(const SyntheticConfig& cfg, const ClassTable& classes,
                                            const std::string& name) {
  validate(cfg, classes);
  Rng rng(cfg.seed);

  // Band boundaries, top to bottom.
  const int bands = static_cast<int>(cfg.stuff_classes.size());
  std::vector<int> band_start(bands + 1, 0);
  band_start[bands] = cfg.height;
  const int jitter = cfg.height / (4 * bands);
  for (int k = 1; k < bands; ++k) {
    const int base = k * cfg.height / bands;
    int b = base + static_cast<int>(rng.uniform_int(-jitter, jitter));
    band_start[k] = std::clamp(b, band_start[k - 1] + 1, cfg.height - (bands - k));
  }
  std::vector<Rgb> band_color(bands);
  for (int k = 0; k < bands; ++k) band_color[k] = stuff_color(cfg.stuff_classes[k]);

  std::vector<MovingShape> shapes;
  for (int i = 0; i < cfg.instances; ++i) {
    MovingShape s;
    s.id = static_cast<std::uint32_t>(i + 1);
    s.circle = rng.uniform_int(0, 1) == 1;
    s.size = static_cast<int>(rng.uniform_int(cfg.min_size, cfg.max_size));
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      s.x = static_cast<double>(rng.uniform_int(0, cfg.width - s.size));
      s.y = static_cast<double>(rng.uniform_int(0, cfg.height - s.size));
      placed = std::none_of(shapes.begin(), shapes.end(),
                            [&](const MovingShape& o) { return boxes_overlap(s, o); });
    }
    if (!placed) {
      throw ConfigError("synthetic: cannot place " + std::to_string(cfg.instances) +
                        " non-overlapping instances in a " + std::to_string(cfg.width) + "x" +
                        std::to_string(cfg.height) + " image");
    }
    const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    bool colored = false;
    for (int attempt = 0; attempt < 1000 && !colored; ++attempt) {
      s.color = {static_cast<int>(rng.uniform_int(0, 255)), static_cast<int>(rng.uniform_int(0, 255)),
                 static_cast<int>(rng.uniform_int(0, 255))};
      colored = std::all_of(band_color.begin(), band_color.end(),
                            [&](const Rgb& c) { return color_distance(c, s.color) >= 150; }) &&
                std::all_of(shapes.begin(), shapes.end(), [&](const MovingShape& o) {
                  return color_distance(o.color, s.color) >= 150;
                });
    }
    if (!colored) throw ConfigError("synthetic: cannot pick distinct instance colors");
    shapes.push_back(s);
  }

  SequenceDataset ds;
  ds.name = name;
  ds.classes = classes;
  std::vector<bool> seen(cfg.instances + 1, false);
  for (int t = 0; t < cfg.frames; ++t) {
    if (t > 0) {
      for (auto& s : shapes) advance(s, cfg.width, cfg.height);
    }
    Image frame(cfg.width, cfg.height);
    PanopticMap ann(cfg.width, cfg.height, 0);
    for (int k = 0; k < bands; ++k) {
      for (int y = band_start[k]; y < band_start[k + 1]; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * cfg.width + x;
          ann.semantic[i] = cfg.stuff_classes[k];
          std::uint8_t* px = frame.pixel(x, y);
          for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(band_color[k][c]);
        }
      }
    }
    for (const auto& s : shapes) {
      if (hidden(cfg, s.id, t)) continue;
      const int x0 = static_cast<int>(std::lround(s.x));
      const int y0 = static_cast<int>(std::lround(s.y));
      const double r = s.size / 2.0;
      for (int y = y0; y < y0 + s.size && y < cfg.height; ++y) {
        for (int x = x0; x < x0 + s.size && x < cfg.width; ++x) {
          if (s.circle) {
            const double dx = (x + 0.5) - (x0 + r);
            const double dy = (y + 0.5) - (y0 + r);
            if (dx * dx + dy * dy > r * r) continue;
          }
          const std::size_t i = static_cast<std::size_t>(y) * cfg.width + x;
          ann.semantic[i] = cfg.instance_class;
          ann.instance[i] = s.id;
          std::uint8_t* px = frame.pixel(x, y);
          for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(s.color[c]);
        }
      }
    }
    for (auto inst : ann.instance) seen[inst] = true;
    ds.frames.push_back(std::move(frame));
    ds.annotations.push_back(std::move(ann));
  }
  for (int i = 1; i <= cfg.instances; ++i) {
    if (!seen[i]) {
      throw ConfigError("synthetic: instance " + std::to_string(i) +
                        " is never visible; shorten its disappearance span");
    }
  }
  return ds;
}

}  // namespace vps
