#include "vps/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vps/error.hpp"

VPS_BEGIN_NAMESPACE

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source)
      : bytes_(bytes), source_(source) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError("checkpoint " + source_ + ": truncated at byte " +
                            std::to_string(pos_));
    }
  }

 private:
  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const NamedTensors& entries) {
  std::string out(kCheckpointMagic, kMagicLen);
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, tensor] : entries) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (Real v : tensor.data()) put_f32(out, static_cast<float>(v));
  }
  return out;
}

NamedTensors decode_checkpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kCheckpointMagic) != 0) {
    throw CheckpointError("checkpoint " + source + ": bad magic");
  }
  Reader reader(bytes, source);
  reader.str(kMagicLen);
  const std::uint32_t version = reader.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + source + ": unsupported version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  NamedTensors entries;
  while (!reader.done()) {
    std::string name = reader.str(reader.u32());
    const std::uint32_t rank = reader.u32();
    Shape shape(rank);
    for (auto& d : shape) d = reader.u32();
    const std::size_t n = shape_numel(shape);
    reader.need(n * 4);
    std::vector<Real> values(n);
    for (auto& v : values) v = static_cast<Real>(std::bit_cast<float>(reader.u32()));
    entries.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return entries;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(entries);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

VPS_END_NAMESPACE
