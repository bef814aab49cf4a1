#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vps/tensor.hpp"

VPS_BEGIN_NAMESPACE

// Binary checkpoint layout (all integers little-endian uint32):
//   "SIAINCKPT" (9 bytes) | version
//   then, repeated until end of file:
//   name length | UTF-8 name | dimension count | dimensions... |
//   float32 little-endian payload, row-major
inline constexpr char kCheckpointMagic[] = "SIAINCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::string encode_checkpoint(const NamedTensors& entries);
NamedTensors decode_checkpoint(const std::string& bytes,
                               const std::string& source = "<memory>");

void save_checkpoint(const std::filesystem::path& path,
                     const NamedTensors& entries);
NamedTensors load_checkpoint(const std::filesystem::path& path);

VPS_END_NAMESPACE
