#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "uamd/data.hpp"

namespace uamd {

struct PngError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// KITTI-style depth PNG: 16-bit single-channel, depth_m = stored / 256,
/// stored 0 = invalid. Rejects anything that is not 16-bit grayscale.
DepthMap decode_depth_png(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_depth_png(const DepthMap& map);

Image decode_rgb_png(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_rgb_png(const Image& img);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace uamd
