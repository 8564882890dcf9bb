#pragma once

#include <string>

#include "uamd/network.hpp"

namespace uamd {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  NetworkConfig config;
  ParamStore<float> params;
};

/// Binary container: magic "UAMDCKPT", u32 version, config block, then
/// (name, shape, f32 values)* — all numeric fields little-endian.
void save_checkpoint(const std::string& path, const NetworkConfig& cfg,
                     const ParamStore<float>& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace uamd
