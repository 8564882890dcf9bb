#include "uamd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace uamd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'U', 'A', 'M', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkConfig& cfg,
                     const ParamStore<float>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<uint32_t>(os, kVersion);
  put<uint32_t>(os, static_cast<uint32_t>(cfg.max_disparity));
  put<uint32_t>(os, static_cast<uint32_t>(cfg.feature_scale));
  for (size_t c : cfg.branch_channels) put<uint32_t>(os, static_cast<uint32_t>(c));
  put<uint32_t>(os, static_cast<uint32_t>(cfg.aggregated_channels));
  put<float>(os, cfg.min_disparity_eps);
  put<uint32_t>(os, static_cast<uint32_t>(params.order.size()));
  for (const auto& name : params.order) {
    const auto& t = params.at(name);
    put<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
    for (size_t e : t.shape()) put<uint64_t>(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!os) throw CheckpointError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);
  uint32_t version = get<uint32_t>(is);
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.config.max_disparity = get<uint32_t>(is);
  ckpt.config.feature_scale = get<uint32_t>(is);
  for (size_t i = 0; i < 3; ++i) ckpt.config.branch_channels[i] = get<uint32_t>(is);
  ckpt.config.aggregated_channels = get<uint32_t>(is);
  ckpt.config.min_disparity_eps = get<float>(is);
  ckpt.config.validate();

  uint32_t count = get<uint32_t>(is);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = get<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t ndim = get<uint32_t>(is);
    Shape shape(ndim);
    for (auto& e : shape) e = static_cast<size_t>(get<uint64_t>(is));
    std::vector<float> vals(numel(shape));
    is.read(reinterpret_cast<char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(float)));
    if (!is) throw CheckpointError("checkpoint truncated in " + path);
    for (float v : vals)
      if (!std::isfinite(v)) throw CheckpointError("non-finite parameter " + name);
    ckpt.params.add(name, Tensor<float>::from(shape, std::move(vals), true));
  }
  return ckpt;
}

}  // namespace uamd
