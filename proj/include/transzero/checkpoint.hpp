#pragma once

// Checkpoint file layout (all integers and floats little-endian):
//
//   magic        4 bytes  "TZCK"
//   version      u32      currently 1
//   config_hash  u64      hash of the network-shaping configuration
//   count        u32      number of tensor records
//   count records of:
//     name_len   u32
//     name       name_len bytes (UTF-8, no terminator)
//     rank       u32      always 2
//     dims       rank x u64
//     values     product(dims) x f32, row-major
//
// Values are stored at 32-bit precision regardless of the in-memory scalar, so
// save(load(file)) reproduces the file byte for byte.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "transzero/parameters.hpp"

namespace tz {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::vector<CheckpointRecord> records;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// 64-bit FNV-1a; used for config hashes and weight fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

template <typename Scalar>
Checkpoint make_checkpoint(const ParameterSet<Scalar>& params, std::uint64_t config_hash) {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash;
  for (const auto& p : params) {
    CheckpointRecord r;
    r.name = p.name;
    r.dims = {static_cast<std::uint64_t>(p.value.rows()), static_cast<std::uint64_t>(p.value.cols())};
    r.values.resize(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) r.values[static_cast<std::size_t>(i)] = static_cast<float>(p.value.data()[i]);
    ckpt.records.push_back(std::move(r));
  }
  return ckpt;
}

// Copies checkpoint values into params; names and shapes must match exactly.
template <typename Scalar>
void load_parameters(ParameterSet<Scalar>& params, const Checkpoint& ckpt) {
  if (ckpt.records.size() != params.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(ckpt.records.size()) + " tensors, network expects " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& r = ckpt.records[i];
    auto& p = params[i];
    if (r.name != p.name || r.dims.size() != 2 || r.dims[0] != static_cast<std::uint64_t>(p.value.rows()) ||
        r.dims[1] != static_cast<std::uint64_t>(p.value.cols())) {
      throw DimensionError("checkpoint record " + r.name + " does not match parameter " + p.name + " " +
                           shape_string(p.value));
    }
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = static_cast<Scalar>(r.values[static_cast<std::size_t>(k)]);
  }
}

template <typename Scalar>
std::uint64_t weights_fingerprint(const ParameterSet<Scalar>& params) {
  const auto bytes = encode_checkpoint(make_checkpoint(params, 0));
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace tz
