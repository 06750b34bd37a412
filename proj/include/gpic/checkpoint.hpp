// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: "GPIC" magic, u32 version, length-prefixed UTF-8
// key=value metadata, then a tensor table (name, rank, dims, dtype code 0 =
// float32 little-endian, raw data) read to end of file. Round-trips are
// bitwise exact; unknown versions are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gpic/network.hpp"
#include "gpic/tensor.hpp"

namespace gpic {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<std::pair<std::string, std::string>> metadata;  // ordered key=value
  std::vector<std::pair<std::string, Tensor>> tensors;        // ordered

  bool has_meta(const std::string& key) const;
  const std::string& meta(const std::string& key) const;  // throws if absent
  std::int64_t meta_int(const std::string& key) const;
  double meta_double(const std::string& key) const;
  void set_meta(const std::string& key, const std::string& value);
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::uint8_t* bytes, std::size_t size);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Model packaging. Metadata holds the schedule (T, lambda), the training step
// and any extra keys; tensors hold every parameter plus the Fourier vector.
Checkpoint checkpoint_from_model(
    const DenoiserModel& model, int T, double lambda, std::int64_t step,
    const std::vector<std::pair<std::string, std::string>>& extra = {});
DenoiserModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace gpic
