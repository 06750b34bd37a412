// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include "gpic/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <stdexcept>

#include "gpic/image.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace gpic {

namespace {

[[noreturn]] void ckpt_fail(const std::string& msg) {
  throw std::runtime_error("checkpoint: " + msg);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const std::size_t at = out.size();
  out.resize(at + 4);
  std::memcpy(out.data() + at, &v, 4);
}

std::uint32_t get_u32(const std::uint8_t* bytes, std::size_t size, std::size_t& pos) {
  if (pos + 4 > size) ckpt_fail("truncated file");
  std::uint32_t v;
  std::memcpy(&v, bytes + pos, 4);
  pos += 4;
  return v;
}

// Shortest decimal form that parses back to the same double.
std::string double_str(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

bool Checkpoint::has_meta(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return true;
  return false;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  ckpt_fail("missing metadata key '" + key + "'");
}

std::int64_t Checkpoint::meta_int(const std::string& key) const {
  const std::string& s = meta(key);
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    ckpt_fail("metadata key '" + key + "' is not an integer: " + s);
  return v;
}

double Checkpoint::meta_double(const std::string& key) const {
  const std::string& s = meta(key);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    ckpt_fail("metadata key '" + key + "' is not a number: " + s);
  return v;
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : metadata)
    if (k == key) {
      v = value;
      return;
    }
  metadata.emplace_back(key, value);
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'G', 'P', 'I', 'C'});
  put_u32(out, ckpt.version);

  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos)
      ckpt_fail("metadata key '" + k + "' contains '=' or newline");
    if (v.find('\n') != std::string::npos)
      ckpt_fail("metadata value for '" + k + "' contains a newline");
    meta += k + "=" + v + "\n";
  }
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());

  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    put_u32(out, 0);  // dtype: float32 little-endian
    const std::size_t at = out.size();
    const std::size_t bytes = t.values().size() * sizeof(float);
    out.resize(at + bytes);
    std::memcpy(out.data() + at, t.values().data(), bytes);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::uint8_t* bytes, std::size_t size) {
  if (size < 8 || std::memcmp(bytes, "GPIC", 4) != 0) ckpt_fail("bad magic, not a checkpoint");
  std::size_t pos = 4;
  Checkpoint ckpt;
  ckpt.version = get_u32(bytes, size, pos);
  if (ckpt.version != kCheckpointVersion)
    ckpt_fail("unsupported format version " + std::to_string(ckpt.version) + " (expected " +
              std::to_string(kCheckpointVersion) + ")");

  const std::uint32_t meta_len = get_u32(bytes, size, pos);
  if (pos + meta_len > size) ckpt_fail("truncated metadata block");
  std::string meta(reinterpret_cast<const char*>(bytes + pos), meta_len);
  pos += meta_len;
  std::size_t line_start = 0;
  while (line_start < meta.size()) {
    std::size_t nl = meta.find('\n', line_start);
    if (nl == std::string::npos) nl = meta.size();
    const std::string line = meta.substr(line_start, nl - line_start);
    line_start = nl + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) ckpt_fail("metadata line without '=': " + line);
    ckpt.metadata.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }

  while (pos < size) {
    const std::uint32_t name_len = get_u32(bytes, size, pos);
    if (pos + name_len > size) ckpt_fail("truncated tensor name");
    std::string name(reinterpret_cast<const char*>(bytes + pos), name_len);
    pos += name_len;
    const std::uint32_t rank = get_u32(bytes, size, pos);
    if (rank > 8) ckpt_fail("implausible tensor rank " + std::to_string(rank));
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = get_u32(bytes, size, pos);
      if (d == 0 || d > (1u << 28)) ckpt_fail("bad dimension in tensor '" + name + "'");
      shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    const std::uint32_t dtype = get_u32(bytes, size, pos);
    if (dtype != 0) ckpt_fail("unsupported dtype code " + std::to_string(dtype));
    const std::size_t data_bytes = static_cast<std::size_t>(numel) * sizeof(float);
    if (pos + data_bytes > size) ckpt_fail("truncated data for tensor '" + name + "'");
    std::vector<float> data(static_cast<std::size_t>(numel));
    std::memcpy(data.data(), bytes + pos, data_bytes);
    pos += data_bytes;
    ckpt.tensors.emplace_back(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  write_file_atomic(path, bytes.data(), bytes.size());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_checkpoint(bytes.data(), bytes.size());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string(e.what()) + " (" + path.string() + ")");
  }
}

Checkpoint checkpoint_from_model(const DenoiserModel& model, int T, double lambda,
                                 std::int64_t step,
                                 const std::vector<std::pair<std::string, std::string>>& extra) {
  const NetworkConfig& cfg = model.config();
  Checkpoint ckpt;
  ckpt.metadata = {
      {"C", std::to_string(cfg.C)},
      {"depth", std::to_string(cfg.depth)},
      {"D", std::to_string(cfg.D)},
      {"fourier_seed", std::to_string(cfg.fourier_seed)},
      {"T", std::to_string(T)},
      {"lambda", double_str(lambda)},
      {"image_size", std::to_string(cfg.image_size)},
      {"step", std::to_string(step)},
  };
  for (const auto& kv : extra) ckpt.set_meta(kv.first, kv.second);
  ckpt.tensors.emplace_back("fourier.b", model.fourier_b().detached());
  for (const auto& [name, t] : model.parameters()) ckpt.tensors.emplace_back(name, t.detached());
  return ckpt;
}

DenoiserModel model_from_checkpoint(const Checkpoint& ckpt) {
  NetworkConfig cfg;
  cfg.C = static_cast<int>(ckpt.meta_int("C"));
  cfg.depth = static_cast<int>(ckpt.meta_int("depth"));
  cfg.D = static_cast<int>(ckpt.meta_int("D"));
  cfg.image_size = static_cast<int>(ckpt.meta_int("image_size"));
  cfg.fourier_seed = static_cast<std::uint64_t>(ckpt.meta_int("fourier_seed"));
  DenoiserModel model(cfg, /*param_seed=*/0);

  auto find = [&ckpt](const std::string& name) -> const Tensor* {
    for (const auto& [n, t] : ckpt.tensors)
      if (n == name) return &t;
    return nullptr;
  };

  const Tensor* fb = find("fourier.b");
  if (!fb) ckpt_fail("missing tensor 'fourier.b'");
  model.set_fourier_b(*fb);

  for (auto& [name, param] : model.parameters()) {
    const Tensor* src = find(name);
    if (!src) ckpt_fail("missing tensor '" + name + "'");
    if (src->shape() != param.shape())
      ckpt_fail("tensor '" + name + "' has shape " + shape_str(src->shape()) + ", expected " +
                shape_str(param.shape()));
    auto dst = param.values_mut();
    std::memcpy(dst.data(), src->values().data(), dst.size() * sizeof(float));
  }
  return model;
}

}  // namespace gpic
