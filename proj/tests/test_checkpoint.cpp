// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "gpic/checkpoint.hpp"
#include "gpic/network.hpp"
#include "gpic/rng.hpp"

using namespace gpic;
namespace fs = std::filesystem;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.C = 2;
  cfg.depth = 2;
  cfg.D = 8;
  cfg.image_size = 16;
  cfg.fourier_seed = 3;
  return cfg;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("container round-trip is bitwise identical") {
  DenoiserModel m(tiny_config(), 77);
  Checkpoint ckpt = checkpoint_from_model(m, 1000, 2.25, 123, {{"note", "x"}});
  auto bytes = serialize_checkpoint(ckpt);
  Checkpoint back = parse_checkpoint(bytes.data(), bytes.size());
  auto bytes2 = serialize_checkpoint(back);
  CHECK(bytes == bytes2);
  CHECK(back.meta("C") == "2");
  CHECK(back.meta_int("T") == 1000);
  CHECK(back.meta_double("lambda") == 2.25);
  CHECK(back.meta_int("step") == 123);
  CHECK(back.meta("note") == "x");
}

TEST_CASE("model round-trip restores every parameter bitwise") {
  DenoiserModel m(tiny_config(), 78);
  // Make parameters distinctive (head is zero-initialized otherwise).
  Rng rng(5);
  for (auto& [name, t] : m.parameters())
    for (auto& v : t.values_mut()) v = static_cast<float>(rng.normal());
  Checkpoint ckpt = checkpoint_from_model(m, 500, 1.75, 42);
  auto bytes = serialize_checkpoint(ckpt);
  DenoiserModel back = model_from_checkpoint(parse_checkpoint(bytes.data(), bytes.size()));

  REQUIRE(back.parameters().size() == m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    CHECK(back.parameters()[i].first == m.parameters()[i].first);
    auto a = m.parameters()[i].second.values();
    auto b = back.parameters()[i].second.values();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  }
  auto fa = m.fourier_b().values();
  auto fb = back.fourier_b().values();
  CHECK(std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(float)) == 0);

  // Same outputs on the same input.
  Rng xr(9);
  Tensor x = Tensor::zeros({1, 3, 16, 16});
  Tensor line = Tensor::zeros({1, 1, 16, 16});
  xr.normal_fill(x.values_mut());
  xr.normal_fill(line.values_mut());
  Tensor o1 = m.predict_eps(x, 0.5, line);
  Tensor o2 = back.predict_eps(x, 0.5, line);
  CHECK(std::memcmp(o1.values().data(), o2.values().data(), o1.values().size() * sizeof(float)) ==
        0);
}

TEST_CASE("rejects foreign and damaged files") {
  DenoiserModel m(tiny_config(), 79);
  auto bytes = serialize_checkpoint(checkpoint_from_model(m, 10, 2.25, 0));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(parse_checkpoint(bad_magic.data(), bad_magic.size()),
                       doctest::Contains("magic"), std::runtime_error);

  auto bad_version = bytes;
  bad_version[4] = 99;
  CHECK_THROWS_WITH_AS(parse_checkpoint(bad_version.data(), bad_version.size()),
                       doctest::Contains("version"), std::runtime_error);

  CHECK_THROWS_AS(parse_checkpoint(bytes.data(), bytes.size() - 5), std::runtime_error);

  // Unsupported dtype code: minimal hand-built file.
  std::vector<std::uint8_t> tiny = {'G', 'P', 'I', 'C', 1, 0, 0, 0, 0, 0, 0, 0,
                                    1, 0, 0, 0, 't', 0, 0, 0, 0, 5, 0, 0, 0};
  CHECK_THROWS_WITH_AS(parse_checkpoint(tiny.data(), tiny.size()), doctest::Contains("dtype"),
                       std::runtime_error);
}

TEST_CASE("file save and load") {
  const fs::path dir = fs::temp_directory_path() / "gpic_ckpt_test";
  fs::create_directories(dir);
  DenoiserModel m(tiny_config(), 80);
  Checkpoint ckpt = checkpoint_from_model(m, 1000, 2.25, 7);
  const fs::path p = dir / "model.gpic";
  save_checkpoint(ckpt, p);
  Checkpoint back = load_checkpoint(p);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ckpt));
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.gpic"), std::runtime_error);
  for (const auto& e : fs::directory_iterator(dir))
    CHECK(e.path().string().find(".tmp") == std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("missing tensors are reported by name") {
  DenoiserModel m(tiny_config(), 81);
  Checkpoint ckpt = checkpoint_from_model(m, 10, 2.25, 0);
  ckpt.tensors.erase(ckpt.tensors.begin() + 3);
  const std::string dropped = "enc.down0.w";
  try {
    model_from_checkpoint(ckpt);
    FAIL("expected a missing-tensor error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("missing tensor") != std::string::npos);
  }
}

}  // TEST_SUITE
