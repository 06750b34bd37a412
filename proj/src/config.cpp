// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include "gpic/config.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include "gpic/image.hpp"

namespace gpic {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void fail(int line_no, const std::string& what) {
  throw std::runtime_error("config: line " + std::to_string(line_no) + ": " + what);
}

template <typename T>
T parse_number(const std::string& value, int line_no, const std::string& key) {
  T out{};
  const char* begin = value.data();
  const char* end = begin + value.size();
  const auto result = std::from_chars(begin, end, out);
  if (result.ec != std::errc() || result.ptr != end)
    fail(line_no, "invalid value '" + value + "' for '" + key + "'");
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(line_no, "empty key");
    if (value.empty()) fail(line_no, "empty value for '" + key + "'");

    if (key == "channels")
      cfg.network.C = parse_number<int>(value, line_no, key);
    else if (key == "depth")
      cfg.network.depth = parse_number<int>(value, line_no, key);
    else if (key == "fourier_dim")
      cfg.network.D = parse_number<int>(value, line_no, key);
    else if (key == "image_size")
      cfg.network.image_size = parse_number<int>(value, line_no, key);
    else if (key == "fourier_seed")
      cfg.network.fourier_seed = parse_number<std::uint64_t>(value, line_no, key);
    else if (key == "T")
      cfg.trainer.T = parse_number<int>(value, line_no, key);
    else if (key == "lambda")
      cfg.trainer.lambda = parse_number<double>(value, line_no, key);
    else if (key == "learning_rate")
      cfg.trainer.opt.learning_rate = parse_number<double>(value, line_no, key);
    else if (key == "beta1")
      cfg.trainer.opt.beta1 = parse_number<double>(value, line_no, key);
    else if (key == "beta2")
      cfg.trainer.opt.beta2 = parse_number<double>(value, line_no, key);
    else if (key == "eps")
      cfg.trainer.opt.eps = parse_number<double>(value, line_no, key);
    else if (key == "weight_decay")
      cfg.trainer.opt.weight_decay = parse_number<double>(value, line_no, key);
    else if (key == "lookahead_alpha")
      cfg.trainer.opt.lookahead_alpha = parse_number<double>(value, line_no, key);
    else if (key == "lookahead_k")
      cfg.trainer.opt.lookahead_k = parse_number<int>(value, line_no, key);
    else if (key == "n_sma_threshold")
      cfg.trainer.opt.n_sma_threshold = parse_number<int>(value, line_no, key);
    else if (key == "batch_size")
      cfg.trainer.batch_size = parse_number<int>(value, line_no, key);
    else if (key == "epochs")
      cfg.trainer.epochs = parse_number<int>(value, line_no, key);
    else if (key == "clip_norm")
      cfg.trainer.clip_norm = parse_number<double>(value, line_no, key);
    else if (key == "val_fraction")
      cfg.trainer.val_fraction = parse_number<double>(value, line_no, key);
    else if (key == "val_interval")
      cfg.trainer.val_interval = parse_number<int>(value, line_no, key);
    else if (key == "checkpoint_interval")
      cfg.trainer.checkpoint_interval = parse_number<int>(value, line_no, key);
    else if (key == "seed")
      cfg.trainer.seed = parse_number<std::uint64_t>(value, line_no, key);
    else
      fail(line_no, "unknown key '" + key + "'");
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

std::string render_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "# network\n";
  out << "channels = " << cfg.network.C << "\n";
  out << "depth = " << cfg.network.depth << "\n";
  out << "fourier_dim = " << cfg.network.D << "\n";
  out << "image_size = " << cfg.network.image_size << "\n";
  out << "fourier_seed = " << cfg.network.fourier_seed << "\n";
  out << "# schedule\n";
  out << "T = " << cfg.trainer.T << "\n";
  out << "lambda = " << format_double(cfg.trainer.lambda) << "\n";
  out << "# optimizer\n";
  out << "learning_rate = " << format_double(cfg.trainer.opt.learning_rate) << "\n";
  out << "beta1 = " << format_double(cfg.trainer.opt.beta1) << "\n";
  out << "beta2 = " << format_double(cfg.trainer.opt.beta2) << "\n";
  out << "eps = " << format_double(cfg.trainer.opt.eps) << "\n";
  out << "weight_decay = " << format_double(cfg.trainer.opt.weight_decay) << "\n";
  out << "lookahead_alpha = " << format_double(cfg.trainer.opt.lookahead_alpha) << "\n";
  out << "lookahead_k = " << cfg.trainer.opt.lookahead_k << "\n";
  out << "n_sma_threshold = " << cfg.trainer.opt.n_sma_threshold << "\n";
  out << "# training\n";
  out << "batch_size = " << cfg.trainer.batch_size << "\n";
  out << "epochs = " << cfg.trainer.epochs << "\n";
  out << "clip_norm = " << format_double(cfg.trainer.clip_norm) << "\n";
  out << "val_fraction = " << format_double(cfg.trainer.val_fraction) << "\n";
  out << "val_interval = " << cfg.trainer.val_interval << "\n";
  out << "checkpoint_interval = " << cfg.trainer.checkpoint_interval << "\n";
  out << "seed = " << cfg.trainer.seed << "\n";
  return out.str();
}

}  // namespace gpic
