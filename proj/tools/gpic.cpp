// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gpic/checkpoint.hpp"
#include "gpic/config.hpp"
#include "gpic/dataprep.hpp"
#include "gpic/diversity.hpp"
#include "gpic/sampler.hpp"
#include "gpic/schedule.hpp"
#include "gpic/trainer.hpp"

namespace fs = std::filesystem;
using namespace gpic;

namespace {

int thread_cap() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  int cap = static_cast<int>(hw);
  if (const char* env = std::getenv("GPIC_THREADS")) {
    int v = 0;
    const auto res = std::from_chars(env, env + std::string(env).size(), v);
    if (res.ec == std::errc() && v >= 1) cap = std::min(cap, v);
  }
  return cap;
}

struct PrepareArgs {
  int count = 0;
  int resolution = 32;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_prepare(const PrepareArgs& args) {
  SynthesisOptions opt;
  opt.count = args.count;
  opt.resolution = args.resolution;
  opt.seed = args.seed;
  const DatasetManifest manifest = generate_synthetic(opt, args.out);
  std::cout << "prepared " << manifest.pairs.size() << " image pairs at " << args.out
            << " (manifest.tsv)\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : load_run_config(args.config);
  if (args.epochs) cfg.trainer.epochs = *args.epochs;
  if (args.seed) cfg.trainer.seed = *args.seed;

  const Dataset data = load_dataset(args.data);
  const DatasetManifest manifest = load_manifest(args.data);
  if (manifest.resolution != cfg.network.image_size)
    throw std::runtime_error("dataset resolution " + std::to_string(manifest.resolution) +
                             " does not match configured image_size " +
                             std::to_string(cfg.network.image_size));

  DenoiserModel model(cfg.network, cfg.trainer.seed);
  Trainer trainer(model, cfg.trainer);
  const TrainResult result = trainer.train(data, args.out);
  write_file_atomic(fs::path(args.out) / "config.txt", render_run_config(cfg));

  std::cout << "trained " << result.steps << " steps, final loss " << result.final_train_loss
            << "\n";
  std::cout << "final checkpoint: " << result.final_path.string() << "\n";
  if (result.best_val_loss)
    std::cout << "best validation loss " << *result.best_val_loss << ": "
              << result.best_path.string() << "\n";
  return 0;
}

struct SampleArgs {
  std::string checkpoint;
  std::string checkpoint_fine;
  int switch_at = 40;
  std::string line;
  int n = 1;
  std::uint64_t seed = 0;
  std::string bias;
  int corrector = 0;
  std::string mask_rgb;
  std::string mask_alpha;
  std::string out;
  bool trace = false;
};

Tensor load_line_image(const std::string& path, int image_size) {
  ImageBuffer img = load_image(path);
  if (img.channels != 1) img = to_grayscale(img);
  if (img.width != image_size || img.height != image_size)
    throw std::runtime_error("line image " + path + " is " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + " but the model expects " +
                             std::to_string(image_size) + "x" + std::to_string(image_size));
  return image_to_tensor(img);
}

MaskedTarget load_mask(const std::string& rgb_path, const std::string& alpha_path,
                       int image_size) {
  MaskedTarget target;
  ImageBuffer rgb = load_image(rgb_path);
  if (rgb.channels != 3)
    throw std::runtime_error("mask image " + rgb_path + " must have 3 channels, found " +
                             std::to_string(rgb.channels));
  if (rgb.width != image_size || rgb.height != image_size)
    throw std::runtime_error("mask image " + rgb_path + " must be " +
                             std::to_string(image_size) + "x" + std::to_string(image_size));
  target.v_rgb = image_to_tensor(rgb);

  ImageBuffer alpha = load_image(alpha_path);
  if (alpha.channels != 1) alpha = to_grayscale(alpha);
  if (alpha.width != image_size || alpha.height != image_size)
    throw std::runtime_error("mask alpha " + alpha_path + " must be " +
                             std::to_string(image_size) + "x" + std::to_string(image_size));
  target.v_alpha = Tensor::zeros({1, image_size, image_size});
  auto av = target.v_alpha.values_mut();
  for (std::size_t i = 0; i < alpha.data.size(); ++i)
    av[i] = static_cast<float>(alpha.data[i] / 255.0);
  return target;
}

std::array<double, 3> parse_bias(const std::string& text) {
  std::array<double, 3> bias{};
  std::istringstream in(text);
  std::string part;
  int i = 0;
  while (std::getline(in, part, ',')) {
    if (i >= 3) throw std::runtime_error("bias must be R,G,B");
    bias[static_cast<std::size_t>(i++)] = std::stod(part);
  }
  if (i != 3) throw std::runtime_error("bias must be R,G,B");
  return bias;
}

int cmd_sample(const SampleArgs& args) {
  const Checkpoint coarse_ckpt = load_checkpoint(args.checkpoint);
  const DenoiserModel coarse = model_from_checkpoint(coarse_ckpt);
  const int t_max = coarse_ckpt.meta_int("T");
  const double lambda = coarse_ckpt.meta_double("lambda");
  const int image_size = coarse_ckpt.meta_int("image_size");
  const Schedule schedule = build_schedule(t_max, lambda);

  std::optional<DenoiserModel> fine;
  if (!args.checkpoint_fine.empty()) {
    const Checkpoint fine_ckpt = load_checkpoint(args.checkpoint_fine);
    if (fine_ckpt.meta_int("image_size") != image_size)
      throw std::runtime_error("fine checkpoint resolution " +
                               std::to_string(fine_ckpt.meta_int("image_size")) +
                               " does not match coarse resolution " +
                               std::to_string(image_size));
    fine.emplace(model_from_checkpoint(fine_ckpt));
    if (args.switch_at < 1 || args.switch_at >= t_max)
      throw std::runtime_error("switch-at " + std::to_string(args.switch_at) +
                               " must be in [1, " + std::to_string(t_max - 1) + "]");
  }

  SamplerRun base;
  base.schedule = &schedule;
  base.models = {{&coarse, t_max}};
  if (fine) base.models.push_back({&*fine, args.switch_at});
  base.line = load_line_image(args.line, image_size);
  base.corrector_iterations = args.corrector;
  if (!args.bias.empty()) base.bias_color = parse_bias(args.bias);
  if (!args.mask_rgb.empty())
    base.masked_target = load_mask(args.mask_rgb, args.mask_alpha, image_size);

  fs::create_directories(args.out);
  const int workers = std::max(1, std::min(args.n, thread_cap()));
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::string error_message;
  std::mutex error_mutex;

  auto work = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= args.n || failed.load()) break;
      try {
        SamplerRun run = base;
        run.seed = derive_seed(args.seed, seed_salt::kSample, static_cast<std::uint64_t>(i));
        std::ostringstream trace;
        if (args.trace) run.trace = &trace;
        const Tensor image = sample(run);
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04d", i);
        save_image(image, fs::path(args.out) / (std::string(name) + ".png"));
        if (args.trace)
          write_file_atomic(fs::path(args.out) / (std::string(name) + ".jsonl"), trace.str());
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!failed.exchange(true)) error_message = e.what();
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw std::runtime_error(error_message);
  std::cout << "wrote " << args.n << " samples to " << args.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string images_dir;
  std::string extractor = "random-conv";
  std::string out;
  int bins = 20;
  std::uint64_t seed = 0;
  std::string checkpoint;
  bool svg = false;
};

int cmd_eval(const EvalArgs& args) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(args.images_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2)
    throw std::runtime_error("need >= 2 images in " + args.images_dir + ", found " +
                             std::to_string(files.size()));

  std::vector<Tensor> images;
  std::vector<std::string> ids;
  for (const auto& path : files) {
    images.push_back(load_normalized(path));
    ids.push_back(path.filename().string());
    if (images.back().shape() != images.front().shape())
      throw std::runtime_error("image " + ids.back() + " shape differs from " + ids.front());
  }

  std::optional<DenoiserModel> model;
  FeatureExtractor fx = FeatureExtractor::identity_features();
  if (args.extractor == "identity") {
    fx = FeatureExtractor::identity_features();
  } else if (args.extractor == "random-conv") {
    fx = FeatureExtractor::random_conv(args.seed);
  } else {
    if (args.checkpoint.empty())
      throw std::runtime_error("extractor 'trained-encoder' needs --checkpoint");
    model.emplace(model_from_checkpoint(load_checkpoint(args.checkpoint)));
    fx = FeatureExtractor::trained_encoder(*model);
  }

  const DistanceReport report = pairwise_report(images, fx, args.bins, ids);
  fs::create_directories(args.out);
  write_report_csv(report, fs::path(args.out) / "pairs.csv");
  write_histogram_text(report, fs::path(args.out) / "histogram.txt");
  if (args.svg) write_file_atomic(fs::path(args.out) / "histogram.svg", histogram_svg(report));
  std::cout << "evaluated " << report.distances.size() << " pairs, mean distance "
            << report.mean << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"line-drawing colorization with a conditional denoiser"};
  app.require_subcommand(1);

  PrepareArgs prepare;
  CLI::App* prepare_cmd =
      app.add_subcommand("prepare", "generate a synthetic line/color dataset");
  prepare_cmd->add_option("--count", prepare.count, "number of image pairs")
      ->required()
      ->check(CLI::PositiveNumber);
  prepare_cmd->add_option("--resolution", prepare.resolution, "square image size")
      ->check(CLI::Range(4, 4096));
  prepare_cmd->add_option("--seed", prepare.seed, "generator seed");
  prepare_cmd->add_option("--out", prepare.out, "output directory")->required();

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train a denoiser on a dataset");
  train_cmd->add_option("--config", train.config, "key=value config file")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--data", train.data, "dataset manifest path")->required();
  train_cmd->add_option("--out", train.out, "output directory")->required();
  int train_epochs = 0;
  CLI::Option* epochs_opt =
      train_cmd->add_option("--epochs", train_epochs, "override config epochs")
          ->check(CLI::NonNegativeNumber);
  std::uint64_t train_seed = 0;
  CLI::Option* train_seed_opt =
      train_cmd->add_option("--seed", train_seed, "override config seed");

  SampleArgs sampleargs;
  CLI::App* sample_cmd = app.add_subcommand("sample", "draw colorizations for a line image");
  sample_cmd->add_option("--checkpoint", sampleargs.checkpoint, "trained model")
      ->required()
      ->check(CLI::ExistingFile);
  sample_cmd->add_option("--checkpoint-fine", sampleargs.checkpoint_fine,
                         "wide model for the final steps")
      ->check(CLI::ExistingFile);
  sample_cmd->add_option("--switch-at", sampleargs.switch_at,
                         "step at which the fine model takes over")
      ->check(CLI::PositiveNumber);
  sample_cmd->add_option("--line", sampleargs.line, "conditioning line image")
      ->required()
      ->check(CLI::ExistingFile);
  sample_cmd->add_option("--n", sampleargs.n, "number of samples")
      ->required()
      ->check(CLI::PositiveNumber);
  sample_cmd->add_option("--seed", sampleargs.seed, "master seed");
  sample_cmd
      ->add_option("--bias", sampleargs.bias, "initial color bias R,G,B in [-1,1]")
      ->check(CLI::Validator(
          [](std::string& value) -> std::string {
            try {
              const auto bias = parse_bias(value);
              for (double v : bias)
                if (!(v >= -1.0 && v <= 1.0)) return "bias component outside [-1,1]";
            } catch (const std::exception& e) {
              return e.what();
            }
            return "";
          },
          "R,G,B"));
  sample_cmd->add_option("--corrector", sampleargs.corrector,
                         "Langevin refinements per step")
      ->check(CLI::NonNegativeNumber);
  CLI::Option* mask_rgb_opt = sample_cmd->add_option("--mask-rgb", sampleargs.mask_rgb,
                                                     "pinned region colors")
                                  ->check(CLI::ExistingFile);
  CLI::Option* mask_alpha_opt = sample_cmd->add_option("--mask-alpha", sampleargs.mask_alpha,
                                                       "pinned region coverage")
                                    ->check(CLI::ExistingFile);
  mask_rgb_opt->needs(mask_alpha_opt);
  mask_alpha_opt->needs(mask_rgb_opt);
  sample_cmd->add_option("--out", sampleargs.out, "output directory")->required();
  sample_cmd->add_flag("--trace", sampleargs.trace, "write per-sample JSON-lines traces");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "pairwise diversity report for a directory");
  eval_cmd->add_option("--images-dir", eval.images_dir, "directory of images")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--extractor", eval.extractor, "feature extractor")
      ->check(CLI::IsMember({"identity", "random-conv", "trained-encoder"}));
  eval_cmd->add_option("--out", eval.out, "output directory")->required();
  eval_cmd->add_option("--bins", eval.bins, "histogram bins")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval.seed, "random-conv extractor seed");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "model for trained-encoder")
      ->check(CLI::ExistingFile);
  eval_cmd->add_flag("--svg", eval.svg, "also write an SVG bar chart");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << app.help() << std::flush;
    return 2;
  }

  try {
    if (app.got_subcommand(prepare_cmd)) return cmd_prepare(prepare);
    if (app.got_subcommand(train_cmd)) {
      if (*epochs_opt) train.epochs = train_epochs;
      if (*train_seed_opt) train.seed = train_seed;
      return cmd_train(train);
    }
    if (app.got_subcommand(sample_cmd)) return cmd_sample(sampleargs);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(eval);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
