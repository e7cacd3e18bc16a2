// Command-line front end: train, compress, decompress, eval, sweep, inspect.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "wdsc/checkpoint.hpp"
#include "wdsc/data.hpp"
#include "wdsc/evaluate.hpp"
#include "wdsc/image_io.hpp"
#include "wdsc/train.hpp"

using namespace wdsc;

namespace {

void report_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

int run_train(const std::string& config_path, const std::string& out, const std::string& log, bool quiet) {
  TrainConfig cfg = load_train_config(config_path);
  if (!out.empty()) cfg.checkpoint = out;
  if (!log.empty()) cfg.log = log;
  if (cfg.checkpoint.empty()) throw std::invalid_argument("no checkpoint path: set \"checkpoint\" or pass --out");
  std::vector<std::string> warnings;
  const TrainData data = load_train_data(cfg, &warnings);
  report_warnings(warnings);
  const auto result = train(cfg, data, [&](const LogRow& r) {
    if (!quiet)
      std::printf("iter %zu loss %.5f R_x %.5f D_x %.6f R_y %.5f D_y %.6f R_w %.5f lr %g\n", r.iter, r.v.loss,
                  r.v.R_x, r.v.D_x, r.v.R_y, r.v.D_y, r.v.R_w, r.lr);
  });
  std::printf("checkpoint %s id %016llx validation loss %.6f -> %.6f\n", cfg.checkpoint.c_str(),
              static_cast<unsigned long long>(result.model.checkpoint_id()), result.initial_validation_loss,
              result.final_validation_loss);
  return 0;
}

WynerModel<float> load_frozen(const std::string& path) {
  auto model = load_checkpoint<float>(path);
  if (!model.has_tables()) throw std::runtime_error("checkpoint " + path + " has no frozen coding tables");
  return model;
}

int run_compress(const std::string& ckpt, const std::string& input, const std::string& out) {
  const auto model = load_frozen(ckpt);
  const Bitstream b = compress(model, load_image<float>(input));
  write_file(out, pack(b));
  std::printf("%s: %zu payload bytes, %.6f bpp\n", out.c_str(), b.payload_bytes(), bits_per_pixel(b));
  return 0;
}

int run_decompress(const std::string& ckpt, const std::string& side, const std::string& input,
                   const std::string& out, DecodeMode mode) {
  const auto model = load_frozen(ckpt);
  const Bitstream b = unpack(read_file(input));
  save_image(out, decompress(model, b, load_image<float>(side), mode));
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& dataset, const std::string& out, bool kitti,
             bool zero_side) {
  const auto model = load_frozen(ckpt);
  LoadOptions lo;
  lo.kitti = kitti;
  lo.multiple = model.config().size_multiple();
  const LoadResult data = load_pairs(dataset, lo);
  report_warnings(data.warnings);
  if (!data.pairs.empty() && (data.pairs[0].left.dim(1) < msssim_min_size() || data.pairs[0].left.dim(2) < msssim_min_size()))
    std::cerr << "warning: images smaller than " << msssim_min_size() << " px per side; msssim column is nan\n";
  const auto pts = evaluate(model, data.pairs, zero_side ? SideInput::kZero : SideInput::kTrue);
  write_rd_csv(out, pts);
  const RdPoint m = mean_point(pts);
  std::printf("%zu pairs: mean bpp %.6f psnr %.4f msssim %.6f\n", pts.size(), m.bpp, m.psnr, m.msssim);
  return 0;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad number '" + item + "' in list");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty lambda list");
  return out;
}

int run_sweep(const std::string& config_path, const std::string& lambdas, const std::string& out,
              const std::string& dataset, bool kitti, std::size_t test_pairs, const std::string& ckpt_dir,
              bool quiet) {
  const TrainConfig base = load_train_config(config_path);
  std::vector<std::string> warnings;
  const TrainData data = load_train_data(base, &warnings);
  report_warnings(warnings);
  PairList test;
  if (dataset.empty()) {
    SynthOptions o;
    o.height = base.data.height;
    o.width = base.data.width;
    test = synth_pairs(base.data.synth_seed ^ 0x7e57ULL, test_pairs, o);
  } else {
    LoadOptions lo;
    lo.kitti = kitti;
    lo.multiple = base.model.size_multiple();
    LoadResult r = load_pairs(dataset, lo);
    report_warnings(r.warnings);
    test = std::move(r.pairs);
    if (test_pairs && test.size() > test_pairs) test.resize(test_pairs);
  }
  if (test.empty()) throw std::runtime_error("no evaluation pairs");
  std::vector<RdPoint> curve;
  const auto grid = parse_list(lambdas);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    TrainConfig cfg = base;
    cfg.model.lambda = grid[k];
    cfg.model.lambda_id = static_cast<std::uint16_t>(k);
    cfg.log.clear();
    cfg.checkpoint = ckpt_dir.empty() ? "" : ckpt_dir + "/lambda" + std::to_string(k) + ".wdck";
    const auto res = train(cfg, data);
    const RdPoint m = mean_point(evaluate(res.model, test));
    curve.push_back(m);
    if (!quiet) std::printf("lambda %g: bpp %.6f psnr %.4f msssim %.6f\n", grid[k], m.bpp, m.psnr, m.msssim);
  }
  write_rd_csv(out, curve);
  return 0;
}

int run_synth(const std::string& out, std::size_t count, std::uint64_t seed, std::size_t h, std::size_t w) {
  SynthOptions o;
  o.height = h;
  o.width = w;
  save_pairs(out, synth_pairs(seed, count, o));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned stereo image compression with decoder-side common information"};
  app.require_subcommand(1);

  std::string config, out, log, ckpt, input, side, dataset, lambdas, ckpt_dir, mode = "common";
  bool quiet = false, kitti = false, zero_side = false;
  std::size_t test_pairs = 64, count = 64, height = 32, width = 64;
  std::uint64_t seed = 1;

  auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
  train_cmd->add_option("--config", config, "training config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "checkpoint path (overrides config)");
  train_cmd->add_option("--log", log, "CSV log path (overrides config)");
  train_cmd->add_flag("--quiet", quiet, "no per-iteration progress");

  auto* compress_cmd = app.add_subcommand("compress", "encode an image");
  compress_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  compress_cmd->add_option("--input", input, "PNG to encode")->required()->check(CLI::ExistingFile);
  compress_cmd->add_option("--out", out, "bitstream path")->required();

  auto* decompress_cmd = app.add_subcommand("decompress", "decode with the side image");
  decompress_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  decompress_cmd->add_option("--side", side, "side image PNG")->required()->check(CLI::ExistingFile);
  decompress_cmd->add_option("--input", input, "bitstream")->required()->check(CLI::ExistingFile);
  decompress_cmd->add_option("--out", out, "reconstruction PNG")->required();

  auto* eval_cmd = app.add_subcommand("eval", "rate-distortion of every pair in a folder");
  eval_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", dataset, "folder of stereo pairs")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", out, "CSV path")->required();
  eval_cmd->add_flag("--kitti", kitti, "crop 370x740 and resize to 128x256 first");
  eval_cmd->add_flag("--zero-side", zero_side, "decode with a zero side image");

  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate one model per lambda");
  sweep_cmd->add_option("--config", config, "base training config")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--lambdas", lambdas, "comma-separated lambda values")->required();
  sweep_cmd->add_option("--out", out, "CSV path")->required();
  sweep_cmd->add_option("--dataset", dataset, "evaluation folder (default: synthetic test pairs)");
  sweep_cmd->add_flag("--kitti", kitti, "KITTI preprocessing for the evaluation folder");
  sweep_cmd->add_option("--test-pairs", test_pairs, "number of evaluation pairs");
  sweep_cmd->add_option("--ckpt-dir", ckpt_dir, "keep one checkpoint per lambda here");
  sweep_cmd->add_flag("--quiet", quiet);

  auto* inspect_cmd = app.add_subcommand("inspect", "decode only the common or only the private part");
  inspect_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--side", side)->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--input", input)->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--mode", mode)->check(CLI::IsMember({"common", "private"}));
  inspect_cmd->add_option("--out", out, "image PNG")->required();

  auto* synth_cmd = app.add_subcommand("synth", "write synthetic stereo pairs as PNGs");
  synth_cmd->add_option("--out", out, "output folder")->required();
  synth_cmd->add_option("--count", count);
  synth_cmd->add_option("--seed", seed);
  synth_cmd->add_option("--height", height);
  synth_cmd->add_option("--width", width);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(config, out, log, quiet);
    if (*compress_cmd) return run_compress(ckpt, input, out);
    if (*decompress_cmd) return run_decompress(ckpt, side, input, out, DecodeMode::kFull);
    if (*eval_cmd) return run_eval(ckpt, dataset, out, kitti, zero_side);
    if (*sweep_cmd) return run_sweep(config, lambdas, out, dataset, kitti, test_pairs, ckpt_dir, quiet);
    if (*inspect_cmd)
      return run_decompress(ckpt, side, input, out, mode == "common" ? DecodeMode::kCommon : DecodeMode::kPrivate);
    if (*synth_cmd) return run_synth(out, count, seed, height, width);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
