// Training loop: AMSGrad on the weighted rate-distortion loss, plateau
// schedule on a held-out validation slice, CSV logging, and checkpoints.
#pragma once

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wdsc/checkpoint.hpp"
#include "wdsc/data.hpp"
#include "wdsc/optimizer.hpp"
#include "wdsc/wyner_model.hpp"

namespace wdsc {

struct DataConfig {
  // Either synthetic pairs or a folder of PNG pairs.
  std::string dataset;          // empty = synthetic
  bool kitti = false;
  std::size_t synth_count = 256;
  std::uint64_t synth_seed = 7;
  std::size_t height = 32, width = 64;
  std::size_t validation_pairs = 16;  // synthetic only; folders use split_pairs
};

struct TrainConfig {
  ModelConfig model;
  DataConfig data;
  double lr = 1e-4;
  double lr_floor = 1e-7;
  std::size_t plateau_patience = 3;
  std::size_t max_iters = 2000;
  std::size_t batch_size = 1;
  std::size_t validate_every = 500;
  std::size_t log_every = 50;
  std::string checkpoint;  // output path, optional
  std::string log;         // CSV path, optional

  void validate() const {
    model.validate();
    if (!(lr > 0) || !(lr_floor > 0) || lr_floor > lr) throw std::invalid_argument("need 0 < lr_floor <= lr");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (plateau_patience == 0) throw std::invalid_argument("plateau_patience must be >= 1");
    if (validate_every == 0 || log_every == 0) throw std::invalid_argument("cadences must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <class V>
void take(const nlohmann::json& j, const char* key, V& out, std::set<std::string>& seen) {
  if (j.contains(key)) {
    j.at(key).get_to(out);
    seen.insert(key);
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& seen, const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!seen.count(key)) throw std::invalid_argument("unknown key '" + key + "' in " + where);
}

}  // namespace detail

inline TrainConfig parse_train_config(const nlohmann::json& j) {
  TrainConfig c;
  std::set<std::string> seen;
  std::string variant = to_string(c.model.variant), metric = to_string(c.model.metric);
  detail::take(j, "variant", variant, seen);
  detail::take(j, "metric", metric, seen);
  c.model.variant = parse_variant(variant);
  c.model.metric = parse_metric(metric);
  detail::take(j, "channels", c.model.channels, seen);
  detail::take(j, "common_channels", c.model.common_channels, seen);
  detail::take(j, "lambda", c.model.lambda, seen);
  detail::take(j, "alpha", c.model.alpha, seen);
  detail::take(j, "beta", c.model.beta, seen);
  detail::take(j, "lambda_id", c.model.lambda_id, seen);
  detail::take(j, "seed", c.model.seed, seen);
  detail::take(j, "lr", c.lr, seen);
  detail::take(j, "lr_floor", c.lr_floor, seen);
  detail::take(j, "plateau_patience", c.plateau_patience, seen);
  detail::take(j, "max_iters", c.max_iters, seen);
  detail::take(j, "batch_size", c.batch_size, seen);
  detail::take(j, "validate_every", c.validate_every, seen);
  detail::take(j, "log_every", c.log_every, seen);
  detail::take(j, "checkpoint", c.checkpoint, seen);
  detail::take(j, "log", c.log, seen);
  if (j.contains("data")) {
    seen.insert("data");
    const auto& d = j.at("data");
    std::set<std::string> dseen;
    detail::take(d, "dataset", c.data.dataset, dseen);
    detail::take(d, "kitti", c.data.kitti, dseen);
    detail::take(d, "synth_count", c.data.synth_count, dseen);
    detail::take(d, "synth_seed", c.data.synth_seed, dseen);
    detail::take(d, "height", c.data.height, dseen);
    detail::take(d, "width", c.data.width, dseen);
    detail::take(d, "validation_pairs", c.data.validation_pairs, dseen);
    detail::reject_unknown(d, dseen, "data section");
  }
  detail::reject_unknown(j, seen, "training config");
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_train_config(j);
}

// ---------------------------------------------------------------------------

struct TrainData {
  PairList train, validation;
};

inline TrainData load_train_data(const TrainConfig& cfg, std::vector<std::string>* warnings = nullptr) {
  TrainData out;
  if (cfg.data.dataset.empty()) {
    SynthOptions o;
    o.height = cfg.data.height;
    o.width = cfg.data.width;
    out.train = synth_pairs(cfg.data.synth_seed, cfg.data.synth_count, o);
    out.validation = synth_pairs(cfg.data.synth_seed ^ 0x5eedULL, cfg.data.validation_pairs, o);
    return out;
  }
  LoadOptions lo;
  lo.kitti = cfg.data.kitti;
  lo.multiple = cfg.model.size_multiple();
  LoadResult r = load_pairs(cfg.data.dataset, lo);
  if (warnings) *warnings = r.warnings;
  Split s = split_pairs(std::move(r.pairs));
  out.train = std::move(s.train);
  out.validation = std::move(s.validation);
  if (out.train.empty()) throw std::runtime_error("dataset " + cfg.data.dataset + " has no usable training pairs");
  if (out.validation.empty()) out.validation.push_back(out.train.back());
  return out;
}

struct LogRow {
  std::size_t iter;
  LossValues v;
  double lr;
};

struct TrainResult {
  WynerModel<float> model;
  std::vector<std::uint8_t> checkpoint;  // finalized bytes
  std::vector<LogRow> log;
  std::vector<double> validation_losses;
  double initial_validation_loss = 0;
  double final_validation_loss = 0;
  double final_lr = 0;
};

// Mean loss over pairs with a fixed noise stream, so repeated evaluations of
// the same weights agree exactly.
inline LossValues validation_loss(const WynerModel<float>& model, const PairList& pairs, std::uint64_t seed) {
  Rng rng(seed);
  LossValues mean;
  for (const auto& p : pairs) {
    const auto v = values_of(model.forward_train(p.left, p.right, rng));
    mean.loss += v.loss;
    mean.R_x += v.R_x;
    mean.D_x += v.D_x;
    mean.R_y += v.R_y;
    mean.D_y += v.D_y;
    mean.R_w += v.R_w;
    mean.R_zx += v.R_zx;
    mean.R_zy += v.R_zy;
  }
  const double n = double(std::max<std::size_t>(pairs.size(), 1));
  for (double* f : {&mean.loss, &mean.R_x, &mean.D_x, &mean.R_y, &mean.D_y, &mean.R_w, &mean.R_zx, &mean.R_zy}) *f /= n;
  return mean;
}

inline void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "iter,loss,R_x,D_x,R_y,D_y,R_w,lr\n";
  out.precision(9);
  for (const auto& r : rows)
    out << r.iter << ',' << r.v.loss << ',' << r.v.R_x << ',' << r.v.D_x << ',' << r.v.R_y << ',' << r.v.D_y << ','
        << r.v.R_w << ',' << r.lr << '\n';
  if (!out) throw std::runtime_error("cannot write log " + path.string());
}

using ProgressFn = std::function<void(const LogRow&)>;

inline TrainResult train(const TrainConfig& cfg, const TrainData& data, const ProgressFn& progress = {}) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("no training pairs");
  const PairList& val = data.validation.empty() ? data.train : data.validation;
  TrainResult res;
  res.model = WynerModel<float>(cfg.model);
  WynerModel<float>& model = res.model;
  AmsGrad<float> opt(model.parameters());
  PlateauSchedule schedule(cfg.lr, cfg.lr_floor, cfg.plateau_patience);
  Rng rng(cfg.model.seed ^ 0x7a41ULL);
  const std::uint64_t val_seed = cfg.model.seed ^ 0xa11dULL;

  res.initial_validation_loss = validation_loss(model, val, val_seed).loss;
  std::vector<std::uint8_t> last_good = serialize(model);

  std::vector<std::size_t> order(data.train.size());
  std::size_t cursor = order.size();
  auto next_pair = [&]() -> const StereoPair<float>& {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cursor = 0;
    }
    return data.train[order[cursor++]];
  };

  auto diverge = [&](const std::string& why, std::size_t iter) {
    if (!cfg.checkpoint.empty()) write_file(cfg.checkpoint, last_good);
    if (!cfg.log.empty()) write_log_csv(cfg.log, res.log);
    throw DivergenceError("training diverged at iteration " + std::to_string(iter) + ": " + why +
                          (cfg.checkpoint.empty() ? "" : "; last good weights written to " + cfg.checkpoint));
  };

  LossValues running;
  std::size_t running_n = 0;
  for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& pair = next_pair();
      const auto out = model.forward_train(pair.left, pair.right, rng);
      const LossValues v = values_of(out);
      if (!std::isfinite(v.loss)) diverge("loss is not finite", iter);
      backward(out.loss);
      running.loss += v.loss;
      running.R_x += v.R_x;
      running.D_x += v.D_x;
      running.R_y += v.R_y;
      running.D_y += v.D_y;
      running.R_w += v.R_w;
      ++running_n;
    }
    try {
      opt.step(schedule.lr(), 1.0 / double(cfg.batch_size));
    } catch (const DivergenceError& e) {
      diverge(e.what(), iter);
    }
    if (iter % cfg.log_every == 0 || iter == cfg.max_iters) {
      const double n = double(running_n);
      LogRow row{iter,
                 {running.loss / n, running.R_x / n, running.D_x / n, running.R_y / n, running.D_y / n,
                  running.R_w / n, 0, 0},
                 schedule.lr()};
      res.log.push_back(row);
      if (progress) progress(row);
      running = {};
      running_n = 0;
    }
    if (iter % cfg.validate_every == 0 || iter == cfg.max_iters) {
      const double vl = validation_loss(model, val, val_seed).loss;
      if (!std::isfinite(vl)) diverge("validation loss is not finite", iter);
      res.validation_losses.push_back(vl);
      schedule.observe(vl);
      last_good = serialize(model);
    }
  }
  res.final_validation_loss = res.validation_losses.empty() ? res.initial_validation_loss : res.validation_losses.back();
  res.final_lr = schedule.lr();
  res.checkpoint = finalize(model);
  if (!cfg.checkpoint.empty()) write_file(cfg.checkpoint, res.checkpoint);
  if (!cfg.log.empty()) write_log_csv(cfg.log, res.log);
  return res;
}

}  // namespace wdsc
