#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "smamba/adam.hpp"
#include "smamba/data.hpp"
#include "smamba/image_io.hpp"
#include "smamba/losses.hpp"
#include "smamba/metrics.hpp"
#include "smamba/self_prior.hpp"
#include "smamba/unet.hpp"

// Training loop (single process, fully seeded) and evaluation pass.

namespace smamba {

struct TrainConfig {
  UNetConfig unet;
  double lr = 1e-4;
  double beta = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t batch_size = 4;
  std::int64_t steps = 1;
  std::int64_t seed = 0;
  std::int64_t checkpoint_every = 500;  // 0 = final checkpoint only
  PerturbConfig perturb;
  std::string data_dir;
  std::string out_dir = "out";
  std::string dtype = "f32";  // f32 | f64
  std::int64_t extractor_seed = 77;
  std::string extractor_pack;  // optional SRT weight pack for the loss net
  bool deterministic = true;

  void validate() const {
    unet.validate();
    if (lr <= 0) throw DataError("config: lr must be > 0");
    if (beta < 0) throw DataError("config: beta must be >= 0");
    if (steps < 1) throw DataError("config: steps must be >= 1");
    if (batch_size < 1) throw DataError("config: batch_size must be >= 1");
    if (checkpoint_every < 0)
      throw DataError("config: checkpoint_every must be >= 0");
    if (dtype != "f32" && dtype != "f64")
      throw DataError("config: dtype must be f32 or f64");
    if (data_dir.empty()) throw DataError("config: data_dir is required");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["unet"] = unet.to_json();
    j["lr"] = lr;
    j["beta"] = beta;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["batch_size"] = batch_size;
    j["steps"] = steps;
    j["seed"] = seed;
    j["checkpoint_every"] = checkpoint_every;
    j["perturb"] = {{"prob", perturb.prob},
                    {"block", perturb.block},
                    {"mode", perturb.mode}};
    j["data_dir"] = data_dir;
    j["out_dir"] = out_dir;
    j["dtype"] = dtype;
    j["extractor_seed"] = extractor_seed;
    j["extractor_pack"] = extractor_pack;
    j["deterministic"] = deterministic;
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("unet")) c.unet = UNetConfig::from_json(j.at("unet"));
    c.lr = j.value("lr", c.lr);
    c.beta = j.value("beta", c.beta);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("perturb")) {
      const auto& p = j.at("perturb");
      c.perturb.prob = p.value("prob", c.perturb.prob);
      c.perturb.block = p.value("block", c.perturb.block);
      c.perturb.mode = p.value("mode", c.perturb.mode);
    }
    c.data_dir = j.value("data_dir", c.data_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.dtype = j.value("dtype", c.dtype);
    c.extractor_seed = j.value("extractor_seed", c.extractor_seed);
    c.extractor_pack = j.value("extractor_pack", c.extractor_pack);
    c.deterministic = j.value("deterministic", c.deterministic);
    return c;
  }
};

struct TrainResult {
  std::vector<double> l1, perceptual, total;  // one entry per step
  std::string final_checkpoint;
};

template <typename T>
TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  DatasetManifest man = DatasetManifest::load(
      join_path(cfg.data_dir, "manifest.json"));
  if (man.train.empty()) throw DataError("train: empty train split");
  std::vector<Tensor<T>> hrs, lrs;
  std::vector<ROISpec> rois;
  for (const auto& ref : man.train) {
    SlicePair p = load_pair(cfg.data_dir, ref, man.scale, true);
    hrs.push_back(cast<T>(p.hr));
    lrs.push_back(cast<T>(p.lr));
    rois.push_back(default_roi(p.lr.size(0), p.lr.size(1)));
  }
  if (man.scale != cfg.unet.scale)
    throw DataError("train: manifest scale " + std::to_string(man.scale) +
                    " != config scale " + std::to_string(cfg.unet.scale));

  std::filesystem::create_directories(cfg.out_dir);
  Model<T> model(cfg.unet, static_cast<std::uint64_t>(cfg.seed));
  Adam<T> opt(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  Rng dropout_rng(cfg.seed, 2), perturb_rng(cfg.seed, 3),
      batch_rng(cfg.seed, 4);
  std::unique_ptr<FeatureExtractor<T>> phi;
  if (cfg.beta > 0)
    phi = cfg.extractor_pack.empty()
              ? std::make_unique<FeatureExtractor<T>>(
                    static_cast<std::uint64_t>(cfg.extractor_seed))
              : std::make_unique<FeatureExtractor<T>>(cfg.extractor_pack);

  std::ofstream log(join_path(cfg.out_dir, "train_log.csv"));
  if (!log) throw DataError("train: cannot write log in " + cfg.out_dir);
  log << "step,l1,perceptual,total,wall_ms,perturb\n";

  TrainResult res;
  const std::int64_t n = static_cast<std::int64_t>(hrs.size());
  for (std::int64_t s = 1; s <= cfg.steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Tensor<T>> sr_batch, hr_batch;
    std::string perturb_col;
    Tape<T> tape;
    typename Tape<T>::Scope scope(&tape);
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      const std::int64_t idx = batch_rng.uniform_int(0, n - 1);
      Tensor<T> lrx = lrs[idx];
      PerturbRecord rec;
      if (cfg.unet.use_self_prior)
        lrx = perturb(lrx, rois[idx], cfg.perturb, perturb_rng, true, &rec);
      if (b) perturb_col += ";";
      perturb_col += perturb_record_str(rec);
      sr_batch.push_back(model.forward(lrx, true, &dropout_rng));
      hr_batch.push_back(hrs[idx]);
    }
    LossParts<T> parts =
        total_loss(sr_batch, hr_batch, cfg.beta, phi.get());
    model.zero_grads();
    tape.backward(parts.total);
    opt.step(model.registry);
    const double l1v = double(parts.l1.item());
    const double pv = double(parts.perceptual.item());
    const double tv = double(parts.total.item());
    if (!std::isfinite(tv))
      throw NumericError("train: loss not finite at step " +
                         std::to_string(s));
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    char row[160];
    std::snprintf(row, sizeof(row), "%lld,%.8g,%.8g,%.8g,%.3f,",
                  static_cast<long long>(s), l1v, pv, tv, ms);
    log << row << perturb_col << "\n";
    log.flush();
    res.l1.push_back(l1v);
    res.perceptual.push_back(pv);
    res.total.push_back(tv);
    if (cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0 &&
        s != cfg.steps) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld.smck",
                    static_cast<long long>(s));
      save_checkpoint(join_path(cfg.out_dir, name), model);
    }
  }
  res.final_checkpoint = join_path(cfg.out_dir, "checkpoint_final.smck");
  save_checkpoint(res.final_checkpoint, model);
  return res;
}

// ---------------------------------------------------------------------------

struct EvalRow {
  std::string slice;
  double psnr_db = 0.0, ssim_score = 0.0;
};

struct EvalResult {
  std::vector<EvalRow> model_rows, bicubic_rows;
  double model_mean_psnr = 0.0, model_mean_ssim = 0.0;
  double bicubic_mean_psnr = 0.0, bicubic_mean_ssim = 0.0;
};

namespace detail {

inline std::string slice_stem(const std::string& rel) {
  std::string s = rel;
  if (const auto pos = s.find_last_of('/'); pos != std::string::npos)
    s = s.substr(pos + 1);
  if (s.size() > 4 && s.substr(s.size() - 4) == ".srt")
    s = s.substr(0, s.size() - 4);
  return s;
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<EvalRow>& rows, double mp,
                              double ms) {
  std::ofstream os(path);
  if (!os) throw DataError("evaluate: cannot write " + path);
  os << "slice,psnr_db,ssim\n";
  for (const auto& r : rows)
    os << r.slice << "," << format_metric(r.psnr_db) << ","
       << format_metric(r.ssim_score) << "\n";
  os << "mean," << format_metric(mp) << "," << format_metric(ms) << "\n";
}

}  // namespace detail

// Runs inference over the test split (no perturbation), scores against HR,
// dumps |SR-HR| error maps and SR previews as PGM, and writes metrics.csv
// plus the bicubic-baseline table metrics_bicubic.csv.
template <typename T>
EvalResult evaluate(const Model<T>& model, const std::string& data_dir,
                    const DatasetManifest& man, const std::string& out_dir) {
  if (man.scale != model.cfg.scale)
    throw DataError("evaluate: manifest scale " + std::to_string(man.scale) +
                    " != checkpoint scale " +
                    std::to_string(model.cfg.scale));
  if (man.test.empty()) throw DataError("evaluate: empty test split");
  std::filesystem::create_directories(out_dir);
  EvalResult res;
  for (const auto& ref : man.test) {
    SlicePair p = load_pair(data_dir, ref, man.scale, true);
    Tensor<double> sr =
        cast<double>(model.forward(cast<T>(p.lr), false));
    Tensor<double> base = clip(bicubic_upscale(p.lr, man.scale), 0.0, 1.0);
    const std::string stem = detail::slice_stem(ref.hr);
    Tensor<double> err(p.hr.shape());
    for (std::int64_t i = 0; i < err.numel(); ++i)
      err.data()[i] = std::abs(sr.data()[i] - p.hr.data()[i]);
    pgm_write(join_path(out_dir, "err_" + stem + ".pgm"), err);
    pgm_write(join_path(out_dir, "sr_" + stem + ".pgm"), sr);
    res.model_rows.push_back({stem, psnr(sr, p.hr), ssim(sr, p.hr)});
    res.bicubic_rows.push_back({stem, psnr(base, p.hr), ssim(base, p.hr)});
  }
  const auto mean_of = [](const std::vector<EvalRow>& rows, bool use_psnr) {
    double acc = 0;
    for (const auto& r : rows) acc += use_psnr ? r.psnr_db : r.ssim_score;
    return acc / double(rows.size());
  };
  res.model_mean_psnr = mean_of(res.model_rows, true);
  res.model_mean_ssim = mean_of(res.model_rows, false);
  res.bicubic_mean_psnr = mean_of(res.bicubic_rows, true);
  res.bicubic_mean_ssim = mean_of(res.bicubic_rows, false);
  detail::write_metrics_csv(join_path(out_dir, "metrics.csv"),
                            res.model_rows, res.model_mean_psnr,
                            res.model_mean_ssim);
  detail::write_metrics_csv(join_path(out_dir, "metrics_bicubic.csv"),
                            res.bicubic_rows, res.bicubic_mean_psnr,
                            res.bicubic_mean_ssim);
  return res;
}

// Reads just enough of a checkpoint to learn its tensor dtype (0 = f32,
// 1 = f64) so the CLI can dispatch the right template instantiation.
inline int checkpoint_dtype(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kCheckpointMagic, 4))
    throw DataError("checkpoint: bad magic in " + path);
  detail::get_u32le(is);
  const std::uint64_t jlen = detail::get_u64le(is);
  is.seekg(static_cast<std::streamoff>(jlen), std::ios::cur);
  detail::get_u32le(is);  // entry count
  const int lo = is.get(), hi = is.get();
  if (lo < 0 || hi < 0) throw DataError("checkpoint: truncated entry");
  is.seekg(lo | (hi << 8), std::ios::cur);
  char smagic[4];
  is.read(smagic, 4);
  const int dtype = is.get();
  if (!is || std::string(smagic, 4) != "SRT1" || (dtype != 0 && dtype != 1))
    throw DataError("checkpoint: malformed tensor entry in " + path);
  return dtype;
}

}  // namespace smamba
