// Objective, optimizer, frozen feature net, and the training/evaluation
// loops: closed-form losses, an independent feature-distance oracle, Adam
// hand trajectories, dataset round trips, bit-reproducible runs, and the
// artifact files the trainer and evaluator leave behind.

#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "smamba/degrade.hpp"
#include "smamba/phantom.hpp"
#include "smamba/train.hpp"

using namespace smamba;
using testsup::filled;
using testsup::max_abs_diff;
using testsup::pass;
using Td = Tensor<double>;
using Tf = Tensor<float>;
namespace fs = std::filesystem;

namespace {

UNetConfig micro_unet() {
  UNetConfig c;
  c.scale = 2;
  c.patch_size = 1;
  c.level_channels = {4, 8, 12, 16};
  c.blocks_per_level = 1;
  c.state_dim = 2;
  c.dropout = 0.1;
  c.head_channels = 2;
  c.expansion = 1;
  return c;
}

void l1_closed_forms() {
  Td hr = Td::full({6, 6, 1}, 0.5);
  Td up = Td::full({6, 6, 1}, 0.7);
  REQUIRE_NEAR(l1_loss(up, hr).item(), 0.2, 1e-12);
  // signs do not cancel
  Td mix = hr.clone();
  for (std::int64_t i = 0; i < mix.numel(); ++i)
    mix.data()[i] += (i % 2 ? 0.1 : -0.1);
  REQUIRE_NEAR(l1_loss(mix, hr).item(), 0.1, 1e-12);
  // batch form averages the per-image means
  const double got =
      l1_loss<double>({up, mix}, {hr, hr}).item();
  REQUIRE_NEAR(got, 0.5 * (0.2 + 0.1), 1e-12);
  REQUIRE_THROWS_AS(l1_loss<double>({up}, {hr, hr}), ShapeError);
  REQUIRE_THROWS_AS(
      l1_loss<double>(std::vector<Td>{}, std::vector<Td>{}), ShapeError);
  pass("absolute-error term: constant, sign, and batch arithmetic");
}

// Straight-loop re-implementation of the feature stack (stride-2 3x3
// convolutions with zero padding 1, SiLU between stages) from its
// documented convention.
Td features_reference(const Td& img,
                      const std::vector<std::pair<std::string, Td>>& ws) {
  Td x = img;
  for (int s = 0; s < 4; ++s) {
    const Td& w = ws[2 * s].second;
    const Td& b = ws[2 * s + 1].second;
    const std::int64_t H = x.size(0), W = x.size(1), Ci = x.size(2);
    const std::int64_t Co = w.size(3);
    const std::int64_t Ho = (H + 2 - 3) / 2 + 1, Wo = (W + 2 - 3) / 2 + 1;
    Td y({Ho, Wo, Co});
    for (std::int64_t ho = 0; ho < Ho; ++ho)
      for (std::int64_t wo = 0; wo < Wo; ++wo)
        for (std::int64_t co = 0; co < Co; ++co) {
          double acc = b.data()[co];
          for (std::int64_t ky = 0; ky < 3; ++ky)
            for (std::int64_t kx = 0; kx < 3; ++kx) {
              const std::int64_t iy = ho * 2 - 1 + ky;
              const std::int64_t ix = wo * 2 - 1 + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              for (std::int64_t ci = 0; ci < Ci; ++ci)
                acc += x.data()[(iy * W + ix) * Ci + ci] *
                       w.data()[((ky * 3 + kx) * Ci + ci) * Co + co];
            }
          const double sig = 1.0 / (1.0 + std::exp(-acc));
          y.data()[(ho * Wo + wo) * Co + co] = acc * sig;
        }
    x = y;
  }
  return x;
}

void perceptual_matches_reference() {
  FeatureExtractor<double> phi(77);
  Rng rng(120);
  std::vector<Td> sr, hr;
  for (int i = 0; i < 2; ++i) {
    sr.push_back(filled<double>({16, 16, 1}, rng, 0.0, 1.0));
    hr.push_back(filled<double>({16, 16, 1}, rng, 0.0, 1.0));
  }
  // feature maps first
  Td f = phi(sr[0]);
  REQUIRE(f.size(0) == 1 && f.size(1) == 1 && f.size(2) == 128);
  Td fr = features_reference(sr[0], phi.weights());
  REQUIRE_MSG(max_abs_diff(f, fr) <= 1e-10,
              "feature gap " << max_abs_diff(f, fr));

  // then the scalar distance: sqrt of all squared gaps, over batch size
  double acc = 0.0;
  for (int i = 0; i < 2; ++i) {
    Td a = features_reference(sr[i], phi.weights());
    Td b = features_reference(hr[i], phi.weights());
    for (std::int64_t j = 0; j < a.numel(); ++j) {
      const double d = a.data()[j] - b.data()[j];
      acc += d * d;
    }
  }
  const double want = std::sqrt(acc) / 2.0;
  REQUIRE_NEAR(perceptual_loss(sr, hr, phi).item(), want, 1e-10);
  REQUIRE_NEAR(perceptual_loss(sr[0], hr[0], phi).item(),
               std::sqrt([&] {
                 Td a = features_reference(sr[0], phi.weights());
                 Td b = features_reference(hr[0], phi.weights());
                 double s = 0;
                 for (std::int64_t j = 0; j < a.numel(); ++j) {
                   const double d = a.data()[j] - b.data()[j];
                   s += d * d;
                 }
                 return s;
               }()),
               1e-10);
  pass("feature distance matches the straight-loop re-implementation");
}

void total_loss_wiring() {
  FeatureExtractor<double> phi(5);
  Rng rng(121);
  std::vector<Td> sr{filled<double>({16, 16, 1}, rng, 0.0, 1.0)};
  std::vector<Td> hr{filled<double>({16, 16, 1}, rng, 0.0, 1.0)};
  LossParts<double> p = total_loss(sr, hr, 0.5, &phi);
  REQUIRE_NEAR(p.total.item(), p.l1.item() + 0.5 * p.perceptual.item(),
               1e-12);
  REQUIRE(p.perceptual.item() > 0.0);

  LossParts<double> z =
      total_loss(sr, hr, 0.0,
                 static_cast<const FeatureExtractor<double>*>(nullptr));
  REQUIRE(z.perceptual.item() == 0.0);
  REQUIRE(z.total.item() == z.l1.item());
  REQUIRE_THROWS_AS(total_loss(sr, hr, 0.1, (FeatureExtractor<double>*)
                                                nullptr),
                    DataError);
  REQUIRE_THROWS_AS(total_loss(sr, hr, -0.1, &phi), DataError);
  pass("combined objective: weighting, zero-weight path, guard rails");
}

void extractor_determinism_and_pack() {
  FeatureExtractor<float> a(9), b(9), c(10);
  for (std::size_t i = 0; i < a.weights().size(); ++i) {
    REQUIRE(testsup::bitwise_equal(a.weights()[i].second,
                                   b.weights()[i].second));
  }
  REQUIRE(max_abs_diff(a.weights()[0].second, c.weights()[0].second) > 0.0);

  const std::string dir = "/tmp/smamba_test_train";
  fs::create_directories(dir);
  const std::string pack = dir + "/phi.sfep";
  a.save_pack(pack);
  FeatureExtractor<float> loaded(pack);
  for (std::size_t i = 0; i < a.weights().size(); ++i)
    REQUIRE(testsup::bitwise_equal(a.weights()[i].second,
                                   loaded.weights()[i].second));
  {
    std::ofstream os(dir + "/bad.sfep", std::ios::binary);
    os << "NOPE";
  }
  REQUIRE_THROWS_AS(FeatureExtractor<float>(dir + "/bad.sfep"), DataError);

  Rng rng(122);
  REQUIRE_THROWS_AS(a(filled<float>({8, 16, 1}, rng)), DataError);
  REQUIRE_THROWS_AS(a(filled<float>({16, 16, 2}, rng)), ShapeError);

  // frozen stack still passes gradients to its input
  FeatureExtractor<double> phi(3);
  Td x = filled<double>({16, 16, 1}, rng, 0.0, 1.0);
  Td w = filled<double>({1, 1, 128}, rng);
  const auto rep = grad_check_sparse<double>(
      [=] { return sum(mul(phi(x), w)); }, {x}, 1e-5, 24);
  REQUIRE_MSG(rep.max_rel_err <= 1e-4, "input grad " << rep.max_rel_err);
  pass("feature net: seeded, packable, frozen but differentiable inputs");
}

void adam_hand_trajectory() {
  REQUIRE_THROWS_AS(Adam<double>(0.0), DataError);
  {
    // first step: update is lr * g / (|g| + eps) regardless of magnitude
    Td p = Td::full({3}, 1.0);
    p.set_requires_grad(true);
    double* g = p.grad_acc();
    g[0] = 0.3;
    g[1] = -2.0;
    g[2] = 0.0;
    Adam<double> opt(0.01);
    opt.step({{"p", p}});
    REQUIRE_NEAR(p.data()[0], 1.0 - 0.01 * (0.3 / (0.3 + 1e-8)), 1e-14);
    REQUIRE_NEAR(p.data()[1], 1.0 + 0.01 * (2.0 / (2.0 + 1e-8)), 1e-14);
    REQUIRE(p.data()[2] == 1.0);  // zero gradient, zero movement
    REQUIRE(opt.t() == 1);
  }
  {
    // three steps against a from-scratch reimplementation
    const double grads[3] = {0.3, -0.1, 0.2};
    Td p = Td::full({1}, 0.5);
    p.set_requires_grad(true);
    Adam<double> opt(0.05, 0.9, 0.999, 1e-8);
    double w = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
      p.zero_grad();
      p.grad_acc()[0] = grads[t - 1];
      opt.step({{"p", p}});
      m = 0.9 * m + 0.1 * grads[t - 1];
      v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
      const double mh = m / (1.0 - std::pow(0.9, t));
      const double vh = v / (1.0 - std::pow(0.999, t));
      w -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
      REQUIRE_NEAR(p.data()[0], w, 1e-15);
    }
  }
  {
    // the parameter list is pinned after the first step
    Td a = Td::full({2}, 0.0), b = Td::full({2}, 0.0);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Adam<double> opt(0.01);
    opt.step({{"a", a}, {"b", b}});
    bool threw = false;
    try {
      opt.step({{"a", a}});
    } catch (const ShapeError&) {
      threw = true;
    }
    REQUIRE(threw);
  }
  {
    // float parameters, double moments: two runs agree bit for bit
    auto run = [] {
      Tf p = Tf::full({4}, 0.25f);
      p.set_requires_grad(true);
      Adam<float> opt(0.003);
      for (int t = 0; t < 5; ++t) {
        p.zero_grad();
        float* g = p.grad_acc();
        for (int j = 0; j < 4; ++j) g[j] = float(0.1 * (t + 1) * (j - 1.5));
        opt.step({{"p", p}});
      }
      return p;
    };
    REQUIRE(testsup::bitwise_equal(run(), run()));
  }
  pass("optimizer follows the hand-computed schedule exactly");
}

// Builds a small synthetic dataset on disk and returns its directory.
std::string make_dataset(const std::string& name, int n_train, int n_test,
                         std::int64_t hr_size, std::int64_t scale) {
  const std::string dir = "/tmp/smamba_test_train/" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  DatasetManifest man;
  man.scale = scale;
  int idx = 0;
  for (int split = 0; split < 2; ++split) {
    const int count = split == 0 ? n_train : n_test;
    for (int i = 0; i < count; ++i, ++idx) {
      Rng rng(100 + idx);
      Td hr = phantom_slice(hr_size, hr_size, rng);
      Td lr = degrade_kspace(hr, scale);
      char hname[32], lname[32];
      std::snprintf(hname, sizeof(hname), "slice_%03d.srt", idx);
      std::snprintf(lname, sizeof(lname), "slice_%03d_lr.srt", idx);
      srt_save(join_path(dir, hname), hr);
      srt_save(join_path(dir, lname), lr);
      SliceRef ref{hname, lname, 1.0};
      (split == 0 ? man.train : man.test).push_back(ref);
    }
  }
  man.save(join_path(dir, "manifest.json"));
  return dir;
}

TrainConfig micro_train_cfg(const std::string& data_dir,
                            const std::string& out_dir) {
  TrainConfig cfg;
  cfg.unet = micro_unet();
  cfg.lr = 1e-3;
  cfg.beta = 0.01;
  cfg.batch_size = 2;
  cfg.steps = 3;
  cfg.seed = 1;
  cfg.data_dir = data_dir;
  cfg.out_dir = out_dir;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void train_smoke_and_artifacts() {
  const std::string data = make_dataset("ds_smoke", 3, 2, 32, 2);
  const std::string out = "/tmp/smamba_test_train/out_smoke";
  fs::remove_all(out);
  TrainConfig cfg = micro_train_cfg(data, out);
  TrainResult res = train<float>(cfg);
  REQUIRE(res.l1.size() == 3 && res.total.size() == 3);
  for (int s = 0; s < 3; ++s) {
    REQUIRE(std::isfinite(res.total[s]));
    REQUIRE(res.perceptual[s] > 0.0);
    REQUIRE_NEAR(res.total[s], res.l1[s] + cfg.beta * res.perceptual[s],
                 1e-6);
  }
  REQUIRE(fs::exists(res.final_checkpoint));
  const std::string log = slurp(join_path(out, "train_log.csv"));
  REQUIRE(log.rfind("step,l1,perceptual,total,wall_ms,perturb\n", 0) == 0);
  // three data rows, each with an applied two-sample perturbation column
  std::istringstream ls(log);
  std::string line;
  std::getline(ls, line);
  int rows = 0;
  while (std::getline(ls, line)) {
    ++rows;
    const auto last = line.find_last_of(',');
    const std::string pcol = line.substr(last + 1);
    REQUIRE_MSG(pcol.find(':') != std::string::npos &&
                    pcol.find(';') != std::string::npos,
                "perturb column '" << pcol << "'");
  }
  REQUIRE(rows == 3);
  pass("training runs, logs, and checkpoints the expected shape of data");
}

void train_determinism() {
  const std::string data = make_dataset("ds_det", 3, 1, 32, 2);
  TrainConfig a =
      micro_train_cfg(data, "/tmp/smamba_test_train/out_det_a");
  TrainConfig b =
      micro_train_cfg(data, "/tmp/smamba_test_train/out_det_b");
  fs::remove_all(a.out_dir);
  fs::remove_all(b.out_dir);
  TrainResult ra = train<float>(a);
  TrainResult rb = train<float>(b);
  for (int s = 0; s < 3; ++s) {
    REQUIRE(ra.l1[s] == rb.l1[s]);
    REQUIRE(ra.perceptual[s] == rb.perceptual[s]);
    REQUIRE(ra.total[s] == rb.total[s]);
  }
  const std::string ca = slurp(ra.final_checkpoint);
  const std::string cb = slurp(rb.final_checkpoint);
  REQUIRE_MSG(!ca.empty() && ca == cb,
              "final checkpoints differ between identical runs");
  pass("two identical runs produce byte-identical checkpoints");
}

void train_toggles() {
  const std::string data = make_dataset("ds_tog", 2, 1, 32, 2);
  {
    // no occlusion: the log records '-' for every sample
    TrainConfig cfg =
        micro_train_cfg(data, "/tmp/smamba_test_train/out_nosp");
    fs::remove_all(cfg.out_dir);
    cfg.unet.use_self_prior = false;
    cfg.steps = 2;
    train<float>(cfg);
    std::istringstream ls(slurp(join_path(cfg.out_dir, "train_log.csv")));
    std::string line;
    std::getline(ls, line);
    while (std::getline(ls, line)) {
      const std::string pcol = line.substr(line.find_last_of(',') + 1);
      REQUIRE_MSG(pcol == "-;-", "perturb column '" << pcol << "'");
    }
  }
  {
    // zero feature weight: never builds the extractor, so a bogus pack
    // path must not be touched
    TrainConfig cfg =
        micro_train_cfg(data, "/tmp/smamba_test_train/out_nobeta");
    fs::remove_all(cfg.out_dir);
    cfg.beta = 0.0;
    cfg.extractor_pack = "/nonexistent/phi.sfep";
    cfg.steps = 2;
    TrainResult res = train<float>(cfg);
    for (double p : res.perceptual) REQUIRE(p == 0.0);
    for (int s = 0; s < 2; ++s) REQUIRE(res.total[s] == res.l1[s]);
  }
  {
    // intermediate checkpoints respect the cadence
    TrainConfig cfg =
        micro_train_cfg(data, "/tmp/smamba_test_train/out_ckpt");
    fs::remove_all(cfg.out_dir);
    cfg.steps = 5;
    cfg.checkpoint_every = 2;
    train<float>(cfg);
    REQUIRE(fs::exists(join_path(cfg.out_dir, "checkpoint_000002.smck")));
    REQUIRE(fs::exists(join_path(cfg.out_dir, "checkpoint_000004.smck")));
    REQUIRE(fs::exists(join_path(cfg.out_dir, "checkpoint_final.smck")));
    REQUIRE(!fs::exists(join_path(cfg.out_dir, "checkpoint_000005.smck")));
  }
  pass("self-prior and feature-loss toggles change only what they should");
}

void train_errors() {
  const std::string data = make_dataset("ds_err", 2, 1, 32, 2);
  TrainConfig cfg = micro_train_cfg(data, "/tmp/smamba_test_train/out_err");
  cfg.unet.scale = 4;  // manifest says 2
  REQUIRE_THROWS_AS(train<float>(cfg), DataError);
  TrainConfig bad = micro_train_cfg(data, "/tmp/smamba_test_train/out_err");
  bad.dtype = "f16";
  REQUIRE_THROWS_AS(bad.validate(), DataError);
  bad = micro_train_cfg(data, "x");
  bad.data_dir = "";
  REQUIRE_THROWS_AS(bad.validate(), DataError);
  // config JSON round trip, including the nested occlusion block
  TrainConfig rt = micro_train_cfg(data, "out");
  rt.perturb.prob = 0.5;
  rt.perturb.block = 3;
  rt.perturb.mode = "add";
  TrainConfig back = TrainConfig::from_json(rt.to_json());
  REQUIRE(back.perturb.prob == 0.5 && back.perturb.block == 3);
  REQUIRE(back.perturb.mode == "add");
  REQUIRE(back.unet.canonical() == rt.unet.canonical());
  REQUIRE(back.lr == rt.lr && back.beta == rt.beta);
  pass("scale mismatches and bad configs are rejected; JSON round-trips");
}

void dtype_probe_and_eval() {
  const std::string data = make_dataset("ds_eval", 2, 2, 32, 2);
  TrainConfig cfg =
      micro_train_cfg(data, "/tmp/smamba_test_train/out_eval");
  fs::remove_all(cfg.out_dir);
  cfg.steps = 2;
  TrainResult res = train<float>(cfg);
  REQUIRE(checkpoint_dtype(res.final_checkpoint) == 0);
  {
    TrainConfig c64 = cfg;
    c64.out_dir = "/tmp/smamba_test_train/out_eval64";
    fs::remove_all(c64.out_dir);
    c64.dtype = "f64";
    c64.steps = 1;
    TrainResult r64 = train<double>(c64);
    REQUIRE(checkpoint_dtype(r64.final_checkpoint) == 1);
  }

  Model<float> model = load_checkpoint<float>(res.final_checkpoint);
  DatasetManifest man = DatasetManifest::load(join_path(data,
                                                        "manifest.json"));
  const std::string edir = "/tmp/smamba_test_train/evalout";
  fs::remove_all(edir);
  EvalResult er = evaluate(model, data, man, edir);
  REQUIRE(er.model_rows.size() == 2 && er.bicubic_rows.size() == 2);
  for (const auto& r : er.model_rows) {
    REQUIRE(std::isfinite(r.psnr_db) && r.psnr_db > 5.0);
    REQUIRE(r.ssim_score > 0.0 && r.ssim_score <= 1.0);
    REQUIRE(fs::exists(join_path(edir, "sr_" + r.slice + ".pgm")));
    REQUIRE(fs::exists(join_path(edir, "err_" + r.slice + ".pgm")));
  }
  // the baseline table reproduces a direct bicubic scoring
  SlicePair p0 = load_pair(data, man.test[0], 2, true);
  Td base = clip(bicubic_upscale(p0.lr, 2), 0.0, 1.0);
  REQUIRE_NEAR(er.bicubic_rows[0].psnr_db, psnr(base, p0.hr), 1e-12);
  REQUIRE_NEAR(er.bicubic_rows[0].ssim_score, ssim(base, p0.hr), 1e-12);
  REQUIRE_NEAR(er.model_mean_psnr,
               0.5 * (er.model_rows[0].psnr_db + er.model_rows[1].psnr_db),
               1e-12);

  const std::string mcsv = slurp(join_path(edir, "metrics.csv"));
  REQUIRE(mcsv.rfind("slice,psnr_db,ssim\n", 0) == 0);
  REQUIRE(mcsv.find("\nmean,") != std::string::npos);
  REQUIRE(fs::exists(join_path(edir, "metrics_bicubic.csv")));

  DatasetManifest wrong = man;
  wrong.scale = 4;
  REQUIRE_THROWS_AS(evaluate(model, data, wrong, edir), DataError);
  DatasetManifest empty = man;
  empty.test.clear();
  REQUIRE_THROWS_AS(evaluate(model, data, empty, edir), DataError);
  pass("dtype probe, scoring tables, previews, and guard rails");
}

void end_to_end_gradients() {
  // spot-check the full network + objective graph in double precision
  UNetConfig uc = micro_unet();
  uc.dropout = 0.0;
  Model<double> model(uc, 21);
  // give the zero-initialized output stage some signal so its upstream
  // gradients are not all vanishing
  Rng wf(123);
  for (std::int64_t i = 0; i < model.final_w.numel(); ++i)
    model.final_w.data()[i] = wf.uniform(-0.05, 0.05);
  Rng rng(124);
  Td hr = phantom_slice(16, 16, rng);
  Td lr = degrade_kspace(hr, 2);
  FeatureExtractor<double> phi(7);
  std::vector<Td> params;
  for (auto& [name, t] : model.registry) params.push_back(t);
  const auto rep = grad_check_sparse<double>(
      [&model, lr, hr, &phi] {
        std::vector<Td> sr{model.forward(lr, true)};
        std::vector<Td> hrv{hr};
        return total_loss(sr, hrv, 0.05, &phi).total;
      },
      params, 1e-5, 2, 1e-6);
  REQUIRE_MSG(rep.max_rel_err <= 2e-3,
              "end-to-end grad " << rep.max_rel_err << " at tensor "
                                 << rep.tensor_at_max << " elem "
                                 << rep.elem_at_max);
  pass("sampled end-to-end gradients agree with central differences");
}

}  // namespace

int main() {
  l1_closed_forms();
  perceptual_matches_reference();
  total_loss_wiring();
  extractor_determinism_and_pack();
  adam_hand_trajectory();
  train_smoke_and_artifacts();
  train_determinism();
  train_toggles();
  train_errors();
  dtype_probe_and_eval();
  end_to_end_gradients();
  std::cout << "test_train: all sections passed\n";
  return 0;
}
