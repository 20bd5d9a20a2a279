#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "oat/config.hpp"
#include "oat/das.hpp"
#include "oat/error.hpp"
#include "oat/forward_model.hpp"
#include "oat/metrics.hpp"
#include "oat/nn/params.hpp"
#include "oat/phantom_io.hpp"
#include "oat/pipeline.hpp"

namespace oat::cli {

namespace fs = std::filesystem;
using Real = float;

inline const std::vector<int>& default_nis_list() {
  static const std::vector<int> v{1, 2, 3, 5, 10, 20, 50};
  return v;
}

struct Context {
  RunConfig cfg;
  std::string command;
};

inline void prepare_run_dir(const fs::path& dir, const Context& ctx) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError(FormatError::Kind::kIo, dir.string() + ": cannot create run directory: " + ec.message());
  io::write_text_atomic(dir / "manifest", manifest_text(ctx.cfg, ctx.command));
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw FormatError(FormatError::Kind::kIo, p.string() + ": " + what + " not found");
}

inline CipEncoder<Real> load_cip(const RunConfig& cfg, const fs::path& path) {
  require_file(path, "conditioning encoder checkpoint");
  Rng init(0);
  CipEncoder<Real> enc(cfg.cip, init);
  nn::assign_checkpoint(enc.params(), nn::load_checkpoint(path));
  return enc;
}

inline Denoiser<Real> load_denoiser(const RunConfig& cfg, const fs::path& path) {
  require_file(path, "denoiser checkpoint");
  Rng init(0);
  Denoiser<Real> d(cfg.denoiser, init);
  nn::assign_checkpoint(d.params(), nn::load_checkpoint(path));
  return d;
}

inline BaselineUNet<Real> load_baseline(const RunConfig& cfg, const fs::path& path) {
  require_file(path, "baseline checkpoint");
  Rng init(0);
  BaselineUNet<Real> b(cfg.baseline, init);
  nn::assign_checkpoint(b.params(), nn::load_checkpoint(path));
  return b;
}

template <class Store>
void save_params(const Store& store, const fs::path& path) {
  std::vector<nn::CheckpointTensor> t;
  nn::append_checkpoint(t, store);
  nn::save_checkpoint(t, path);
}

inline void log(const std::string& msg) { std::cerr << msg << "\n"; }

// ---------------------------------------------------------------------------------------------
// Subcommands

inline void cmd_phantom(const Context& ctx, const fs::path& out, std::optional<std::uint64_t> seed) {
  const Image img =
      generate_phantom(ctx.cfg.scan.image_size, ctx.cfg.dataset.kind, seed.value_or(ctx.cfg.stage_seed("phantom")));
  save_image(img, out, 65535);
}

inline void cmd_simulate(const Context& ctx, const fs::path& in, const fs::path& out, std::optional<double> snr) {
  const Image img = load_image(in);
  const ScanGeometry geom = build_geometry(ctx.cfg.scan_config());
  Sinogram s = simulate_sinogram(img, geom);
  if (snr) s = add_noise(s, *snr, ctx.cfg.stage_seed("noise"));
  save_sinogram(s, out);
}

inline void cmd_das(const Context& ctx, const fs::path& in, const fs::path& out, bool true_geometry) {
  const Sinogram s = load_sinogram(in);
  const ScanGeometry geom = build_geometry(ctx.cfg.scan_config());
  save_image(das_reconstruct(s, true_geometry ? geom : geom.nominal()), out, 65535);
}

inline void cmd_train_cip(const Context& ctx, const fs::path& dir) {
  prepare_run_dir(dir, ctx);
  const Dataset data = synthesize_dataset(ctx.cfg.dataset_spec(), ctx.cfg.scan_config());
  const auto vecs = cip_training_vectors(data.train, ctx.cfg.cip);
  log("train-cip: " + std::to_string(vecs.size()) + " subpatches");
  const auto res = train_cip<Real>(vecs, ctx.cfg.cip, ctx.cfg.cip_train_config());
  std::vector<CurvePoint> curve;
  for (std::size_t i = 0; i < res.losses.size(); ++i) curve.push_back({static_cast<long>(i + 1), res.losses[i], "train"});
  io::write_text_atomic(dir / "cip_loss.csv", curve_csv(curve));
  save_params(res.encoder.params(), dir / "cip.ckpt");
}

inline void cmd_train_diff(const Context& ctx, const fs::path& dir, const fs::path& cip_path) {
  prepare_run_dir(dir, ctx);
  CipEncoder<Real> cip = load_cip(ctx.cfg, cip_path);
  const Dataset data = synthesize_dataset(ctx.cfg.dataset_spec(), ctx.cfg.scan_config());
  Rng init = Rng(ctx.cfg.stage_seed("denoiser_init"));
  Denoiser<Real> model(ctx.cfg.denoiser, init);
  log("train-diff: " + std::to_string(model.params().parameter_count()) + " parameters, " +
      std::to_string(data.train.size()) + " images");
  const TrainReport rep = train_diffusion(data, model, cip, ctx.cfg.schedule(), ctx.cfg.train_config("diffusion"),
                                          {ctx.cfg.freeze_cip});
  io::write_text_atomic(dir / "diffusion_loss.csv", curve_csv(rep.curve));
  save_params(model.params(), dir / "denoiser.ckpt");
  if (!ctx.cfg.freeze_cip) save_params(cip.params(), dir / "cip.ckpt");
}

inline void cmd_train_baseline(const Context& ctx, const fs::path& dir) {
  prepare_run_dir(dir, ctx);
  const Dataset data = synthesize_dataset(ctx.cfg.dataset_spec(), ctx.cfg.scan_config());
  Rng init = Rng(ctx.cfg.stage_seed("baseline_init"));
  BaselineUNet<Real> model(ctx.cfg.baseline, init);
  const TrainReport rep = train_baseline(data.train, model, ctx.cfg.train_config("baseline"));
  io::write_text_atomic(dir / "baseline_loss.csv", curve_csv(rep.curve));
  save_params(model.params(), dir / "baseline.ckpt");
}

inline void cmd_infer(const Context& ctx, const fs::path& dir, const fs::path& in, const fs::path& out) {
  const CipEncoder<Real> cip = load_cip(ctx.cfg, dir / "cip.ckpt");
  const Denoiser<Real> model = load_denoiser(ctx.cfg, dir / "denoiser.ckpt");
  const Image das = load_image(in);
  save_image(infer_image(das, model, cip, ctx.cfg.schedule(), ctx.cfg.infer), out, 65535);
}

inline void cmd_eval(const Context& ctx, const fs::path& dir) {
  prepare_run_dir(dir, ctx);
  const Dataset data = synthesize_dataset(ctx.cfg.dataset_spec(), ctx.cfg.scan_config());
  if (data.test.empty()) throw DataError("eval: dataset.n_test is 0");
  std::optional<CipEncoder<Real>> cip;
  std::optional<Denoiser<Real>> model;
  std::optional<BaselineUNet<Real>> base;
  if (fs::exists(dir / "denoiser.ckpt")) {
    cip = load_cip(ctx.cfg, dir / "cip.ckpt");
    model = load_denoiser(ctx.cfg, dir / "denoiser.ckpt");
  }
  if (fs::exists(dir / "baseline.ckpt")) base = load_baseline(ctx.cfg, dir / "baseline.ckpt");
  const auto sch = ctx.cfg.schedule();
  const fs::path img_dir = dir / "eval";
  fs::create_directories(img_dir);
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const Sample& s = data.test[i];
    const std::string tag = std::to_string(i);
    save_image(s.ground_truth, img_dir / ("gt_" + tag + ".pgm"), 65535);
    save_image(s.das, img_dir / ("das_" + tag + ".pgm"), 65535);
    pairs.push_back({"DAS", s.das, s.ground_truth});
    if (model) {
      InferOptions o = ctx.cfg.infer;
      o.seed += i;
      const Image rec = infer_image(s.das, *model, *cip, sch, o);
      save_image(rec, img_dir / ("diffusion_" + tag + ".pgm"), 65535);
      pairs.push_back({"diffusion", rec, s.ground_truth});
    }
    if (base) {
      const Image rec = baseline_reconstruct(s.das, *base);
      save_image(rec, img_dir / ("baseline_" + tag + ".pgm"), 65535);
      pairs.push_back({"DAS+U-Net", rec, s.ground_truth});
    }
  }
  const std::string csv = evaluation_csv(evaluate_set(pairs));
  io::write_text_atomic(dir / "evaluation.csv", csv);
  std::cout << csv;
}

inline void cmd_nis_sweep(const Context& ctx, const fs::path& dir, std::vector<int> nis_list) {
  prepare_run_dir(dir, ctx);
  const CipEncoder<Real> cip = load_cip(ctx.cfg, dir / "cip.ckpt");
  const Denoiser<Real> model = load_denoiser(ctx.cfg, dir / "denoiser.ckpt");
  const Dataset data = synthesize_dataset(ctx.cfg.dataset_spec(), ctx.cfg.scan_config());
  if (data.test.empty()) throw DataError("nis-sweep: dataset.n_test is 0");
  const auto sch = ctx.cfg.schedule();
  const fs::path img_dir = dir / "nis_sweep";
  fs::create_directories(img_dir);
  std::string csv = "nis,psnr_mean,psnr_std,ssim_mean,ssim_std\n";
  for (int nis : nis_list) {
    if (nis < 1 || nis > sch.steps) throw ConfigError("nis-sweep: NIS " + std::to_string(nis) + " outside [1, T]");
    std::vector<EvalPair> pairs;
    for (std::size_t i = 0; i < data.test.size(); ++i) {
      InferOptions o = ctx.cfg.infer;
      o.nis = nis;
      o.seed += i;
      const Image rec = infer_image(data.test[i].das, model, cip, sch, o);
      if (i == 0) save_image(rec, img_dir / ("nis_" + std::to_string(nis) + ".pgm"), 65535);
      pairs.push_back({"nis", rec, data.test[i].ground_truth});
    }
    const MetricSummary m = evaluate_set(pairs).front();
    csv += std::to_string(nis) + "," + format_metric(m.psnr_mean) + "," + format_metric(m.psnr_std) + "," +
           format_metric(m.ssim_mean) + "," + format_metric(m.ssim_std) + "\n";
  }
  io::write_text_atomic(dir / "psnr_vs_nis.csv", csv);
  std::cout << csv;
}

// ---------------------------------------------------------------------------------------------

/// Entry point; returns the process exit code (0 ok, 1 usage/config, 2 data, 3 numeric).
inline int run(int argc, char** argv) {
  CLI::App app{"Optoacoustic tomography reconstruction toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolkitVersion));

  std::string config_path;
  std::string in, out, run_dir = "run", cip_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> snr;
  std::optional<int> nis;
  std::optional<double> eta;
  bool true_geometry = false;
  std::vector<int> nis_list = default_nis_list();

  auto add_config = [&](CLI::App* s) { s->add_option("-c,--config", config_path, "Configuration file")->check(CLI::ExistingFile); };

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom image");
  add_config(phantom);
  phantom->add_option("-o,--out", out, "Output PGM")->required();
  phantom->add_option("--seed", seed, "Phantom seed (default: derived from run seed)");

  auto* simulate = app.add_subcommand("simulate", "Simulate a sinogram from an image");
  add_config(simulate);
  simulate->add_option("-i,--in", in, "Input PGM")->required();
  simulate->add_option("-o,--out", out, "Output sinogram")->required();
  simulate->add_option("--snr", snr, "Add white noise at this SNR in dB");

  auto* das = app.add_subcommand("das", "Delay-and-sum reconstruction of a sinogram");
  add_config(das);
  das->add_option("-i,--in", in, "Input sinogram")->required();
  das->add_option("-o,--out", out, "Output PGM")->required();
  das->add_flag("--true-geometry", true_geometry, "Use the perturbed detector positions");

  auto* train_cip_cmd = app.add_subcommand("train-cip", "Pretrain the conditioning autoencoder");
  add_config(train_cip_cmd);
  train_cip_cmd->add_option("-r,--run-dir", run_dir, "Run directory");

  auto* train_diff = app.add_subcommand("train-diff", "Train the conditional diffusion denoiser");
  add_config(train_diff);
  train_diff->add_option("-r,--run-dir", run_dir, "Run directory");
  train_diff->add_option("--cip", cip_path, "Encoder checkpoint (default: <run-dir>/cip.ckpt)");

  auto* train_base = app.add_subcommand("train-baseline", "Train the direct-regression U-Net");
  add_config(train_base);
  train_base->add_option("-r,--run-dir", run_dir, "Run directory");

  auto* infer = app.add_subcommand("infer", "Reconstruct one DAS image with the trained denoiser");
  add_config(infer);
  infer->add_option("-r,--run-dir", run_dir, "Run directory with cip.ckpt and denoiser.ckpt");
  infer->add_option("-i,--in", in, "DAS PGM")->required();
  infer->add_option("-o,--out", out, "Output PGM")->required();
  infer->add_option("--nis", nis, "Number of inference steps");
  infer->add_option("--eta", eta, "Sampler stochasticity");
  infer->add_option("--seed", seed, "Sampling seed");

  auto* eval = app.add_subcommand("eval", "Evaluate all available methods on the test split");
  add_config(eval);
  eval->add_option("-r,--run-dir", run_dir, "Run directory");

  auto* sweep = app.add_subcommand("nis-sweep", "PSNR against the number of inference steps");
  add_config(sweep);
  sweep->add_option("-r,--run-dir", run_dir, "Run directory");
  sweep->add_option("--nis", nis_list, "NIS values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    Context ctx;
    if (!config_path.empty()) ctx.cfg = load_config(config_path);
    if (infer->parsed()) {
      if (nis) ctx.cfg.infer.nis = *nis;
      if (eta) ctx.cfg.infer.eta = *eta;
      if (seed) ctx.cfg.infer.seed = *seed;
    }
    ctx.cfg.validate();
    for (int i = 0; i < argc; ++i) ctx.command += (i ? " " : "") + std::string(argv[i]);
    const fs::path dir(run_dir);

    if (phantom->parsed()) cmd_phantom(ctx, out, seed);
    if (simulate->parsed()) cmd_simulate(ctx, in, out, snr);
    if (das->parsed()) cmd_das(ctx, in, out, true_geometry);
    if (train_cip_cmd->parsed()) cmd_train_cip(ctx, dir);
    if (train_diff->parsed()) cmd_train_diff(ctx, dir, cip_path.empty() ? dir / "cip.ckpt" : fs::path(cip_path));
    if (train_base->parsed()) cmd_train_baseline(ctx, dir);
    if (infer->parsed()) cmd_infer(ctx, dir, in, out);
    if (eval->parsed()) cmd_eval(ctx, dir);
    if (sweep->parsed()) cmd_nis_sweep(ctx, dir, nis_list);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
}

}  // namespace oat::cli
