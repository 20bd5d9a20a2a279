#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "oat/cip.hpp"
#include "oat/diffusion.hpp"
#include "oat/error.hpp"
#include "oat/geometry.hpp"
#include "oat/io.hpp"
#include "oat/models.hpp"
#include "oat/pipeline.hpp"
#include "oat/rng.hpp"

namespace oat {

inline constexpr std::string_view kToolkitVersion = "0.1.0";

/// Everything a run needs. Seeds for individual stages are derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  ScanConfig scan;
  DatasetSpec dataset;
  CipConfig cip;
  CipTrainConfig cip_train;
  DenoiserConfig denoiser;
  BaselineConfig baseline;
  TrainConfig train;
  bool freeze_cip = true;
  int diffusion_steps = 1000;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
  diffusion::LossWeighting loss_weighting = diffusion::LossWeighting::kUnit;
  InferOptions infer;

  std::uint64_t stage_seed(std::string_view stage) const { return Rng(seed).fork(stage).key(); }

  /// Copies of the sub-configs with stage seeds filled in from the master seed.
  ScanConfig scan_config() const {
    ScanConfig c = scan;
    c.rng_seed = stage_seed("geometry");
    return c;
  }
  DatasetSpec dataset_spec() const {
    DatasetSpec d = dataset;
    d.seed = stage_seed("dataset");
    return d;
  }
  CipTrainConfig cip_train_config() const {
    CipTrainConfig c = cip_train;
    c.seed = stage_seed("cip");
    return c;
  }
  TrainConfig train_config(std::string_view stage) const {
    TrainConfig t = train;
    t.seed = stage_seed(stage);
    return t;
  }
  diffusion::NoiseSchedule schedule() const {
    return diffusion::make_schedule(diffusion_steps, beta_1, beta_T, loss_weighting);
  }

  void validate() const {
    scan.validate();
    dataset.validate();
    cip.validate();
    denoiser.validate(cip.condition_dim());
    baseline.validate();
    train.validate();
    if (scan.image_size != 2 * denoiser.patch_size)
      throw ConfigError("scan.image_size must equal 2 * denoiser.patch_size");
    if (denoiser.patch_size != 2 * cip.subpatch_side())
      throw ConfigError("denoiser.patch_size must equal 2 * sqrt(cip.input_dim)");
    if (baseline.image_size != scan.image_size) throw ConfigError("baseline.image_size must equal scan.image_size");
    schedule();
  }
};

namespace detail {

template <class N>
N parse_integer(std::string_view s, const std::string& key) {
  N v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + std::string(s) + "'");
  return v;
}

inline double parse_real(std::string_view s, const std::string& key) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("config: key '" + key + "' expects a number, got '" + std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + std::string(s) + "'");
}

inline std::string fmt_real(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(std::string_view, const std::string&)> set;
  std::function<std::string()> get;
};

template <class N>
Field int_field(std::string section, std::string key, N& ref) {
  return {std::move(section), std::move(key),
          [&ref](std::string_view v, const std::string& k) { ref = parse_integer<N>(v, k); },
          [&ref] { return std::to_string(ref); }};
}
inline Field real_field(std::string section, std::string key, double& ref) {
  return {std::move(section), std::move(key), [&ref](std::string_view v, const std::string& k) { ref = parse_real(v, k); },
          [&ref] { return fmt_real(ref); }};
}
inline Field bool_field(std::string section, std::string key, bool& ref) {
  return {std::move(section), std::move(key), [&ref](std::string_view v, const std::string& k) { ref = parse_bool(v, k); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

inline std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  f.push_back(int_field("run", "seed", c.seed));

  f.push_back(int_field("scan", "n_detectors", c.scan.n_detectors));
  f.push_back(real_field("scan", "ring_radius", c.scan.ring_radius));
  f.push_back(int_field("scan", "n_samples", c.scan.n_samples));
  f.push_back(real_field("scan", "sample_rate", c.scan.sample_rate));
  f.push_back(real_field("scan", "speed_of_sound", c.scan.speed_of_sound));
  f.push_back(int_field("scan", "image_size", c.scan.image_size));
  f.push_back(real_field("scan", "pixel_size", c.scan.pixel_size));
  f.push_back(real_field("scan", "position_jitter_frac", c.scan.position_jitter_frac));
  f.push_back({"scan", "acquisition_start",
               [&c](std::string_view v, const std::string& k) {
                 if (v == "auto")
                   c.scan.acquisition_start.reset();
                 else
                   c.scan.acquisition_start = parse_real(v, k);
               },
               [&c] { return c.scan.acquisition_start ? fmt_real(*c.scan.acquisition_start) : std::string("auto"); }});
  f.push_back({"scan", "signal_model",
               [&c](std::string_view v, const std::string&) { c.scan.signal_model = parse_signal_model(std::string(v)); },
               [&c] { return std::string(to_string(c.scan.signal_model)); }});

  f.push_back(int_field("dataset", "n_train", c.dataset.n_train));
  f.push_back(int_field("dataset", "n_val", c.dataset.n_val));
  f.push_back(int_field("dataset", "n_test", c.dataset.n_test));
  f.push_back({"dataset", "phantom_kind",
               [&c](std::string_view v, const std::string&) { c.dataset.kind = parse_phantom_kind(std::string(v)); },
               [&c] { return std::string(to_string(c.dataset.kind)); }});
  f.push_back(real_field("dataset", "snr_min_db", c.dataset.snr_min_db));
  f.push_back(real_field("dataset", "snr_max_db", c.dataset.snr_max_db));

  f.push_back(int_field("cip", "input_dim", c.cip.input_dim));
  f.push_back(int_field("cip", "hidden1", c.cip.hidden[0]));
  f.push_back(int_field("cip", "hidden2", c.cip.hidden[1]));
  f.push_back(int_field("cip", "hidden3", c.cip.hidden[2]));
  f.push_back(int_field("cip", "epochs", c.cip_train.epochs));
  f.push_back(int_field("cip", "batch", c.cip_train.batch));
  f.push_back(real_field("cip", "lr", c.cip_train.lr));
  f.push_back(int_field("cip", "max_steps", c.cip_train.max_steps));

  f.push_back(int_field("denoiser", "patch_size", c.denoiser.patch_size));
  f.push_back(int_field("denoiser", "base_channels", c.denoiser.base_channels));
  f.push_back(int_field("denoiser", "n_scales", c.denoiser.n_scales));
  f.push_back(int_field("denoiser", "resnet_blocks", c.denoiser.resnet_blocks));
  f.push_back(int_field("denoiser", "attention_heads", c.denoiser.attention_heads));
  f.push_back(int_field("denoiser", "cond_tokens", c.denoiser.cond_tokens));
  f.push_back(int_field("denoiser", "cond_token_dim", c.denoiser.cond_token_dim));
  f.push_back(int_field("denoiser", "time_embed_dim", c.denoiser.time_embed_dim));
  f.push_back(int_field("denoiser", "norm_groups", c.denoiser.norm_groups));
  f.push_back(bool_field("denoiser", "positional_embeddings", c.denoiser.positional_embeddings));
  f.push_back(bool_field("denoiser", "input_skip", c.denoiser.input_skip));

  f.push_back(int_field("baseline", "image_size", c.baseline.image_size));
  f.push_back(int_field("baseline", "base_channels", c.baseline.base_channels));
  f.push_back(int_field("baseline", "n_scales", c.baseline.n_scales));
  f.push_back(int_field("baseline", "resnet_blocks", c.baseline.resnet_blocks));
  f.push_back(int_field("baseline", "norm_groups", c.baseline.norm_groups));

  f.push_back(int_field("diffusion", "steps", c.diffusion_steps));
  f.push_back(real_field("diffusion", "beta_1", c.beta_1));
  f.push_back(real_field("diffusion", "beta_T", c.beta_T));
  f.push_back({"diffusion", "loss_weighting",
               [&c](std::string_view v, const std::string& k) {
                 if (v == "unit")
                   c.loss_weighting = diffusion::LossWeighting::kUnit;
                 else if (v == "elbo")
                   c.loss_weighting = diffusion::LossWeighting::kElbo;
                 else
                   throw ConfigError("config: key '" + k + "' expects unit or elbo, got '" + std::string(v) + "'");
               },
               [&c] { return std::string(c.loss_weighting == diffusion::LossWeighting::kUnit ? "unit" : "elbo"); }});

  f.push_back(real_field("train", "lr", c.train.lr));
  f.push_back(int_field("train", "epochs", c.train.epochs));
  f.push_back(int_field("train", "batch", c.train.batch));
  f.push_back(real_field("train", "beta1", c.train.beta1));
  f.push_back(real_field("train", "beta2", c.train.beta2));
  f.push_back(bool_field("train", "deterministic", c.train.deterministic));
  f.push_back(int_field("train", "max_steps", c.train.max_steps));
  f.push_back(int_field("train", "val_every", c.train.val_every));
  f.push_back(int_field("train", "val_count", c.train.val_count));
  f.push_back(int_field("train", "val_nis", c.train.val_nis));
  f.push_back(bool_field("train", "freeze_cip", c.freeze_cip));

  f.push_back(int_field("infer", "nis", c.infer.nis));
  f.push_back(real_field("infer", "eta", c.infer.eta));
  f.push_back(int_field("infer", "seed", c.infer.seed));
  f.push_back(bool_field("infer", "clip_x0", c.infer.clip_x0));
  return f;
}

}  // namespace detail

/// Informational keys written by the toolkit into run manifests; accepted and ignored on input.
inline const std::vector<std::string>& manifest_keys() {
  static const std::vector<std::string> k{"version", "command", "config_hash", "seed"};
  return k;
}

/// Parses `key = value` lines grouped under `[section]` headers; `#` starts a comment.
/// A key outside any section is accepted when its name is unique across sections.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  RunConfig c = std::move(base);
  auto table = detail::fields(c);
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = std::string(detail::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (section == "manifest") {
      if (std::find(manifest_keys().begin(), manifest_keys().end(), key) == manifest_keys().end())
        throw ConfigError(where + "unknown config key 'manifest." + key + "'");
      continue;
    }
    detail::Field* hit = nullptr;
    int matches = 0;
    for (auto& f : table) {
      if (f.key != key) continue;
      if (section.empty() || f.section == section) {
        hit = &f;
        ++matches;
      }
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (matches == 0) throw ConfigError(where + "unknown config key '" + full + "'");
    if (matches > 1) throw ConfigError(where + "ambiguous key '" + key + "'; place it under a [section]");
    hit->set(value, hit->section + "." + key);
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Canonical text form: every key, grouped by section, in a fixed order.
inline std::string config_text(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out, section;
  for (const auto& f : detail::fields(copy)) {
    if (f.section != section) {
      out += (out.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

inline std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(config_text(cfg)); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

/// Manifest: a [manifest] header followed by the canonical config, so it can be fed back as --config.
inline std::string manifest_text(const RunConfig& cfg, const std::string& command) {
  std::string cmd = command;
  for (char& ch : cmd)
    if (ch == '\n' || ch == '#') ch = ' ';
  return "[manifest]\nversion = " + std::string(kToolkitVersion) + "\ncommand = " + cmd +
         "\nconfig_hash = " + hex64(config_hash(cfg)) + "\nseed = " + std::to_string(cfg.seed) + "\n\n" +
         config_text(cfg);
}

}  // namespace oat
