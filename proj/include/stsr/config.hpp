#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "stsr/diffusion.hpp"
#include "stsr/encoders.hpp"
#include "stsr/imputation.hpp"
#include "stsr/synth_data.hpp"

namespace stsr {

struct ContrastiveConfig {
  float tau_init = 0.07f;
  bool learn_tau = true;
  /// Augmentation noise on the unit sphere.
  float sigma = 0.05f;
  float lambda_modal = 0.1f;
  float lambda_content = 0.1f;
  float lambda_inter = 0.1f;

  bool operator==(const ContrastiveConfig&) const = default;
};

struct DiffusionRunConfig {
  std::size_t timesteps = 200;
  GuidanceConfig guidance;
  DenoiserConfig denoiser;
  /// Reverse-chain length used by evaluation and sampling.
  std::size_t sample_steps = 50;

  bool operator==(const DiffusionRunConfig&) const = default;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  float learning_rate = 1e-3f;
  float clip_norm = 1.0f;
  /// Trailing samples of the dataset held out for validation.
  std::size_t validation_count = 32;
  /// 0 writes only the final checkpoint.
  std::size_t checkpoint_every = 0;
  std::size_t log_every = 50;
  std::string checkpoint = "run.c3ck";
  std::string loss_log;

  bool operator==(const TrainConfig&) const = default;
};

/// Each flag independently removes one component; all true is the full model.
struct AblationSwitches {
  bool augmentation = true;
  bool modal = true;
  bool content = true;
  bool inter_sphere = true;

  bool operator==(const AblationSwitches&) const = default;
};

struct RunConfig {
  /// Dataset file; empty means generate from `manifest` in memory.
  std::string dataset;
  DatasetManifest manifest;
  EncoderConfig encoder;
  ContrastiveConfig contrastive;
  ImputeConfig impute;
  DiffusionRunConfig diffusion;
  TrainConfig train;
  AblationSwitches ablation;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Grammar, line based:
///   line    := blank | comment | section | entry
///   comment := '#' anything
///   section := '[' name ']'
///   entry   := key '=' value
/// Keys are only valid inside their section. Lists are comma separated,
/// booleans are true/false. Unknown sections or keys and repeated keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text listing every field in a fixed order. parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& config);

/// 16 hex digits of FNV-1a 64 over to_text(config), with output paths and logging cadence reset.
std::string fingerprint(const RunConfig& config);

}  // namespace stsr
