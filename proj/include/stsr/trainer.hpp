#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stsr/config.hpp"
#include "stsr/diffusion.hpp"
#include "stsr/encoders.hpp"
#include "stsr/evaluate.hpp"
#include "stsr/nn.hpp"
#include "stsr/rng.hpp"
#include "stsr/synth_data.hpp"

namespace stsr {

/// Scalars of one optimization step. A contrastive term that was not computed
/// (switched off, or too few ST maps in the batch) is absent rather than zero.
struct LossReport {
  std::size_t step = 0;
  double total = 0.0;
  double mse = 0.0;
  std::optional<double> modal;
  std::optional<double> content;
  std::optional<double> inter_sphere;
  double tau = 0.0;
  double alpha = 0.0;
  double beta = 0.0;

  bool operator==(const LossReport&) const = default;
};

inline constexpr const char* kLossLogHeader = "step,total,mse,modal,content,inter_sphere,tau,alpha,beta";
std::string to_csv_row(const LossReport& report);

inline constexpr char kCheckpointMagic[4] = {'C', '3', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Loads the file named by config.dataset, or generates one from the manifest.
Dataset load_run_dataset(const RunConfig& config);

struct PredictOptions {
  float omega = 1.0f;
  /// 0 uses the configured reverse-chain length.
  std::size_t steps = 0;
  /// Condition on histology only: every LR map is replaced by zeros and ST features by zero rows.
  bool no_lr_st = false;
  std::uint64_t seed = 0;
  /// Sample i is conditioned on the histology of sample histology_source[i] when given.
  std::vector<std::size_t> histology_source;
};

/// Parameters, optimizer moments, RNG state and step counter of one run, plus the
/// loop that advances them.
class Trainer {
 public:
  Trainer(RunConfig config, std::shared_ptr<const Dataset> data);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Rebuilds a run from checkpoint bytes; the embedded config decides the architecture.
  static std::unique_ptr<Trainer> from_checkpoint(std::span<const std::uint8_t> bytes,
                                                  std::shared_ptr<const Dataset> data);
  static std::unique_ptr<Trainer> from_checkpoint_file(const std::filesystem::path& path,
                                                       std::shared_ptr<const Dataset> data);
  /// Reads only the config embedded in a checkpoint.
  static RunConfig checkpoint_config(std::span<const std::uint8_t> bytes);

  const RunConfig& config() const { return config_; }
  const Dataset& dataset() const { return *data_; }
  std::size_t step() const { return step_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  float alpha() const { return alpha_; }
  float beta() const { return beta_; }

  /// One optimization step. Throws NumericalError naming the first non-finite tensor.
  LossReport train_step();
  /// Runs `steps` steps, writing periodic checkpoints and the loss log when configured.
  std::vector<LossReport> train(std::size_t steps, const std::function<void(const LossReport&)>& on_log = {});

  std::vector<std::uint8_t> checkpoint_bytes() const;
  void save_checkpoint(const std::filesystem::path& path) const;

  /// Trailing config.train.validation_count samples, clamped to the dataset size.
  std::vector<std::size_t> validation_indices() const;
  std::vector<std::size_t> training_indices() const;

  /// Sampled HR maps [G, H, W] in [0, 1], one per index.
  std::vector<Tensor> predict(std::span<const std::size_t> indices, const PredictOptions& options) const;
  MetricReport evaluate(std::span<const std::size_t> indices, const PredictOptions& options,
                        const std::string& label) const;

 private:
  struct Batch;
  Batch assemble(const std::vector<std::size_t>& indices, bool zero_lr,
                 const std::vector<std::size_t>* histology_source) const;
  std::vector<std::size_t> draw_batch();
  void restore(std::span<const std::uint8_t> bytes);
  std::size_t decay_steps() const;

  RunConfig config_;
  std::shared_ptr<const Dataset> data_;
  ParameterStore store_;
  EncoderBank encoders_;
  Denoiser denoiser_;
  Tensor log_tau_;
  Adam adam_;
  DiffusionSchedule schedule_;
  Rng rng_;
  std::size_t step_ = 0;
  float alpha_ = 0.0f;
  float beta_ = 0.0f;
  std::vector<std::size_t> present_pool_;
  std::vector<std::size_t> missing_pool_;
};

/// Ablation rows, in report order.
inline const std::vector<std::string> kAblationRows{"full",         "no-augmentation", "no-modal",
                                                     "no-content",   "no-inter-sphere", "dropout",
                                                     "zero-padding", "arithmetic-average"};

/// The baseline config with exactly one component changed. Throws ConfigError on unknown rows.
RunConfig ablation_config(const RunConfig& base, const std::string& row);

/// Trains the row's variant with the baseline's seed and step count, then evaluates it on
/// the validation split. The report label is the row name.
MetricReport ablate(const RunConfig& base, const std::string& row, std::shared_ptr<const Dataset> data,
                    const PredictOptions& options = {});

}  // namespace stsr
