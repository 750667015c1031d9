#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stsr/nn.hpp"
#include "stsr/rng.hpp"
#include "stsr/tensor.hpp"

namespace stsr {

/// Variance-preserving schedule: x_t = a_t x0 + sigma_t eps with a_t^2 + sigma_t^2 = 1.
class DiffusionSchedule {
 public:
  /// Cosine schedule over `steps` timesteps, offset 0.008.
  static DiffusionSchedule cosine(std::size_t steps);

  std::size_t steps() const { return alpha_bar_.size(); }
  double alpha_bar(std::size_t t) const;
  double a(std::size_t t) const;
  double sigma(std::size_t t) const;

 private:
  std::vector<double> alpha_bar_;
};

struct GuidanceConfig {
  float omega = 1.0f;
  /// Probability of training a sample against the null (all-zero) condition.
  float drop_probability = 0.1f;

  void validate() const;
  bool operator==(const GuidanceConfig&) const = default;
};

struct DenoiserConfig {
  std::size_t base_width = 32;
  std::size_t time_dim = 32;
  std::uint64_t seed = 23;

  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

/// Noise predictor: (x_t [B, G, H, W], timesteps, condition [B, Cb, H, W]) -> [B, G, H, W].
using EpsModel = std::function<Tensor(const Tensor& x_t, std::span<const std::size_t> t, const Tensor& condition)>;

/// Two-level UNet with SiLU activations. Timesteps are embedded sinusoidally, passed through a small MLP and
/// added as a per-channel bias in every block. H and W must be even.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(ParameterStore& store, const DenoiserConfig& config, std::size_t genes, std::size_t condition_channels);

  Tensor forward(const Tensor& x_t, std::span<const std::size_t> t, const Tensor& condition) const;
  EpsModel as_model() const;

  std::size_t genes() const { return genes_; }
  std::size_t condition_channels() const { return condition_channels_; }

 private:
  struct Block {
    Conv3x3 conv;
    Linear time_bias;
    Tensor forward(const Tensor& x, const Tensor& time_hidden) const;
  };

  DenoiserConfig config_;
  std::size_t genes_ = 0;
  std::size_t condition_channels_ = 0;
  Linear time_in_;
  Linear time_out_;
  Block in_;
  Block mid_;
  Block down_a_;
  Block down_b_;
  Block up_;
  Conv3x3 out_;
};

/// Sinusoidal embedding [B, dim] of integer timesteps.
Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim);

/// a_t x0 + sigma_t eps. Throws InvalidArgument when t is outside [0, T).
Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& schedule);

/// Data in [0, 1] is modelled as 2x - 1.
Tensor to_model_space(const Tensor& x);
/// Inverse of to_model_space, clamped to [0, 1].
Tensor to_data_space(const Tensor& x);

/// What one objective evaluation drew for each sample.
struct NoiseDraw {
  std::size_t t = 0;
  bool dropped = false;
};

/// Mean over batch and elements of (eps - eps_model(x_t, condition))^2 with x0 in model space.
/// Each sample draws t ~ U{0..T-1}, then the condition drop, then eps, from its own generator.
Tensor mse_objective(const EpsModel& model, const Tensor& x0, const Tensor& condition,
                     const DiffusionSchedule& schedule, float drop_probability, std::span<Rng> sample_rngs,
                     std::vector<NoiseDraw>* draws = nullptr);

/// omega * eps(x_t, condition) + (1 - omega) * eps(x_t, null_condition).
Tensor guided_eps(const EpsModel& model, const Tensor& x_t, std::span<const std::size_t> t,
                  const Tensor& condition, const Tensor& null_condition, float omega);

/// Evenly spaced descending timesteps from T-1 to 0, `count` of them.
std::vector<std::size_t> sampling_timesteps(const DiffusionSchedule& schedule, std::size_t count);

/// Ancestral reverse chain from pure noise. Returns data-space maps [B, G, H, W] in [0, 1].
/// With omega == 1 the unconditional branch is skipped since its weight is zero.
Tensor sample(const EpsModel& model, const Tensor& condition, std::size_t genes, const DiffusionSchedule& schedule,
              float omega, std::size_t steps, std::span<Rng> sample_rngs);

}  // namespace stsr
