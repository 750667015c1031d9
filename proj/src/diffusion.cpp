#include "stsr/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stsr/errors.hpp"
#include "stsr/ops.hpp"

namespace stsr {

DiffusionSchedule DiffusionSchedule::cosine(std::size_t steps) {
  if (steps == 0) {
    throw InvalidArgument("diffusion schedule needs at least one timestep");
  }
  constexpr double offset = 0.008;
  auto f = [](double u) {
    const double c = std::cos((u + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  DiffusionSchedule s;
  s.alpha_bar_.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    s.alpha_bar_[t] = f(static_cast<double>(t + 1) / static_cast<double>(steps)) / f(0.0);
  }
  // The final value is exactly zero in closed form; keep it tiny but positive so the
  // clean-signal estimate stays defined at the first sampling step.
  s.alpha_bar_.back() = std::min(1e-6, steps > 1 ? s.alpha_bar_[steps - 2] / 2.0 : 1e-6);
  return s;
}

double DiffusionSchedule::alpha_bar(std::size_t t) const {
  if (t >= alpha_bar_.size()) {
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(alpha_bar_.size()) + ")");
  }
  return alpha_bar_[t];
}

double DiffusionSchedule::a(std::size_t t) const { return std::sqrt(alpha_bar(t)); }

double DiffusionSchedule::sigma(std::size_t t) const { return std::sqrt(1.0 - alpha_bar(t)); }

void GuidanceConfig::validate() const {
  if (!(drop_probability >= 0.0f && drop_probability <= 1.0f)) {
    throw InvalidArgument("condition drop probability must lie in [0, 1]");
  }
  if (!std::isfinite(omega)) {
    throw InvalidArgument("guidance weight must be finite");
  }
}

void DenoiserConfig::validate() const {
  if (base_width == 0 || time_dim < 2 || time_dim % 2 != 0) {
    throw InvalidArgument("denoiser needs a positive width and an even time embedding size");
  }
}

Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<float> out(t.size() * dim);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double angle = static_cast<double>(t[b]) * freq;
      out[b * dim + i] = static_cast<float>(std::sin(angle));
      out[b * dim + half + i] = static_cast<float>(std::cos(angle));
    }
  }
  return Tensor::from_data({t.size(), dim}, std::move(out));
}

Tensor Denoiser::Block::forward(const Tensor& x, const Tensor& time_hidden) const {
  return silu(add_channel_bias(conv.forward(x), time_bias.forward(time_hidden)));
}

Denoiser::Denoiser(ParameterStore& store, const DenoiserConfig& config, std::size_t genes,
                   std::size_t condition_channels)
    : config_(config), genes_(genes), condition_channels_(condition_channels) {
  config.validate();
  if (genes == 0) {
    throw InvalidArgument("denoiser needs at least one gene channel");
  }
  Rng rng(config.seed);
  const std::size_t w = config.base_width;
  const std::size_t hidden = 2 * config.time_dim;
  time_in_ = Linear(store, "den.time_in", config.time_dim, hidden, rng);
  time_out_ = Linear(store, "den.time_out", hidden, hidden, rng);
  auto block = [&](const std::string& name, std::size_t in, std::size_t out) {
    return Block{Conv3x3(store, name + ".conv", in, out, rng), Linear(store, name + ".time", hidden, out, rng)};
  };
  in_ = block("den.in", genes + condition_channels, w);
  mid_ = block("den.mid", w, w);
  down_a_ = block("den.down_a", w, 2 * w);
  down_b_ = block("den.down_b", 2 * w, 2 * w);
  up_ = block("den.up", 3 * w, w);
  out_ = Conv3x3(store, "den.out", w, genes, rng);
  // Start close to a zero predictor so the first losses sit near the unit-variance baseline.
  for (auto& v : out_.weight.mutable_data()) {
    v *= 0.1f;
  }
}

Tensor Denoiser::forward(const Tensor& x_t, std::span<const std::size_t> t, const Tensor& condition) const {
  if (x_t.rank() != 4 || x_t.dim(1) != genes_ || condition.rank() != 4 || condition.dim(0) != x_t.dim(0) ||
      condition.dim(1) != condition_channels_ || condition.dim(2) != x_t.dim(2) || condition.dim(3) != x_t.dim(3)) {
    throw DimensionError("denoiser expects x_t [B, " + std::to_string(genes_) + ", H, W] and condition [B, " +
                         std::to_string(condition_channels_) + ", H, W], got " + shape_string(x_t.shape()) +
                         " and " + shape_string(condition.shape()));
  }
  if (t.size() != x_t.dim(0)) {
    throw DimensionError("denoiser got " + std::to_string(t.size()) + " timesteps for a batch of " +
                         std::to_string(x_t.dim(0)));
  }
  if (x_t.dim(2) % 2 != 0 || x_t.dim(3) % 2 != 0) {
    throw DimensionError("denoiser needs even spatial sides, got " + shape_string(x_t.shape()));
  }
  const Tensor hidden =
      silu(time_out_.forward(silu(time_in_.forward(timestep_embedding(t, config_.time_dim)))));
  const Tensor skip = mid_.forward(in_.forward(concat_channels(std::vector<Tensor>{x_t, condition}), hidden), hidden);
  const Tensor low = down_b_.forward(down_a_.forward(avg_pool2d(skip, 2), hidden), hidden);
  const Tensor merged = concat_channels(std::vector<Tensor>{upsample_nearest(low, 2), skip});
  return out_.forward(up_.forward(merged, hidden));
}

EpsModel Denoiser::as_model() const {
  return [this](const Tensor& x, std::span<const std::size_t> t, const Tensor& c) { return forward(x, t, c); };
}

Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& schedule) {
  if (t >= schedule.steps()) {
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(schedule.steps()) + ")");
  }
  if (x0.shape() != eps.shape()) {
    throw DimensionError("forward_noise: x0 " + shape_string(x0.shape()) + " and eps " + shape_string(eps.shape()) +
                         " differ");
  }
  return add(scale(x0, static_cast<float>(schedule.a(t))), scale(eps, static_cast<float>(schedule.sigma(t))));
}

Tensor to_model_space(const Tensor& x) { return add_scalar(scale(x, 2.0f), -1.0f); }

Tensor to_data_space(const Tensor& x) {
  std::vector<float> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp((xd[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

Tensor mse_objective(const EpsModel& model, const Tensor& x0, const Tensor& condition,
                     const DiffusionSchedule& schedule, float drop_probability, std::span<Rng> sample_rngs,
                     std::vector<NoiseDraw>* draws) {
  if (x0.rank() != 4 || sample_rngs.size() != x0.dim(0)) {
    throw DimensionError("mse_objective expects x0 [B, G, H, W] and one generator per sample, got " +
                         shape_string(x0.shape()) + " with " + std::to_string(sample_rngs.size()) + " generators");
  }
  const std::size_t b = x0.dim(0);
  const std::size_t per = x0.numel() / b;
  std::vector<std::size_t> t(b);
  std::vector<float> keep(b);
  std::vector<float> eps(x0.numel());
  std::vector<float> x_t(x0.numel());
  const auto xd = x0.data();
  for (std::size_t i = 0; i < b; ++i) {
    Rng& rng = sample_rngs[i];
    t[i] = static_cast<std::size_t>(rng.below(schedule.steps()));
    keep[i] = rng.uniform() < drop_probability ? 0.0f : 1.0f;
    const float a = static_cast<float>(schedule.a(t[i]));
    const float s = static_cast<float>(schedule.sigma(t[i]));
    for (std::size_t j = 0; j < per; ++j) {
      const float e = static_cast<float>(rng.normal());
      eps[i * per + j] = e;
      x_t[i * per + j] = a * xd[i * per + j] + s * e;
    }
  }
  if (draws != nullptr) {
    draws->clear();
    for (std::size_t i = 0; i < b; ++i) {
      draws->push_back({t[i], keep[i] == 0.0f});
    }
  }
  const Tensor noisy = Tensor::from_data(x0.shape(), std::move(x_t));
  const Tensor target = Tensor::from_data(x0.shape(), std::move(eps));
  return mse(model(noisy, t, scale_batch(condition, keep)), target);
}

Tensor guided_eps(const EpsModel& model, const Tensor& x_t, std::span<const std::size_t> t, const Tensor& condition,
                  const Tensor& null_condition, float omega) {
  if (condition.shape() != null_condition.shape()) {
    throw DimensionError("guided_eps: condition " + shape_string(condition.shape()) + " and null condition " +
                         shape_string(null_condition.shape()) + " differ");
  }
  const Tensor cond = model(x_t, t, condition);
  const Tensor uncond = model(x_t, t, null_condition);
  return add(scale(cond, omega), scale(uncond, 1.0f - omega));
}

std::vector<std::size_t> sampling_timesteps(const DiffusionSchedule& schedule, std::size_t count) {
  const std::size_t total = schedule.steps();
  if (count == 0 || count > total) {
    throw InvalidArgument("sampling steps must lie in [1, " + std::to_string(total) + "], got " +
                          std::to_string(count));
  }
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = count == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(total - 1) /
                                              static_cast<double>(count - 1);
    out[i] = total - 1 - static_cast<std::size_t>(std::llround(pos));
  }
  return out;
}

Tensor sample(const EpsModel& model, const Tensor& condition, std::size_t genes, const DiffusionSchedule& schedule,
              float omega, std::size_t steps, std::span<Rng> sample_rngs) {
  NoGradGuard no_grad;
  if (condition.rank() != 4 || sample_rngs.size() != condition.dim(0)) {
    throw DimensionError("sample expects a condition [B, C, H, W] and one generator per sample, got " +
                         shape_string(condition.shape()) + " with " + std::to_string(sample_rngs.size()) +
                         " generators");
  }
  const std::size_t b = condition.dim(0);
  const Shape shape{b, genes, condition.dim(2), condition.dim(3)};
  const std::size_t per = shape_numel(shape) / b;
  std::vector<float> x(shape_numel(shape));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < per; ++j) {
      x[i * per + j] = static_cast<float>(sample_rngs[i].normal());
    }
  }
  const Tensor null_condition = Tensor::zeros(condition.shape());
  const auto timesteps = sampling_timesteps(schedule, steps);
  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    const std::size_t t = timesteps[k];
    const std::vector<std::size_t> tb(b, t);
    const Tensor xt = Tensor::from_data(shape, x);
    const Tensor eps = omega == 1.0f ? model(xt, tb, condition)
                                     : guided_eps(model, xt, tb, condition, null_condition, omega);
    const auto ed = eps.data();
    const double ab = schedule.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double s = std::sqrt(1.0 - ab);
    const bool last = k + 1 == timesteps.size();
    const double ab_prev = last ? 1.0 : schedule.alpha_bar(timesteps[k + 1]);
    const double step_alpha = ab / ab_prev;
    const double step_beta = 1.0 - step_alpha;
    const double c0 = std::sqrt(ab_prev) * step_beta / (1.0 - ab);
    const double ct = std::sqrt(step_alpha) * (1.0 - ab_prev) / (1.0 - ab);
    const double sd = std::sqrt(std::max(0.0, step_beta * (1.0 - ab_prev) / (1.0 - ab)));
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < per; ++j) {
        const std::size_t idx = i * per + j;
        const double x0 = std::clamp((x[idx] - s * ed[idx]) / a, -1.0, 1.0);
        if (last) {
          x[idx] = static_cast<float>(x0);
        } else {
          x[idx] = static_cast<float>(c0 * x0 + ct * x[idx] + sd * sample_rngs[i].normal());
        }
      }
    }
  }
  return to_data_space(Tensor::from_data(shape, std::move(x)));
}

}  // namespace stsr
