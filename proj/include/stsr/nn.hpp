#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "stsr/rng.hpp"
#include "stsr/tensor.hpp"

namespace stsr {

/// Named trainable tensors in registration order. Order is part of the
/// checkpoint layout, so modules must register deterministically.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Shape shape, Rng& rng, float init_std);
  Tensor add_constant(const std::string& name, Shape shape, float value);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Fully connected layer, y = x W + b with W [in, out].
struct Linear {
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;

  Tensor weight;
  Tensor bias;
};

/// 3x3 same-padding convolution layer with He-style initialization.
struct Conv3x3 {
  Conv3x3() = default;
  Conv3x3(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;

  Tensor weight;
  Tensor bias;
};

struct AdamConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  /// Global gradient-norm clip; 0 disables clipping.
  float clip_norm = 1.0f;
};

/// Adam with bias correction. Moments are kept per parameter in store order.
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterStore& store, AdamConfig config);

  /// Applies one update from the gradients currently held by the store.
  /// Returns the pre-clip global gradient norm.
  double step(ParameterStore& store);

  std::size_t steps_taken() const { return step_; }
  void set_steps_taken(std::size_t step) { step_ = step; }
  std::vector<std::vector<float>>& first_moments() { return m_; }
  std::vector<std::vector<float>>& second_moments() { return v_; }
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

}  // namespace stsr
