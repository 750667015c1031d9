#include "stsr/nn.hpp"

#include <algorithm>
#include <cmath>

#include "stsr/errors.hpp"
#include "stsr/ops.hpp"

namespace stsr {

Tensor ParameterStore::add(const std::string& name, Shape shape, Rng& rng, float init_std) {
  if (contains(name)) {
    throw InvalidArgument("duplicate parameter name: " + name);
  }
  std::vector<float> values(shape_numel(shape));
  for (auto& v : values) {
    v = static_cast<float>(rng.normal() * init_std);
  }
  auto t = Tensor::from_data(std::move(shape), std::move(values), true);
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParameterStore::add_constant(const std::string& name, Shape shape, float value) {
  if (contains(name)) {
    throw InvalidArgument("duplicate parameter name: " + name);
  }
  auto t = Tensor::full(std::move(shape), value, true);
  entries_.emplace_back(name, t);
  return t;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) {
      return t;
    }
  }
  throw InvalidArgument("unknown parameter: " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    n += e.second.numel();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) {
    e.second.zero_grad();
  }
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(store.add(name + ".weight", {in, out}, rng, std::sqrt(1.0f / static_cast<float>(in)))),
      bias(store.add_constant(name + ".bias", {out}, 0.0f)) {}

Tensor Linear::forward(const Tensor& x) const { return add_row_vector(matmul(x, weight), bias); }

Conv3x3::Conv3x3(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(store.add(name + ".weight", {out, in, 3, 3}, rng, std::sqrt(2.0f / static_cast<float>(9 * in)))),
      bias(store.add_constant(name + ".bias", {out}, 0.0f)) {}

Tensor Conv3x3::forward(const Tensor& x) const { return conv2d_3x3(x, weight, bias); }

Adam::Adam(const ParameterStore& store, AdamConfig config) : config_(config) {
  for (const auto& e : store.entries()) {
    m_.emplace_back(e.second.numel(), 0.0f);
    v_.emplace_back(e.second.numel(), 0.0f);
  }
}

double Adam::step(ParameterStore& store) {
  auto& entries = store.entries();
  if (entries.size() != m_.size()) {
    throw ContractError("Adam state does not match the parameter store");
  }
  double norm2 = 0.0;
  for (auto& e : entries) {
    for (float g : e.second.grad()) {
      norm2 += static_cast<double>(g) * g;
    }
  }
  const double norm = std::sqrt(norm2);
  float clip = 1.0f;
  if (config_.clip_norm > 0.0f && norm > config_.clip_norm) {
    clip = static_cast<float>(config_.clip_norm / norm);
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(step_));
  const float lr = static_cast<float>(config_.learning_rate * std::sqrt(bc2) / bc1);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& t = entries[k].second;
    const auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = g[i] * clip;
      m[i] = config_.beta1 * m[i] + (1.0f - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0f - config_.beta2) * gi * gi;
      w[i] -= lr * m[i] / (std::sqrt(v[i]) + config_.epsilon);
    }
  }
  return norm;
}

}  // namespace stsr
