#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "stsr/encoders.hpp"
#include "stsr/tensor.hpp"

namespace stsr {

enum class ImputationMode { dynamic, dropout, zero_padding, arithmetic_average };

std::string to_string(ImputationMode mode);
/// Throws ConfigError on unknown names.
ImputationMode imputation_mode_from_string(const std::string& name);

struct ImputeConfig {
  /// Softmax temperature over histology similarities. Fixed, not learned.
  float temperature = 0.1f;
  float alpha0 = 1.0f;
  float beta0 = 1.0f;
  /// Fraction of the training run over which alpha and beta fall linearly to zero.
  double decay_fraction = 0.5;
  ImputationMode mode = ImputationMode::dynamic;

  void validate() const;
  bool operator==(const ImputeConfig&) const = default;
};

/// Linear decay from (alpha0, beta0) at step 0 to exactly 0 at decay_steps, clamped after.
std::pair<float, float> decay(const ImputeConfig& config, std::size_t step, std::size_t decay_steps);

struct ImputedRows {
  /// [L, D] rows for the missing samples, in batch order.
  Tensor m_tilde;
  Tensor c_tilde;
  /// [L, P] weights over present samples. Undefined when none were computed.
  Tensor weights_m;
  Tensor weights_c;
};

/// Fills the L missing rows of the ST features from the P present ones.
/// m_h, c_h are [N, D]; m_y_present, c_y_present are [P, D] in batch order.
/// zero_padding mode, or alpha == beta == 0, yields exact zero rows without computing weights.
/// Throws ImputationError when a positive factor meets an empty present set.
ImputedRows impute(const Tensor& m_h, const Tensor& c_h, const Tensor& m_y_present, const Tensor& c_y_present,
                   const std::vector<bool>& present, float alpha, float beta, float temperature,
                   ImputationMode mode = ImputationMode::dynamic);

/// Interleaves present and imputed rows back into batch order.
EmbeddingSet assemble_embeddings(const Tensor& m_h, const Tensor& c_h, const Tensor& m_y_present,
                                 const Tensor& c_y_present, const ImputedRows& imputed,
                                 const std::vector<bool>& present);

/// Number of times imputation weights have been evaluated on this thread.
std::size_t imputation_weight_evaluations();
void reset_imputation_weight_evaluations();

}  // namespace stsr
