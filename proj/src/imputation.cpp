#include "stsr/imputation.hpp"

#include <algorithm>
#include <cmath>

#include "stsr/errors.hpp"
#include "stsr/ops.hpp"

namespace stsr {

namespace {

thread_local std::size_t weight_evaluations = 0;

std::vector<std::size_t> rows_where(const std::vector<bool>& present, bool value) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (present[i] == value) {
      rows.push_back(i);
    }
  }
  return rows;
}

Tensor similarity_weights(const Tensor& queries, const Tensor& keys, float temperature) {
  ++weight_evaluations;
  return softmax_rows(scale(matmul(queries, transpose(keys)), 1.0f / temperature));
}

Tensor uniform_weights(std::size_t rows, std::size_t present) {
  ++weight_evaluations;
  return Tensor::full({rows, present}, 1.0f / static_cast<float>(present));
}

}  // namespace

std::string to_string(ImputationMode mode) {
  switch (mode) {
    case ImputationMode::dynamic:
      return "dynamic";
    case ImputationMode::dropout:
      return "dropout";
    case ImputationMode::zero_padding:
      return "zero-padding";
    case ImputationMode::arithmetic_average:
      return "arithmetic-average";
  }
  return "unknown";
}

ImputationMode imputation_mode_from_string(const std::string& name) {
  for (auto m : {ImputationMode::dynamic, ImputationMode::dropout, ImputationMode::zero_padding,
                 ImputationMode::arithmetic_average}) {
    if (to_string(m) == name) {
      return m;
    }
  }
  throw ConfigError("unknown imputation mode '" + name +
                    "' (expected dynamic, dropout, zero-padding or arithmetic-average)");
}

void ImputeConfig::validate() const {
  if (!(temperature > 0.0f)) {
    throw InvalidArgument("imputation temperature must be positive");
  }
  if (alpha0 < 0.0f || alpha0 > 1.0f || beta0 < 0.0f || beta0 > 1.0f) {
    throw InvalidArgument("imputation factors must lie in [0, 1]");
  }
  if (decay_fraction < 0.0 || decay_fraction > 1.0) {
    throw InvalidArgument("imputation decay fraction must lie in [0, 1]");
  }
}

std::pair<float, float> decay(const ImputeConfig& config, std::size_t step, std::size_t decay_steps) {
  if (step >= decay_steps) {
    return {0.0f, 0.0f};
  }
  const double keep = 1.0 - static_cast<double>(step) / static_cast<double>(decay_steps);
  return {static_cast<float>(config.alpha0 * keep), static_cast<float>(config.beta0 * keep)};
}

ImputedRows impute(const Tensor& m_h, const Tensor& c_h, const Tensor& m_y_present, const Tensor& c_y_present,
                   const std::vector<bool>& present, float alpha, float beta, float temperature,
                   ImputationMode mode) {
  if (m_h.rank() != 2 || m_h.shape() != c_h.shape() || m_h.dim(0) != present.size()) {
    throw DimensionError("impute: histology features " + shape_string(m_h.shape()) + " / " +
                         shape_string(c_h.shape()) + " do not match a batch of " + std::to_string(present.size()));
  }
  const auto present_rows = rows_where(present, true);
  const auto missing_rows = rows_where(present, false);
  const std::size_t d = m_h.dim(1);
  const std::size_t l = missing_rows.size();
  const std::size_t p = present_rows.size();
  if (p > 0 && (m_y_present.shape() != Shape{p, d} || c_y_present.shape() != Shape{p, d})) {
    throw DimensionError("impute: present ST features " + shape_string(m_y_present.shape()) + " / " +
                         shape_string(c_y_present.shape()) + " do not match " + std::to_string(p) + " present rows");
  }
  if (!(temperature > 0.0f)) {
    throw InvalidArgument("imputation temperature must be positive");
  }
  if (mode == ImputationMode::dropout && l > 0) {
    throw ImputationError("dropout mode never imputes; the batch must contain present samples only");
  }

  ImputedRows out;
  if (l == 0) {
    return out;
  }
  const bool zero = mode == ImputationMode::zero_padding || (alpha == 0.0f && beta == 0.0f);
  if (zero) {
    out.m_tilde = Tensor::zeros({l, d});
    out.c_tilde = Tensor::zeros({l, d});
    return out;
  }
  if (p == 0) {
    throw ImputationError("cannot impute: no sample in the batch has a low-resolution map; "
                          "use zero-padding mode or let alpha and beta decay to zero");
  }

  const Tensor m_missing = gather_rows(m_h, missing_rows);
  const Tensor c_missing = gather_rows(c_h, missing_rows);
  if (mode == ImputationMode::arithmetic_average) {
    out.weights_m = uniform_weights(l, p);
    out.weights_c = out.weights_m;
  } else {
    out.weights_m = similarity_weights(m_missing, gather_rows(m_h, present_rows), temperature);
    out.weights_c = similarity_weights(c_missing, gather_rows(c_h, present_rows), temperature);
  }
  out.m_tilde = scale(matmul(out.weights_m, m_y_present), alpha);
  out.c_tilde = scale(matmul(out.weights_c, c_y_present), beta);
  return out;
}

EmbeddingSet assemble_embeddings(const Tensor& m_h, const Tensor& c_h, const Tensor& m_y_present,
                                 const Tensor& c_y_present, const ImputedRows& imputed,
                                 const std::vector<bool>& present) {
  const auto present_rows = rows_where(present, true);
  const auto missing_rows = rows_where(present, false);
  EmbeddingSet e{m_h, c_h, Tensor(), Tensor(), present};
  auto merge = [&](const Tensor& have, const Tensor& filled) {
    if (missing_rows.empty()) {
      return have;
    }
    if (present_rows.empty()) {
      return filled;
    }
    // Row r of [have; filled] lands at batch slot order[r]; invert to gather in batch order.
    std::vector<std::size_t> source(present.size());
    for (std::size_t i = 0; i < present_rows.size(); ++i) {
      source[present_rows[i]] = i;
    }
    for (std::size_t i = 0; i < missing_rows.size(); ++i) {
      source[missing_rows[i]] = present_rows.size() + i;
    }
    return gather_rows(concat_rows(std::vector<Tensor>{have, filled}), source);
  };
  e.m_y_hat = merge(m_y_present, imputed.m_tilde);
  e.c_y_hat = merge(c_y_present, imputed.c_tilde);
  return e;
}

std::size_t imputation_weight_evaluations() { return weight_evaluations; }

void reset_imputation_weight_evaluations() { weight_evaluations = 0; }

}  // namespace stsr
