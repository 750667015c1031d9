#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "stsr/tensor.hpp"

namespace stsr {

/// Which of a loss's two feature matrices a row comes from.
enum class Side : std::uint8_t { first, second };

struct RowRef {
  Side side;
  std::size_t index;
  bool operator==(const RowRef&) const = default;
};

/// One anchor with its positive and negative rows.
struct PairScheme {
  RowRef anchor;
  std::vector<RowRef> positives;
  std::vector<RowRef> negatives;
};

/// Modal loss over (M_h, M_y_hat): anchors in one modality, positives are the other
/// rows of the same modality, negatives every row of the other modality. Both directions.
std::vector<PairScheme> modal_pairs(std::size_t n);
/// Content loss over (C_h, C_y_hat): positive is the same sample in the other modality,
/// negatives are every other sample in both modalities. Both directions.
std::vector<PairScheme> content_pairs(std::size_t n);
/// Inter-sphere loss over (M_h, C_h): anchor M_h[j], positive C_h[j], negatives C_h[k != j].
std::vector<PairScheme> inter_sphere_pairs(std::size_t n);

/// Mean over positives of -log(e^{z.p/tau} / (e^{z.p/tau} + sum_k e^{z.n_k/tau})).
/// z is [D], positives [P, D], negatives [K, D], tau a positive scalar tensor.
Tensor info_nce(const Tensor& z, const Tensor& positives, const Tensor& negatives, const Tensor& tau);

/// Evaluates a scheme list over features [N, D] each. Each anchor contributes the mean
/// over its positives; anchors are averaged within a direction; directions are summed.
Tensor scheme_loss(const Tensor& first, const Tensor& second, const std::vector<PairScheme>& schemes,
                   const Tensor& tau);

Tensor loss_modal(const Tensor& m_h, const Tensor& m_y_hat, const Tensor& tau);
Tensor loss_content(const Tensor& c_h, const Tensor& c_y_hat, const Tensor& tau);
Tensor loss_inter_sphere(const Tensor& m_h, const Tensor& c_h, const Tensor& tau);

struct AlignmentUniformity {
  double alignment;
  double uniformity;
};

/// alignment: mean squared distance of matched rows.
/// uniformity: log mean exp(-2 |u - v|^2) over unmatched pairs, pooled from pairs inside
/// a, pairs inside b, and cross pairs (a_i, b_j) with i != j. Needs N >= 2.
AlignmentUniformity alignment_uniformity(const Tensor& a, const Tensor& b);

}  // namespace stsr
