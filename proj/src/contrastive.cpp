#include "stsr/contrastive.hpp"

#include <cmath>

#include "stsr/errors.hpp"
#include "stsr/ops.hpp"

namespace stsr {

namespace {

void require_batch(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": feature matrices must share shape [N, D], got " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  if (a.dim(0) < 2) {
    throw InvalidArgument(std::string(what) + " needs at least 2 samples, got " + std::to_string(a.dim(0)));
  }
}

void require_tau(const Tensor& tau) {
  if (tau.numel() != 1) {
    throw DimensionError("temperature must be a single value, got " + shape_string(tau.shape()));
  }
  if (!(tau.item() > 0.0f)) {
    throw DomainError("temperature must be positive, got " + std::to_string(tau.item()));
  }
}

}  // namespace

std::vector<PairScheme> modal_pairs(std::size_t n) {
  std::vector<PairScheme> out;
  for (Side side : {Side::first, Side::second}) {
    const Side other = side == Side::first ? Side::second : Side::first;
    for (std::size_t j = 0; j < n; ++j) {
      PairScheme s{{side, j}, {}, {}};
      for (std::size_t k = 0; k < n; ++k) {
        if (k != j) {
          s.positives.push_back({side, k});
        }
        s.negatives.push_back({other, k});
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<PairScheme> content_pairs(std::size_t n) {
  std::vector<PairScheme> out;
  for (Side side : {Side::first, Side::second}) {
    const Side other = side == Side::first ? Side::second : Side::first;
    for (std::size_t j = 0; j < n; ++j) {
      PairScheme s{{side, j}, {{other, j}}, {}};
      for (std::size_t k = 0; k < n; ++k) {
        if (k != j) {
          s.negatives.push_back({side, k});
          s.negatives.push_back({other, k});
        }
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<PairScheme> inter_sphere_pairs(std::size_t n) {
  std::vector<PairScheme> out;
  for (std::size_t j = 0; j < n; ++j) {
    PairScheme s{{Side::first, j}, {{Side::second, j}}, {}};
    for (std::size_t k = 0; k < n; ++k) {
      if (k != j) {
        s.negatives.push_back({Side::second, k});
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

Tensor scheme_loss(const Tensor& first, const Tensor& second, const std::vector<PairScheme>& schemes,
                   const Tensor& tau) {
  require_tau(tau);
  if (schemes.empty()) {
    throw InvalidArgument("contrastive loss without anchors");
  }
  if (first.rank() != 2 || second.rank() != 2 || first.dim(1) != second.dim(1)) {
    throw DimensionError("contrastive features must be [N, D] with equal D, got " + shape_string(first.shape()) +
                         " and " + shape_string(second.shape()));
  }
  const std::size_t offset = first.dim(0);
  const std::size_t total = offset + second.dim(0);
  auto flat = [&](RowRef r) {
    const std::size_t limit = r.side == Side::first ? first.dim(0) : second.dim(0);
    if (r.index >= limit) {
      throw DimensionError("pair index " + std::to_string(r.index) + " out of range");
    }
    return (r.side == Side::first ? 0 : offset) + r.index;
  };

  const std::size_t k = schemes.front().negatives.size();
  std::size_t anchors[2] = {0, 0};
  for (const auto& s : schemes) {
    if (s.positives.empty() || s.negatives.empty()) {
      throw InvalidArgument("every anchor needs at least one positive and one negative");
    }
    if (s.negatives.size() != k) {
      throw ContractError("anchors in one loss must share their negative count");
    }
    ++anchors[static_cast<int>(s.anchor.side)];
  }

  std::vector<std::size_t> index;
  std::vector<float> weights;
  for (const auto& s : schemes) {
    const std::size_t a = flat(s.anchor);
    const float w = 1.0f / static_cast<float>(anchors[static_cast<int>(s.anchor.side)] * s.positives.size());
    for (const auto& p : s.positives) {
      index.push_back(a * total + flat(p));
      for (const auto& n : s.negatives) {
        index.push_back(a * total + flat(n));
      }
      weights.push_back(w);
    }
  }
  const std::size_t rows = weights.size();

  const Tensor stacked = concat_rows(std::vector<Tensor>{first, second});
  const Tensor logits = mul(matmul(stacked, transpose(stacked)), reciprocal(tau));
  const Tensor table = reshape(gather(logits, index), {rows, 1 + k});
  std::vector<std::size_t> positive_column(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    positive_column[r] = r * (1 + k);
  }
  const Tensor per_row = sub(logsumexp_rows(table), gather(table, positive_column));
  return sum(mul(per_row, Tensor::from_data({rows}, std::move(weights))));
}

Tensor info_nce(const Tensor& z, const Tensor& positives, const Tensor& negatives, const Tensor& tau) {
  if (z.rank() != 1 || positives.rank() != 2 || negatives.rank() != 2 || positives.dim(1) != z.dim(0) ||
      negatives.dim(1) != z.dim(0)) {
    throw DimensionError("info_nce expects z [D], positives [P, D], negatives [K, D], got " +
                         shape_string(z.shape()) + ", " + shape_string(positives.shape()) + ", " +
                         shape_string(negatives.shape()));
  }
  const std::size_t p = positives.dim(0);
  const std::size_t k = negatives.dim(0);
  if (p == 0 || k == 0) {
    throw InvalidArgument("info_nce needs at least one positive and one negative");
  }
  PairScheme s{{Side::first, 0}, {}, {}};
  for (std::size_t i = 0; i < p; ++i) {
    s.positives.push_back({Side::second, i});
  }
  for (std::size_t i = 0; i < k; ++i) {
    s.negatives.push_back({Side::second, p + i});
  }
  return scheme_loss(reshape(z, {1, z.dim(0)}), concat_rows(std::vector<Tensor>{positives, negatives}), {s}, tau);
}

Tensor loss_modal(const Tensor& m_h, const Tensor& m_y_hat, const Tensor& tau) {
  require_batch(m_h, m_y_hat, "modal loss");
  return scheme_loss(m_h, m_y_hat, modal_pairs(m_h.dim(0)), tau);
}

Tensor loss_content(const Tensor& c_h, const Tensor& c_y_hat, const Tensor& tau) {
  require_batch(c_h, c_y_hat, "content loss");
  return scheme_loss(c_h, c_y_hat, content_pairs(c_h.dim(0)), tau);
}

Tensor loss_inter_sphere(const Tensor& m_h, const Tensor& c_h, const Tensor& tau) {
  require_batch(m_h, c_h, "inter-sphere loss");
  return scheme_loss(m_h, c_h, inter_sphere_pairs(m_h.dim(0)), tau);
}

AlignmentUniformity alignment_uniformity(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError("alignment_uniformity expects two [N, D] matrices, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0);
  const std::size_t d = a.dim(1);
  if (n < 2) {
    throw InvalidArgument("uniformity needs at least 2 rows");
  }
  const auto ad = a.data();
  const auto bd = b.data();
  auto dist2 = [d](const float* u, const float* v) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(u[j]) - v[j];
      s += diff * diff;
    }
    return s;
  };
  double align = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    align += dist2(ad.data() + i * d, bd.data() + i * d);
  }
  double kernel = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i < j) {
        kernel += std::exp(-2.0 * dist2(ad.data() + i * d, ad.data() + j * d));
        kernel += std::exp(-2.0 * dist2(bd.data() + i * d, bd.data() + j * d));
        pairs += 2;
      }
      if (i != j) {
        kernel += std::exp(-2.0 * dist2(ad.data() + i * d, bd.data() + j * d));
        ++pairs;
      }
    }
  }
  return {align / static_cast<double>(n), std::log(kernel / static_cast<double>(pairs))};
}

}  // namespace stsr
