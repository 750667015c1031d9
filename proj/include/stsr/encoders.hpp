#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stsr/nn.hpp"
#include "stsr/rng.hpp"
#include "stsr/tensor.hpp"

namespace stsr {

struct EncoderConfig {
  std::size_t feature_dim = 64;
  std::vector<std::size_t> widths{16, 32, 32};
  std::size_t gene_embedding_dim = 4;
  /// Rows of the gene-code table; every gene id must be below this.
  std::size_t gene_panel = 4;
  /// Channels produced by projecting the four feature vectors onto spatial planes.
  std::size_t condition_planes = 8;
  /// Appends the raw histology image to the conditioning bundle.
  bool histology_planes = true;
  std::uint64_t seed = 11;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// conv3x3 -> relu -> 2x average pool blocks, global mean pool, affine to D.
/// Pooling is skipped once a spatial side becomes odd.
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(ParameterStore& store, const std::string& name, std::size_t in_channels,
              const EncoderConfig& config, Rng& rng);

  /// [B, C, H, W] -> [B, D], not normalized.
  Tensor forward(const Tensor& x) const;
  std::size_t in_channels() const { return in_channels_; }

 private:
  std::size_t in_channels_ = 0;
  std::vector<Conv3x3> blocks_;
  Linear head_;
};

/// Unit-norm features for one batch. m_y / c_y hold rows for present samples only,
/// in batch order.
struct RawFeatures {
  Tensor m_h;
  Tensor c_h;
  Tensor m_y;
  Tensor c_y;
  std::vector<bool> present;

  std::size_t present_count() const;
  std::vector<std::size_t> present_rows() const;
  std::vector<std::size_t> missing_rows() const;
};

/// Per-batch feature matrices, each [N, D]. Rows of m_y_hat / c_y_hat at missing
/// samples are imputed (or zero).
struct EmbeddingSet {
  Tensor m_h;
  Tensor c_h;
  Tensor m_y_hat;
  Tensor c_y_hat;
  std::vector<bool> present;
};

/// v / |v| for a vector [D] or for every row of a matrix [N, D].
/// Zero vectors raise DegenerateInputError.
Tensor norm_project(const Tensor& v);

/// Adds N(0, sigma^2) noise to each entry, separately for the two heads, and
/// re-projects onto the sphere. sigma == 0 returns the inputs untouched.
/// row_rngs supplies one generator per row so draws follow the sample, not its batch slot.
std::pair<Tensor, Tensor> augment(const Tensor& m_y, const Tensor& c_y, float sigma,
                                  std::span<Rng> row_rngs);
std::pair<Tensor, Tensor> augment(const Tensor& m_y, const Tensor& c_y, float sigma, Rng& rng);

/// Everything the conditional feature generator owns: four encoders, the gene-code
/// table and the projection from features to condition planes.
class EncoderBank {
 public:
  EncoderBank() = default;
  EncoderBank(ParameterStore& store, const EncoderConfig& config, std::size_t genes);

  const EncoderConfig& config() const { return config_; }
  std::size_t genes() const { return genes_; }

  /// histology [B, 3, H, W]; lr_present [P, G, h, w] for the P samples flagged in present.
  RawFeatures encode(const Tensor& histology, const Tensor& lr_present,
                     const std::vector<bool>& present) const;

  /// Mean of the gene-code table rows for each sample's panel, [B, gene_embedding_dim].
  Tensor gene_vectors(std::span<const std::vector<std::int32_t>> gene_ids) const;

  /// Conditioning bundle [B, Cb, H, W]. Channel layout:
  /// condition planes | upsampled y (zero where absent) | gene planes | histology.
  /// lr_full is [B, G, h, w] with zeros on absent rows.
  Tensor build_condition(const EmbeddingSet& embeddings, const Tensor& lr_full,
                         const Tensor& gene_vectors, const Tensor& histology) const;

  std::size_t condition_channels() const;

 private:
  EncoderConfig config_;
  std::size_t genes_ = 0;
  ConvEncoder histology_modal_;
  ConvEncoder histology_content_;
  ConvEncoder st_modal_;
  ConvEncoder st_content_;
  Tensor gene_table_;
  Linear condition_projection_;
};

}  // namespace stsr
