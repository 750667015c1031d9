#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stsr/tensor.hpp"

namespace stsr {

/// Parameters of a synthetic paired histology / spatial-expression dataset.
struct DatasetManifest {
  std::uint32_t count = 256;
  std::uint32_t height = 40;
  std::uint32_t width = 40;
  std::uint32_t genes = 4;
  /// Enlargement factor between the low- and high-resolution expression grids.
  std::uint32_t scale = 5;
  /// Probability that a sample's low-resolution map is absent.
  double missing_fraction = 0.25;
  std::uint64_t seed = 7;
  /// Standard deviation of per-pixel expression noise before normalization.
  double noise = 0.05;

  void validate() const;
  bool operator==(const DatasetManifest&) const = default;
};

/// One paired record. Expression and image values lie in [0, 1].
struct SpatialSample {
  Tensor histology;             // [3, H, W]
  Tensor hr_st;                 // [G, H, W]
  std::optional<Tensor> lr_st;  // [G, H/s, W/s]
  std::vector<std::int32_t> gene_ids;
  std::string sample_id;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SpatialSample> samples;
};

/// Builds the dataset from shared latent tissue fields. When `gene_latents` is
/// given it receives, per sample, the [G, H, W] noise-free field each gene map
/// is an affine image of (before noise is added).
Dataset generate(const DatasetManifest& manifest, std::vector<Tensor>* gene_latents = nullptr);

/// Block mean over s x s cells of a [G, H, W] map.
Tensor downsample(const Tensor& hr, std::size_t scale);

inline constexpr char kDatasetMagic[4] = {'C', '3', 'D', 'F'};
inline constexpr std::uint16_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace stsr
