#include "stsr/encoders.hpp"

#include <algorithm>

#include "stsr/errors.hpp"
#include "stsr/ops.hpp"

namespace stsr {

void EncoderConfig::validate() const {
  if (feature_dim < 2) {
    throw InvalidArgument("encoder feature_dim must be at least 2");
  }
  if (widths.empty() || std::any_of(widths.begin(), widths.end(), [](std::size_t w) { return w == 0; })) {
    throw InvalidArgument("encoder widths must be a non-empty list of positive integers");
  }
  if (gene_embedding_dim == 0 || gene_panel == 0 || condition_planes == 0) {
    throw InvalidArgument("gene_embedding_dim, gene_panel and condition_planes must be positive");
  }
}

ConvEncoder::ConvEncoder(ParameterStore& store, const std::string& name, std::size_t in_channels,
                         const EncoderConfig& config, Rng& rng)
    : in_channels_(in_channels) {
  std::size_t in = in_channels;
  for (std::size_t i = 0; i < config.widths.size(); ++i) {
    blocks_.emplace_back(store, name + ".conv" + std::to_string(i), in, config.widths[i], rng);
    in = config.widths[i];
  }
  head_ = Linear(store, name + ".head", in, config.feature_dim, rng);
}

Tensor ConvEncoder::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels_) {
    throw DimensionError("encoder expects [B, " + std::to_string(in_channels_) + ", H, W], got " +
                         shape_string(x.shape()));
  }
  Tensor h = x;
  for (const auto& block : blocks_) {
    h = relu(block.forward(h));
    if (h.dim(2) % 2 == 0 && h.dim(3) % 2 == 0) {
      h = avg_pool2d(h, 2);
    }
  }
  return head_.forward(global_mean_pool(h));
}

std::size_t RawFeatures::present_count() const {
  return static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
}

std::vector<std::size_t> RawFeatures::present_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (present[i]) {
      rows.push_back(i);
    }
  }
  return rows;
}

std::vector<std::size_t> RawFeatures::missing_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (!present[i]) {
      rows.push_back(i);
    }
  }
  return rows;
}

Tensor norm_project(const Tensor& v) {
  if (v.rank() == 1) {
    return reshape(normalize_rows(reshape(v, {1, v.dim(0)})), {v.dim(0)});
  }
  if (v.rank() == 2) {
    return normalize_rows(v);
  }
  throw DimensionError("norm_project expects [D] or [N, D], got " + shape_string(v.shape()));
}

namespace {

Tensor noisy_projection(const Tensor& x, float sigma, std::vector<float> noise) {
  for (auto& n : noise) {
    n *= sigma;
  }
  return norm_project(add(x, Tensor::from_data(x.shape(), std::move(noise))));
}

}  // namespace

std::pair<Tensor, Tensor> augment(const Tensor& m_y, const Tensor& c_y, float sigma, std::span<Rng> row_rngs) {
  if (sigma < 0.0f) {
    throw InvalidArgument("augmentation sigma must be non-negative");
  }
  if (m_y.shape() != c_y.shape()) {
    throw DimensionError("augment heads differ: " + shape_string(m_y.shape()) + " vs " + shape_string(c_y.shape()));
  }
  if (sigma == 0.0f) {
    return {m_y, c_y};
  }
  const std::size_t rows = m_y.rank() == 1 ? 1 : m_y.dim(0);
  if (row_rngs.size() != rows) {
    throw InvalidArgument("augment needs one generator per row");
  }
  const std::size_t d = m_y.numel() / std::max<std::size_t>(rows, 1);
  std::vector<float> noise_m(m_y.numel());
  std::vector<float> noise_c(c_y.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      noise_m[r * d + j] = static_cast<float>(row_rngs[r].normal());
    }
    for (std::size_t j = 0; j < d; ++j) {
      noise_c[r * d + j] = static_cast<float>(row_rngs[r].normal());
    }
  }
  return {noisy_projection(m_y, sigma, std::move(noise_m)), noisy_projection(c_y, sigma, std::move(noise_c))};
}

std::pair<Tensor, Tensor> augment(const Tensor& m_y, const Tensor& c_y, float sigma, Rng& rng) {
  const std::size_t rows = m_y.rank() == 1 ? 1 : m_y.dim(0);
  std::vector<Rng> rngs;
  rngs.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    rngs.emplace_back(rng.next_u64());
  }
  return augment(m_y, c_y, sigma, std::span<Rng>(rngs));
}

EncoderBank::EncoderBank(ParameterStore& store, const EncoderConfig& config, std::size_t genes)
    : config_(config), genes_(genes) {
  config.validate();
  if (genes == 0) {
    throw InvalidArgument("encoder bank needs at least one gene channel");
  }
  Rng rng(config.seed);
  histology_modal_ = ConvEncoder(store, "enc.hist_modal", 3, config, rng);
  histology_content_ = ConvEncoder(store, "enc.hist_content", 3, config, rng);
  st_modal_ = ConvEncoder(store, "enc.st_modal", genes, config, rng);
  st_content_ = ConvEncoder(store, "enc.st_content", genes, config, rng);
  gene_table_ = store.add("enc.gene_table", {config.gene_panel, config.gene_embedding_dim}, rng, 1.0f);
  condition_projection_ = Linear(store, "enc.condition", 4 * config.feature_dim, config.condition_planes, rng);
}

RawFeatures EncoderBank::encode(const Tensor& histology, const Tensor& lr_present,
                                const std::vector<bool>& present) const {
  if (histology.rank() != 4 || histology.dim(1) != 3 || histology.dim(0) != present.size()) {
    throw DimensionError("histology batch " + shape_string(histology.shape()) + " does not match " +
                         std::to_string(present.size()) + " samples of shape [3, H, W]");
  }
  RawFeatures out;
  out.present = present;
  out.m_h = norm_project(histology_modal_.forward(histology));
  out.c_h = norm_project(histology_content_.forward(histology));
  const std::size_t p = out.present_count();
  if (p > 0) {
    if (!lr_present.defined() || lr_present.rank() != 4 || lr_present.dim(0) != p || lr_present.dim(1) != genes_) {
      throw DimensionError("low-resolution batch " +
                           (lr_present.defined() ? shape_string(lr_present.shape()) : std::string("[]")) +
                           " does not match " + std::to_string(p) + " present samples with " +
                           std::to_string(genes_) + " genes");
    }
    out.m_y = norm_project(st_modal_.forward(lr_present));
    out.c_y = norm_project(st_content_.forward(lr_present));
  }
  return out;
}

Tensor EncoderBank::gene_vectors(std::span<const std::vector<std::int32_t>> gene_ids) const {
  const std::size_t panel = config_.gene_panel;
  std::vector<float> weights(gene_ids.size() * panel, 0.0f);
  for (std::size_t b = 0; b < gene_ids.size(); ++b) {
    if (gene_ids[b].empty()) {
      throw InvalidArgument("sample has an empty gene panel");
    }
    const float w = 1.0f / static_cast<float>(gene_ids[b].size());
    for (auto id : gene_ids[b]) {
      if (id < 0 || static_cast<std::size_t>(id) >= panel) {
        throw InvalidArgument("gene id " + std::to_string(id) + " outside the embedding table of " +
                              std::to_string(panel) + " rows");
      }
      weights[b * panel + static_cast<std::size_t>(id)] += w;
    }
  }
  return matmul(Tensor::from_data({gene_ids.size(), panel}, std::move(weights)), gene_table_);
}

std::size_t EncoderBank::condition_channels() const {
  return config_.condition_planes + genes_ + config_.gene_embedding_dim + (config_.histology_planes ? 3 : 0);
}

Tensor EncoderBank::build_condition(const EmbeddingSet& e, const Tensor& lr_full, const Tensor& genes,
                                    const Tensor& histology) const {
  const std::size_t n = e.m_h.dim(0);
  const Tensor* batch[] = {&e.c_h, &e.m_y_hat, &e.c_y_hat, &genes, &lr_full, &histology};
  for (const Tensor* t : batch) {
    if (t->dim(0) != n) {
      throw DimensionError("condition inputs disagree on batch size: " + shape_string(e.m_h.shape()) + " vs " +
                           shape_string(t->shape()));
    }
  }
  const std::size_t h = histology.dim(2);
  const std::size_t w = histology.dim(3);
  if (lr_full.dim(1) != genes_ || h % lr_full.dim(2) != 0 || w % lr_full.dim(3) != 0 ||
      h / lr_full.dim(2) != w / lr_full.dim(3)) {
    throw DimensionError("low-resolution maps " + shape_string(lr_full.shape()) + " do not tile histology " +
                         shape_string(histology.shape()));
  }
  const Tensor features[] = {e.m_h, e.c_h, e.m_y_hat, e.c_y_hat};
  const Tensor planes = broadcast_planes(condition_projection_.forward(concat_cols(features)), h, w);
  std::vector<Tensor> parts{planes, upsample_nearest(lr_full, h / lr_full.dim(2)), broadcast_planes(genes, h, w)};
  if (config_.histology_planes) {
    parts.push_back(histology);
  }
  return concat_channels(parts);
}

}  // namespace stsr
