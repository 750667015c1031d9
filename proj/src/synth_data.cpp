#include "stsr/synth_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include "stsr/binary_io.hpp"
#include "stsr/errors.hpp"
#include "stsr/rng.hpp"

namespace stsr {

namespace {

constexpr std::size_t kRegions = 3;
constexpr std::uint64_t kPanelStream = 0x70616e656cULL;

struct Blob {
  double cx, cy, sigma, amplitude;
};

std::vector<double> blob_field(Rng& rng, std::size_t blobs, std::size_t h, std::size_t w) {
  std::vector<Blob> bs(blobs);
  const double extent = static_cast<double>(std::max(h, w));
  for (auto& b : bs) {
    b.cx = rng.uniform(0.0, static_cast<double>(w));
    b.cy = rng.uniform(0.0, static_cast<double>(h));
    b.sigma = rng.uniform(0.08, 0.22) * extent;
    b.amplitude = rng.uniform(0.5, 1.0);
  }
  std::vector<double> f(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (const auto& b : bs) {
        const double dx = static_cast<double>(x) + 0.5 - b.cx;
        const double dy = static_cast<double>(y) + 0.5 - b.cy;
        acc += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      f[y * w + x] = acc;
    }
  }
  const double mx = *std::max_element(f.begin(), f.end());
  if (mx > 0.0) {
    for (auto& v : f) {
      v /= mx;
    }
  }
  return f;
}

// Gene-specific response to the shared region fields and the expression-only field.
struct GeneResponse {
  std::array<double, kRegions> region_weight;
  double private_weight;
  double offset;
};

std::vector<GeneResponse> panel_responses(const DatasetManifest& m) {
  Rng rng(Rng::derive(m.seed, kPanelStream));
  std::vector<GeneResponse> panel(m.genes);
  for (auto& g : panel) {
    for (auto& w : g.region_weight) {
      w = 2.5 * rng.normal();
    }
    g.private_weight = 1.5 + rng.uniform(0.0, 1.5);
    g.offset = rng.uniform(-1.5, 0.5);
  }
  return panel;
}

constexpr std::array<double, 3> kBackground{0.94, 0.86, 0.91};
constexpr std::array<std::array<double, 3>, kRegions> kRegionColor{{
    {0.32, 0.18, 0.55},  // nuclei-dense
    {0.86, 0.42, 0.60},  // stroma
    {0.58, 0.30, 0.42},  // mixed
}};

}  // namespace

void DatasetManifest::validate() const {
  if (count == 0) {
    throw InvalidArgument("manifest: sample count must be positive");
  }
  if (genes == 0) {
    throw InvalidArgument("manifest: gene count must be at least 1");
  }
  if (height == 0 || width == 0) {
    throw InvalidArgument("manifest: image size must be positive");
  }
  if (scale == 0 || height % scale != 0 || width % scale != 0) {
    throw InvalidArgument("manifest: scale " + std::to_string(scale) + " must divide height " +
                          std::to_string(height) + " and width " + std::to_string(width));
  }
  if (!(missing_fraction >= 0.0 && missing_fraction <= 1.0)) {
    throw InvalidArgument("manifest: missing fraction must lie in [0, 1]");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) {
    throw InvalidArgument("manifest: noise must be a finite non-negative number");
  }
}

Dataset generate(const DatasetManifest& manifest, std::vector<Tensor>* gene_latents) {
  manifest.validate();
  const std::size_t n = manifest.count;
  const std::size_t h = manifest.height;
  const std::size_t w = manifest.width;
  const std::size_t g = manifest.genes;
  const std::size_t plane = h * w;
  const auto panel = panel_responses(manifest);

  Dataset out;
  out.manifest = manifest;
  out.samples.resize(n);
  std::vector<std::vector<double>> raw_expression(n);
  std::vector<bool> absent(n);
  if (gene_latents) {
    gene_latents->assign(n, Tensor());
  }

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(Rng::derive(manifest.seed, i));
    std::array<std::vector<double>, kRegions> regions;
    for (auto& r : regions) {
      r = blob_field(rng, 3, h, w);
    }
    const auto st_private = blob_field(rng, 2, h, w);
    const auto texture = blob_field(rng, 2, h, w);

    std::vector<float> histology(3 * plane);
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        double v = kBackground[c];
        for (std::size_t r = 0; r < kRegions; ++r) {
          v += 0.75 * regions[r][p] * (kRegionColor[r][c] - kBackground[c]);
        }
        v += 0.12 * (texture[p] - 0.5) + 0.03 * rng.normal();
        histology[c * plane + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }

    std::vector<double> latent(g * plane);
    auto& raw = raw_expression[i];
    raw.resize(g * plane);
    for (std::size_t k = 0; k < g; ++k) {
      const auto& resp = panel[k];
      for (std::size_t p = 0; p < plane; ++p) {
        double z = resp.offset + resp.private_weight * st_private[p];
        for (std::size_t r = 0; r < kRegions; ++r) {
          z += resp.region_weight[r] * regions[r][p];
        }
        latent[k * plane + p] = 1.0 / (1.0 + std::exp(-z));
      }
    }
    for (std::size_t q = 0; q < g * plane; ++q) {
      raw[q] = latent[q] + (manifest.noise > 0.0 ? manifest.noise * rng.normal() : 0.0);
    }
    absent[i] = rng.uniform() < manifest.missing_fraction;

    auto& s = out.samples[i];
    s.histology = Tensor::from_data({3, h, w}, std::move(histology));
    s.gene_ids.resize(g);
    for (std::size_t k = 0; k < g; ++k) {
      s.gene_ids[k] = static_cast<std::int32_t>(k);
    }
    char id[32];
    std::snprintf(id, sizeof id, "sample-%05zu", i);
    s.sample_id = id;
    if (gene_latents) {
      (*gene_latents)[i] = Tensor::from_data({g, h, w}, std::vector<float>(latent.begin(), latent.end()));
    }
  }

  // Per-gene min-max normalization over the whole dataset.
  for (std::size_t k = 0; k < g; ++k) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& raw : raw_expression) {
      const auto first = raw.begin() + static_cast<std::ptrdiff_t>(k * plane);
      const auto [mn, mx] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(plane));
      lo = std::min(lo, *mn);
      hi = std::max(hi, *mx);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (auto& raw : raw_expression) {
      for (std::size_t p = 0; p < plane; ++p) {
        raw[k * plane + p] = (raw[k * plane + p] - lo) / span;
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    auto& s = out.samples[i];
    std::vector<float> hr(raw_expression[i].begin(), raw_expression[i].end());
    for (auto& v : hr) {
      v = std::clamp(v, 0.0f, 1.0f);
    }
    s.hr_st = Tensor::from_data({g, h, w}, std::move(hr));
    if (!absent[i]) {
      s.lr_st = downsample(s.hr_st, manifest.scale);
    }
  }
  return out;
}

Tensor downsample(const Tensor& hr, std::size_t scale) {
  if (hr.rank() != 3) {
    throw DimensionError("downsample: expected [genes, height, width], got " + shape_string(hr.shape()));
  }
  const std::size_t g = hr.dim(0);
  const std::size_t h = hr.dim(1);
  const std::size_t w = hr.dim(2);
  if (scale == 0 || h % scale != 0 || w % scale != 0) {
    throw DimensionError("downsample: scale " + std::to_string(scale) + " does not divide " +
                         shape_string(hr.shape()));
  }
  const std::size_t oh = h / scale;
  const std::size_t ow = w / scale;
  const double cells = static_cast<double>(scale * scale);
  const auto src = hr.data();
  std::vector<float> out(g * oh * ow);
  for (std::size_t k = 0; k < g; ++k) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < scale; ++dy) {
          for (std::size_t dx = 0; dx < scale; ++dx) {
            acc += src[(k * h + y * scale + dy) * w + x * scale + dx];
          }
        }
        out[(k * oh + y) * ow + x] = static_cast<float>(acc / cells);
      }
    }
  }
  return Tensor::from_data({g, oh, ow}, std::move(out));
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
  ByteWriter out;
  out.raw({reinterpret_cast<const std::uint8_t*>(kDatasetMagic), 4});
  out.u16(kDatasetVersion);
  const auto& m = dataset.manifest;
  out.u32(m.count);
  out.u32(m.height);
  out.u32(m.width);
  out.u32(m.genes);
  out.u32(m.scale);
  out.f64(m.missing_fraction);
  out.u64(m.seed);
  out.f64(m.noise);
  out.u32(static_cast<std::uint32_t>(dataset.samples.size()));
  for (const auto& s : dataset.samples) {
    out.string(s.sample_id);
    out.u32(static_cast<std::uint32_t>(s.gene_ids.size()));
    for (auto id : s.gene_ids) {
      out.i32(id);
    }
    out.tensor(s.histology);
    out.tensor(s.hr_st);
    out.u8(s.lr_st.has_value() ? 1 : 0);
    if (s.lr_st) {
      out.tensor(*s.lr_st);
    }
  }
  return out.bytes();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const auto magic = in.raw(4, "magic");
  if (std::memcmp(magic.data(), kDatasetMagic, 4) != 0) {
    throw FormatError("not a dataset file: bad magic number");
  }
  const auto version = in.u16("format version");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset format version " + std::to_string(version));
  }
  Dataset d;
  auto& m = d.manifest;
  m.count = in.u32("manifest");
  m.height = in.u32("manifest");
  m.width = in.u32("manifest");
  m.genes = in.u32("manifest");
  m.scale = in.u32("manifest");
  m.missing_fraction = in.f64("manifest");
  m.seed = in.u64("manifest");
  m.noise = in.f64("manifest");
  const auto n = in.u32("sample count");
  d.samples.reserve(std::min<std::size_t>(n, 1u << 16));
  for (std::uint32_t i = 0; i < n; ++i) {
    SpatialSample s;
    s.sample_id = in.string("sample id");
    const auto ng = in.u32("gene ids");
    if (ng > in.remaining() / 4 + 1) {
      throw TruncationError(in.offset() + std::size_t{ng} * 4, bytes.size(), "gene ids");
    }
    s.gene_ids.resize(ng);
    for (auto& id : s.gene_ids) {
      id = in.i32("gene ids");
    }
    s.histology = in.tensor("histology");
    s.hr_st = in.tensor("hr expression");
    const auto present = in.u8("presence flag");
    if (present > 1) {
      throw FormatError("invalid presence flag " + std::to_string(present));
    }
    if (present) {
      s.lr_st = in.tensor("lr expression");
    }
    d.samples.push_back(std::move(s));
  }
  if (in.remaining() != 0) {
    throw FormatError(std::to_string(in.remaining()) + " trailing bytes after the last sample");
  }
  return d;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace stsr
