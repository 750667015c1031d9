#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "stsr/binary_io.hpp"
#include "stsr/errors.hpp"
#include "stsr/synth_data.hpp"
#include "test_support.hpp"

using namespace stsr;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("stsr_test_" + name);
}

double pearson(std::span<const float> a, std::span<const float> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

DatasetManifest small_manifest() {
  DatasetManifest m;
  m.count = 4;
  m.height = 40;
  m.width = 40;
  m.genes = 3;
  m.scale = 5;
  m.missing_fraction = 0.0;
  return m;
}

}  // namespace

TEST_CASE("generate produces the declared shapes") {
  const auto d = generate(small_manifest());
  REQUIRE(d.samples.size() == 4);
  for (const auto& s : d.samples) {
    CHECK(s.histology.shape() == Shape{3, 40, 40});
    CHECK(s.hr_st.shape() == Shape{3, 40, 40});
    REQUIRE(s.lr_st.has_value());
    CHECK(s.lr_st->shape() == Shape{3, 8, 8});
    CHECK(s.gene_ids == std::vector<std::int32_t>{0, 1, 2});
    for (float v : s.histology.data()) {
      CHECK((v >= 0.0f && v <= 1.0f));
    }
    for (float v : s.hr_st.data()) {
      CHECK((v >= 0.0f && v <= 1.0f));
    }
  }
}

TEST_CASE("missing fraction one removes every low-resolution map") {
  auto m = small_manifest();
  m.missing_fraction = 1.0;
  for (const auto& s : generate(m).samples) {
    CHECK_FALSE(s.lr_st.has_value());
  }
}

TEST_CASE("noise-free expression is an affine image of its latent field") {
  auto m = small_manifest();
  m.noise = 0.0;
  std::vector<Tensor> latents;
  const auto d = generate(m, &latents);
  const std::size_t plane = 40 * 40;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    for (std::size_t g = 0; g < 3; ++g) {
      const auto hr = d.samples[i].hr_st.data().subspan(g * plane, plane);
      const auto lat = latents[i].data().subspan(g * plane, plane);
      CHECK(std::abs(pearson(hr, lat) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("invalid manifests are rejected") {
  auto m = small_manifest();
  m.scale = 3;
  CHECK_THROWS_AS(generate(m), InvalidArgument);
  m = small_manifest();
  m.genes = 0;
  CHECK_THROWS_AS(generate(m), InvalidArgument);
  m = small_manifest();
  m.missing_fraction = 1.5;
  CHECK_THROWS_AS(generate(m), InvalidArgument);
}

TEST_CASE("downsample examples") {
  const auto constant = Tensor::full({2, 10, 10}, 0.37f);
  for (std::size_t s : {1, 2, 5, 10}) {
    const auto lr = downsample(constant, s);
    for (float v : lr.data()) {
      CHECK(v == 0.37f);
    }
  }
  const auto block = downsample(Tensor::from_data({1, 2, 2}, {1, 2, 3, 4}), 2);
  CHECK(block.shape() == Shape{1, 1, 1});
  CHECK(block[0] == 2.5f);

  Rng rng(4);
  const auto r = stsr::testing::random_tensor({1, 10, 10}, rng, 0, 1);
  const auto lr = downsample(r, 5);
  const double in_mean = std::accumulate(r.data().begin(), r.data().end(), 0.0) / 100.0;
  const double out_mean = std::accumulate(lr.data().begin(), lr.data().end(), 0.0) / 4.0;
  CHECK(std::abs(in_mean - out_mean) < 1e-6);

  CHECK_THROWS_AS(downsample(r, 3), DimensionError);
}

TEST_CASE("downsample commutes with gene-channel permutation") {
  Rng rng(8);
  const auto hr = stsr::testing::random_tensor({3, 10, 10}, rng, 0, 1);
  const std::vector<std::size_t> perm{2, 0, 1};
  auto permute = [&](const Tensor& t) {
    const std::size_t plane = t.dim(1) * t.dim(2);
    std::vector<float> v(t.numel());
    for (std::size_t k = 0; k < 3; ++k) {
      std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(perm[k] * plane), plane, v.begin() + static_cast<std::ptrdiff_t>(k * plane));
    }
    return Tensor::from_data(t.shape(), v);
  };
  const auto a = downsample(permute(hr), 5);
  const auto b = permute(downsample(hr, 5));
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("present low-resolution maps equal the downsampled high-resolution maps exactly") {
  DatasetManifest m;
  m.count = 12;
  m.missing_fraction = 0.3;
  const auto d = generate(m);
  std::size_t present = 0;
  for (const auto& s : d.samples) {
    if (s.lr_st) {
      ++present;
      const auto lr = downsample(s.hr_st, m.scale);
      CHECK(std::equal(lr.data().begin(), lr.data().end(), s.lr_st->data().begin()));
    }
  }
  CHECK(present > 0);
  CHECK(present < 12);
}

TEST_CASE("save and load round-trip bit-exactly and same seed gives identical bytes") {
  auto m = small_manifest();
  m.missing_fraction = 0.5;
  const auto d = generate(m);
  const auto path = temp_path("roundtrip.c3df");
  save_dataset(d, path);
  const auto loaded = load_dataset(path);
  CHECK(loaded.manifest == d.manifest);
  REQUIRE(loaded.samples.size() == d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& a = d.samples[i];
    const auto& b = loaded.samples[i];
    CHECK(a.sample_id == b.sample_id);
    CHECK(a.gene_ids == b.gene_ids);
    CHECK(std::equal(a.histology.data().begin(), a.histology.data().end(), b.histology.data().begin()));
    CHECK(std::equal(a.hr_st.data().begin(), a.hr_st.data().end(), b.hr_st.data().begin()));
    REQUIRE(a.lr_st.has_value() == b.lr_st.has_value());
    if (a.lr_st) {
      CHECK(a.lr_st->shape() == b.lr_st->shape());
      CHECK(std::equal(a.lr_st->data().begin(), a.lr_st->data().end(), b.lr_st->data().begin()));
    }
  }
  CHECK(encode_dataset(generate(m)) == read_file(path));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt and truncated files raise distinct errors") {
  const auto bytes = encode_dataset(generate(small_manifest()));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad_magic), FormatError);

  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  try {
    decode_dataset(truncated);
    FAIL("expected TruncationError");
  } catch (const TruncationError& e) {
    CHECK(e.actual_bytes() == truncated.size());
    CHECK(e.expected_bytes() > truncated.size());
    const std::string msg = e.what();
    CHECK(msg.find(std::to_string(truncated.size())) != std::string::npos);
  }

  CHECK_THROWS_AS(load_dataset(temp_path("does/not/exist.c3df")), IoError);
}
