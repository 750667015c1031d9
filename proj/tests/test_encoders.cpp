#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "stsr/encoders.hpp"
#include "stsr/errors.hpp"
#include "stsr/imputation.hpp"
#include "stsr/ops.hpp"
#include "test_support.hpp"

using namespace stsr;
using stsr::testing::directional_probe;
using stsr::testing::random_tensor;
using stsr::testing::random_unit_rows;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.feature_dim = 16;
  c.widths = {4, 8};
  c.gene_embedding_dim = 3;
  c.gene_panel = 5;
  c.condition_planes = 2;
  return c;
}

double row_norm(const Tensor& t, std::size_t row) {
  const std::size_t d = t.dim(1);
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    s += static_cast<double>(t[row * d + j]) * t[row * d + j];
  }
  return std::sqrt(s);
}

struct Batch {
  Tensor histology;
  Tensor lr_present;
  Tensor lr_full;
  std::vector<bool> present;
  std::vector<std::vector<std::int32_t>> genes;
};

Batch make_batch(Rng& rng, std::vector<bool> present) {
  Batch b;
  const std::size_t n = present.size();
  const std::size_t p = static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
  b.histology = random_tensor({n, 3, 20, 20}, rng, 0, 1);
  b.lr_present = random_tensor({p, 2, 4, 4}, rng, 0, 1);
  std::vector<float> full(n * 2 * 16, 0.0f);
  for (std::size_t i = 0, k = 0; i < n; ++i) {
    if (present[i]) {
      std::copy_n(b.lr_present.data().begin() + static_cast<std::ptrdiff_t>(k * 32), 32,
                  full.begin() + static_cast<std::ptrdiff_t>(i * 32));
      ++k;
    }
  }
  b.lr_full = Tensor::from_data({n, 2, 4, 4}, full);
  b.present = std::move(present);
  b.genes.assign(n, {0, 3});
  return b;
}

}  // namespace

TEST_CASE("norm_project examples") {
  const auto v = norm_project(Tensor::from_data({2}, {3, 4}));
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-7));

  Rng rng(1);
  const auto u = random_unit_rows(1, 7, rng);
  const auto again = norm_project(reshape(u, {7}));
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(std::abs(again[i] - u[i]) <= 1e-7);
  }
  CHECK_THROWS_AS(norm_project(Tensor::zeros({4})), DegenerateInputError);

  for (int probe = 0; probe < 20; ++probe) {
    const auto x = random_tensor({5}, rng, -1, 1, true);
    const auto w = random_tensor({5}, rng, 0.5, 1);
    const auto r = directional_probe({x}, [&] { return sum(mul(norm_project(x), w)); }, rng, 1e-3);
    CHECK(r.relative_error < 1e-3);
  }
}

TEST_CASE("augment keeps unit norm and is the identity at zero sigma") {
  Rng rng(9);
  const auto m = random_unit_rows(6, 16, rng);
  const auto c = random_unit_rows(6, 16, rng);
  const auto [m0, c0] = augment(m, c, 0.0f, rng);
  CHECK(std::equal(m0.data().begin(), m0.data().end(), m.data().begin()));
  CHECK(std::equal(c0.data().begin(), c0.data().end(), c.data().begin()));
  for (float sigma : {0.01f, 0.05f, 0.3f, 2.0f}) {
    const auto [mh, ch] = augment(m, c, sigma, rng);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(std::abs(row_norm(mh, i) - 1.0) < 1e-5);
      CHECK(std::abs(row_norm(ch, i) - 1.0) < 1e-5);
    }
  }
  CHECK_THROWS_AS(augment(m, c, -0.1f, rng), InvalidArgument);
}

TEST_CASE("augment uses independent noise for the two heads") {
  Rng rng(4);
  const auto u = random_unit_rows(1, 16, rng);
  const auto [mh, ch] = augment(u, u, 0.1f, rng);
  CHECK_FALSE(std::equal(mh.data().begin(), mh.data().end(), ch.data().begin()));
}

TEST_CASE("augment spread matches a Monte-Carlo oracle of the noisy sphere") {
  // The mean cosine of a unit vector with its re-projected noisy copy depends on D:
  // about 1/sqrt(1 + D sigma^2). At sigma = 0.1 it exceeds 0.9 for D = 16 but not for D = 64.
  for (std::size_t d : {16, 64}) {
    Rng rng(100 + d);
    const auto u = random_unit_rows(1, d, rng);
    const std::size_t draws = 10000;
    double mean_cos = 0.0;
    for (std::size_t k = 0; k < draws; ++k) {
      const auto [mh, ch] = augment(u, u, 0.1f, rng);
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += static_cast<double>(u[j]) * mh[j];
      }
      mean_cos += dot / draws;
    }
    // Oracle: direct double-precision simulation with an unrelated generator.
    std::mt19937_64 engine(7 * d);
    std::normal_distribution<double> normal(0.0, 0.1);
    double oracle_cos = 0.0;
    for (std::size_t k = 0; k < draws; ++k) {
      double dot = 0.0;
      double n2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double v = u[j] + normal(engine);
        dot += u[j] * v;
        n2 += v * v;
      }
      oracle_cos += dot / std::sqrt(n2) / draws;
    }
    INFO("D = " << d << " mean cos " << mean_cos << " oracle " << oracle_cos);
    CHECK(mean_cos < 1.0);
    CHECK(std::abs((1.0 - mean_cos) - (1.0 - oracle_cos)) <= 0.1 * (1.0 - oracle_cos));
    if (d == 16) {
      CHECK(mean_cos > 0.9);
    }
  }
}

TEST_CASE("encode returns unit-norm features, flags absent maps and is deterministic") {
  ParameterStore store;
  const EncoderBank bank(store, small_config(), 2);
  Rng rng(3);
  const auto b = make_batch(rng, {true, false, true, false});
  const auto f = bank.encode(b.histology, b.lr_present, b.present);
  REQUIRE(f.m_h.shape() == Shape{4, 16});
  REQUIRE(f.m_y.shape() == Shape{2, 16});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(row_norm(f.m_h, i) - 1.0) < 1e-5);
    CHECK(std::abs(row_norm(f.c_h, i) - 1.0) < 1e-5);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(row_norm(f.m_y, i) - 1.0) < 1e-5);
    CHECK(std::abs(row_norm(f.c_y, i) - 1.0) < 1e-5);
  }
  CHECK(f.missing_rows() == std::vector<std::size_t>{1, 3});

  const auto none = bank.encode(b.histology, Tensor(), {false, false, false, false});
  CHECK_FALSE(none.m_y.defined());
  for (float v : none.m_h.data()) {
    CHECK(std::isfinite(v));
  }

  const auto again = bank.encode(b.histology, b.lr_present, b.present);
  CHECK(std::equal(again.m_h.data().begin(), again.m_h.data().end(), f.m_h.data().begin()));
  CHECK(std::equal(again.c_y.data().begin(), again.c_y.data().end(), f.c_y.data().begin()));

  CHECK_THROWS_AS(bank.encode(random_tensor({4, 2, 20, 20}, rng), b.lr_present, b.present), DimensionError);
  CHECK_THROWS_AS(bank.encode(b.histology, b.lr_present, {true, true, true, false}), DimensionError);
}

TEST_CASE("condition bundle layout") {
  Rng rng(12);
  for (bool with_histology : {false, true}) {
    auto cfg = small_config();
    cfg.histology_planes = with_histology;
    ParameterStore store;
    const EncoderBank bank(store, cfg, 2);
    const auto b = make_batch(rng, {true, false, false});
    const auto f = bank.encode(b.histology, b.lr_present, b.present);
    const auto imp = impute(f.m_h, f.c_h, f.m_y, f.c_y, b.present, 0.0f, 0.0f, 0.1f, ImputationMode::zero_padding);
    const auto e = assemble_embeddings(f.m_h, f.c_h, f.m_y, f.c_y, imp, b.present);
    const auto bundle = bank.build_condition(e, b.lr_full, bank.gene_vectors(b.genes), b.histology);
    const std::size_t expected = cfg.condition_planes + 2 + cfg.gene_embedding_dim + (with_histology ? 3 : 0);
    CHECK(bank.condition_channels() == expected);
    REQUIRE(bundle.shape() == Shape{3, expected, 20, 20});
    // y channels of absent samples are zero.
    const std::size_t plane = 400;
    for (std::size_t s : {1, 2}) {
      for (std::size_t c = cfg.condition_planes; c < cfg.condition_planes + 2; ++c) {
        const auto start = bundle.data().begin() + static_cast<std::ptrdiff_t>((s * expected + c) * plane);
        CHECK(std::all_of(start, start + static_cast<std::ptrdiff_t>(plane), [](float v) { return v == 0.0f; }));
      }
    }
  }
}

TEST_CASE("condition bundle is equivariant to batch permutation") {
  ParameterStore store;
  const EncoderBank bank(store, small_config(), 2);
  Rng rng(31);
  const auto b = make_batch(rng, {true, true, true});
  const std::vector<std::size_t> perm{2, 0, 1};
  auto build = [&](const Tensor& hist, const Tensor& lr_full) {
    const auto f = bank.encode(hist, lr_full, {true, true, true});
    const ImputedRows none;
    const auto e = assemble_embeddings(f.m_h, f.c_h, f.m_y, f.c_y, none, {true, true, true});
    return bank.build_condition(e, lr_full, bank.gene_vectors(b.genes), hist);
  };
  auto permute = [&](const Tensor& t) {
    const std::size_t per = t.numel() / t.dim(0);
    std::vector<float> v(t.numel());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(perm[i] * per), per,
                  v.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return Tensor::from_data(t.shape(), v);
  };
  const auto base = build(b.histology, b.lr_full);
  const auto permuted = build(permute(b.histology), permute(b.lr_full));
  const auto expected = permute(base);
  for (std::size_t i = 0; i < base.numel(); ++i) {
    CHECK(std::abs(permuted[i] - expected[i]) <= 1e-6f);
  }
}

TEST_CASE("gene vectors average the panel rows and reject unknown ids") {
  ParameterStore store;
  const EncoderBank bank(store, small_config(), 2);
  const std::vector<std::vector<std::int32_t>> ids{{1}, {1, 2}};
  const auto v = bank.gene_vectors(ids);
  const auto& table = store.get("enc.gene_table");
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(v[j] == doctest::Approx(table[1 * 3 + j]));
    CHECK(v[3 + j] == doctest::Approx(0.5 * (table[1 * 3 + j] + table[2 * 3 + j])));
  }
  const std::vector<std::vector<std::int32_t>> bad{{7}};
  CHECK_THROWS_AS(bank.gene_vectors(bad), InvalidArgument);
}

TEST_CASE("encoder config validation") {
  auto c = small_config();
  c.feature_dim = 1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = small_config();
  c.widths = {4, 0};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
