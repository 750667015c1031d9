#include "stsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "stsr/errors.hpp"
#include "gemm.hpp"

namespace stsr {

using detail::Node;

namespace {

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) {
    return Broadcast::kSame;
  }
  if (b.numel() == 1) {
    return Broadcast::kRightScalar;
  }
  if (a.numel() == 1) {
    return Broadcast::kLeftScalar;
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
}

// out[i] = f(a[ia], b[ib]) with scalar broadcasting; grads via da = dfa, db = dfb.
template <typename F, typename Da, typename Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, Da dfa, Db dfb) {
  const auto kind = broadcast_kind(a, b, op);
  const Shape out_shape = kind == Broadcast::kLeftScalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t sa = kind == Broadcast::kLeftScalar ? 0 : 1;
  const std::size_t sb = kind == Broadcast::kRightScalar ? 0 : 1;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(ad[i * sa], bd[i * sb]);
  }
  return Tensor::make_result(out_shape, std::move(out), op, {a, b}, [n, sa, sb, dfa, dfb](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        g[i * sa] += self.grad[i] * dfa(pa.data[i * sa], pb.data[i * sb], self.data[i]);
      }
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        g[i * sb] += self.grad[i] * dfb(pa.data[i * sa], pb.data[i * sb], self.data[i]);
      }
    }
  });
}

template <typename F, typename D>
Tensor unary(const Tensor& a, const char* op, F f, D df) {
  const auto ad = a.data();
  std::vector<float> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) {
    out[i] = f(ad[i]);
  }
  return Tensor::make_result(a.shape(), std::move(out), op, {a}, [df](Node& self) {
    Node& p = parent(self, 0);
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df(p.data[i], self.data[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](float x, float y) { return x + y; }, [](float, float, float) { return 1.0f; },
      [](float, float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](float x, float y) { return x - y; }, [](float, float, float) { return 1.0f; },
      [](float, float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](float x, float y) { return x * y; }, [](float, float y, float) { return y; },
      [](float x, float, float) { return x; });
}

Tensor scale(const Tensor& a, float factor) {
  return unary(
      a, "scale", [factor](float x) { return x * factor; }, [factor](float, float) { return factor; });
}

Tensor add_scalar(const Tensor& a, float offset) {
  return unary(
      a, "add_scalar", [offset](float x) { return x + offset; }, [](float, float) { return 1.0f; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& a) {
  for (float x : a.data()) {
    if (!(x > 0.0f)) {
      throw DomainError("log: non-positive input " + std::to_string(x));
    }
  }
  return unary(
      a, "log", [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Tensor reciprocal(const Tensor& a) {
  for (float x : a.data()) {
    if (x == 0.0f) {
      throw DomainError("reciprocal: zero input");
    }
  }
  return unary(
      a, "reciprocal", [](float x) { return 1.0f / x; }, [](float, float y) { return -y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](float x) { return x > 0.0f ? x : 0.0f; },
      [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, "silu", [](float x) { return x / (1.0f + std::exp(-x)); },
      [](float x, float) {
        const float sig = 1.0f / (1.0f + std::exp(-x));
        return sig * (1.0f + x * (1.0f - sig));
      });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float x : a.data()) {
    acc += x;
  }
  return Tensor::make_result({}, {static_cast<float>(acc)}, "sum", {a}, [](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    const float s = self.grad[0];
    for (auto& v : g) {
      v += s;
    }
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) {
    throw DimensionError("mean of an empty tensor");
  }
  double acc = 0.0;
  for (float x : a.data()) {
    acc += x;
  }
  return Tensor::make_result({}, {static_cast<float>(acc / static_cast<double>(n))}, "mean", {a},
                             [n](Node& self) {
                               auto& g = parent(self, 0).grad_buffer();
                               const float s = self.grad[0] / static_cast<float>(n);
                               for (auto& v : g) {
                                 v += s;
                               }
                             });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t n = a.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(ad[i]) - bd[i];
    acc += d * d;
  }
  return Tensor::make_result({}, {static_cast<float>(acc / static_cast<double>(n))}, "mse", {a, b},
                             [n](Node& self) {
                               Node& pa = parent(self, 0);
                               Node& pb = parent(self, 1);
                               const float s = 2.0f * self.grad[0] / static_cast<float>(n);
                               if (pa.requires_grad) {
                                 auto& g = pa.grad_buffer();
                                 for (std::size_t i = 0; i < n; ++i) {
                                   g[i] += s * (pa.data[i] - pb.data[i]);
                                 }
                               }
                               if (pb.requires_grad) {
                                 auto& g = pb.grad_buffer();
                                 for (std::size_t i = 0; i < n; ++i) {
                                   g[i] -= s * (pa.data[i] - pb.data[i]);
                                 }
                               }
                             });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  std::vector<float> out(m * n);
  detail::gemm(a.data().data(), false, b.data().data(), false, out.data(), m, n, k, false);
  return Tensor::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      detail::gemm(self.grad.data(), false, pb.data.data(), true, pa.grad_buffer().data(), m, k, n, true);
    }
    if (pb.requires_grad) {
      detail::gemm(pa.data.data(), true, self.grad.data(), false, pb.grad_buffer().data(), k, n, m, true);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  const auto ad = a.data();
  std::vector<float> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out[j * r + i] = ad[i * c + j];
    }
  }
  return Tensor::make_result({c, r}, std::move(out), "transpose", {a}, [r, c](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        g[i * c + j] += self.grad[j * r + i];
      }
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t n = x.dim(0);
  const std::size_t k = x.dim(1);
  const auto xd = x.data();
  std::vector<float> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = xd.data() + i * k;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (!std::isfinite(row[j])) {
        throw DomainError("softmax_rows: non-finite input");
      }
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      z += std::exp(static_cast<double>(row[j]) - mx);
    }
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
  }
  return Tensor::make_result({n, k}, std::move(out), "softmax_rows", {x}, [n, k](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        dot += static_cast<double>(self.grad[i * k + j]) * self.data[i * k + j];
      }
      for (std::size_t j = 0; j < k; ++j) {
        g[i * k + j] += self.data[i * k + j] * static_cast<float>(self.grad[i * k + j] - dot);
      }
    }
  });
}

Tensor logsumexp_rows(const Tensor& x) {
  require_rank(x, 2, "logsumexp_rows");
  const std::size_t n = x.dim(0);
  const std::size_t k = x.dim(1);
  const auto xd = x.data();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = xd.data() + i * k;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (!std::isfinite(row[j])) {
        throw DomainError("logsumexp_rows: non-finite input");
      }
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      z += std::exp(static_cast<double>(row[j]) - mx);
    }
    out[i] = static_cast<float>(mx + std::log(z));
  }
  return Tensor::make_result({n}, std::move(out), "logsumexp_rows", {x}, [n, k](Node& self) {
    Node& p = parent(self, 0);
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double w = std::exp(static_cast<double>(p.data[i * k + j]) - self.data[i]);
        g[i * k + j] += static_cast<float>(self.grad[i] * w);
      }
    }
  });
}

Tensor normalize_rows(const Tensor& x) {
  require_rank(x, 2, "normalize_rows");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  const auto xd = x.data();
  std::vector<float> out(n * d);
  std::vector<float> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      ss += static_cast<double>(xd[i * d + j]) * xd[i * d + j];
    }
    if (!(ss > 0.0)) {
      throw DegenerateInputError("cannot project a zero vector onto the unit sphere (row " +
                                 std::to_string(i) + ")");
    }
    const double norm = std::sqrt(ss);
    norms[i] = static_cast<float>(norm);
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = static_cast<float>(xd[i * d + j] / norm);
    }
  }
  return Tensor::make_result({n, d}, std::move(out), "normalize_rows", {x},
                             [n, d, norms = std::move(norms)](Node& self) {
                               auto& g = parent(self, 0).grad_buffer();
                               for (std::size_t i = 0; i < n; ++i) {
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < d; ++j) {
                                   dot += static_cast<double>(self.grad[i * d + j]) * self.data[i * d + j];
                                 }
                                 for (std::size_t j = 0; j < d; ++j) {
                                   g[i * d + j] += static_cast<float>(
                                       (self.grad[i * d + j] - dot * self.data[i * d + j]) / norms[i]);
                                 }
                               }
                             });
}

Tensor add_row_vector(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_vector");
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  if (bias.numel() != d) {
    throw DimensionError("add_row_vector: bias " + shape_string(bias.shape()) + " does not match rows of " +
                         shape_string(x.shape()));
  }
  const auto xd = x.data();
  const auto bd = bias.data();
  std::vector<float> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = xd[i * d + j] + bd[j];
    }
  }
  return Tensor::make_result({n, d}, std::move(out), "add_row_vector", {x, bias}, [n, d](Node& self) {
    Node& px = parent(self, 0);
    Node& pb = parent(self, 1);
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < n * d; ++i) {
        g[i] += self.grad[i];
      }
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          g[j] += self.grad[i * d + j];
        }
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), "reshape", {a}, [](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i];
    }
  });
}

Tensor gather(const Tensor& a, std::span<const std::size_t> flat_indices) {
  const auto ad = a.data();
  std::vector<float> out(flat_indices.size());
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= ad.size()) {
      throw DimensionError("gather: index " + std::to_string(flat_indices[i]) + " out of range for " +
                           shape_string(a.shape()));
    }
    out[i] = ad[flat_indices[i]];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  Shape shape{idx.size()};
  return Tensor::make_result(std::move(shape), std::move(out), "gather", {a}, [idx = std::move(idx)](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g[idx[i]] += self.grad[i];
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank(a, 2, "gather_rows");
  const std::size_t n = a.dim(0);
  const std::size_t d = a.dim(1);
  const auto ad = a.data();
  std::vector<float> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_string(a.shape()));
    }
    std::copy_n(ad.data() + rows[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Shape shape{idx.size(), d};
  return Tensor::make_result(std::move(shape), std::move(out), "gather_rows", {a},
                             [d, idx = std::move(idx)](Node& self) {
                               auto& g = parent(self, 0).grad_buffer();
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 for (std::size_t j = 0; j < d; ++j) {
                                   g[idx[i] * d + j] += self.grad[i * d + j];
                                 }
                               }
                             });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw DimensionError("concat_rows: no inputs");
  }
  const std::size_t d = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != d) {
      throw DimensionError("concat_rows: incompatible part " + shape_string(p.shape()) + " vs " +
                           shape_string(parts[0].shape()));
    }
    rows += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(rows * d);
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor::make_result({rows, d}, std::move(out), "concat_rows", parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->data.size();
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
          g[i] += self.grad[offset + i];
        }
      }
      offset += n;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw DimensionError("concat_cols: no inputs");
  }
  const std::size_t n = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != n) {
      throw DimensionError("concat_cols: incompatible part " + shape_string(p.shape()) + " vs " +
                           shape_string(parts[0].shape()));
    }
    widths.push_back(p.dim(1));
    cols += p.dim(1);
  }
  std::vector<float> out(n * cols);
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(pd.data() + i * widths[k], widths[k], out.data() + i * cols + c0);
    }
    c0 += widths[k];
  }
  return Tensor::make_result({n, cols}, std::move(out), "concat_cols", parts,
                             [n, cols, widths = std::move(widths)](Node& self) {
                               std::size_t c = 0;
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 auto& p = *self.parents[k];
                                 if (p.requires_grad) {
                                   auto& g = p.grad_buffer();
                                   for (std::size_t i = 0; i < n; ++i) {
                                     for (std::size_t j = 0; j < widths[k]; ++j) {
                                       g[i * widths[k] + j] += self.grad[i * cols + c + j];
                                     }
                                   }
                                 }
                                 c += widths[k];
                               }
                             });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw DimensionError("stack: no inputs");
  }
  Shape shape = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != shape) {
      throw DimensionError("stack: shape " + shape_string(p.shape()) + " differs from " + shape_string(shape));
    }
  }
  std::vector<float> out;
  out.reserve(parts.size() * shape_numel(shape));
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  shape.insert(shape.begin(), parts.size());
  return Tensor::make_result(std::move(shape), std::move(out), "stack", parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->data.size();
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
          g[i] += self.grad[offset + i];
        }
      }
      offset += n;
    }
  });
}

Tensor scale_batch(const Tensor& x, std::span<const float> factors) {
  if (x.rank() == 0 || x.dim(0) != factors.size()) {
    throw DimensionError("scale_batch: " + std::to_string(factors.size()) + " factors for shape " +
                         shape_string(x.shape()));
  }
  const std::size_t per = x.numel() / factors.size();
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t b = 0; b < factors.size(); ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      out[b * per + i] = xd[b * per + i] * factors[b];
    }
  }
  std::vector<float> f(factors.begin(), factors.end());
  return Tensor::make_result(x.shape(), std::move(out), "scale_batch", {x}, [per, f = std::move(f)](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t b = 0; b < f.size(); ++b) {
      for (std::size_t i = 0; i < per; ++i) {
        g[b * per + i] += self.grad[b * per + i] * f[b];
      }
    }
  });
}

}  // namespace stsr
