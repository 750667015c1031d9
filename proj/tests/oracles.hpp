#pragma once

// Independent double-precision reference implementations written as explicit loops
// straight from the loss definitions. They share no code with the library.

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace stsr::oracle {

using Matrix = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

/// -log(e^{pos} / (e^{pos} + sum e^{neg})) for already-scaled logits.
inline double nce_term(double pos, const std::vector<double>& neg) {
  double denom = std::exp(pos);
  for (double n : neg) {
    denom += std::exp(n);
  }
  return -(pos - std::log(denom));
}

inline double info_nce(const std::vector<double>& z, const Matrix& positives, const Matrix& negatives, double tau) {
  double total = 0.0;
  for (const auto& p : positives) {
    std::vector<double> neg;
    for (const auto& n : negatives) {
      neg.push_back(dot(z, n) / tau);
    }
    total += nce_term(dot(z, p) / tau, neg);
  }
  return total / static_cast<double>(positives.size());
}

inline double modal_direction(const Matrix& anchors, const Matrix& other, double tau) {
  const std::size_t n = anchors.size();
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double per_anchor = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == j) {
        continue;
      }
      std::vector<double> neg;
      for (std::size_t m = 0; m < n; ++m) {
        neg.push_back(dot(anchors[j], other[m]) / tau);
      }
      per_anchor += nce_term(dot(anchors[j], anchors[k]) / tau, neg);
    }
    total += per_anchor / static_cast<double>(n - 1);
  }
  return total / static_cast<double>(n);
}

inline double loss_modal(const Matrix& m_h, const Matrix& m_y, double tau) {
  return modal_direction(m_h, m_y, tau) + modal_direction(m_y, m_h, tau);
}

inline double content_direction(const Matrix& anchors, const Matrix& other, double tau) {
  const std::size_t n = anchors.size();
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> neg;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != j) {
        neg.push_back(dot(anchors[j], anchors[k]) / tau);
        neg.push_back(dot(anchors[j], other[k]) / tau);
      }
    }
    total += nce_term(dot(anchors[j], other[j]) / tau, neg);
  }
  return total / static_cast<double>(n);
}

inline double loss_content(const Matrix& c_h, const Matrix& c_y, double tau) {
  return content_direction(c_h, c_y, tau) + content_direction(c_y, c_h, tau);
}

inline double loss_inter_sphere(const Matrix& m_h, const Matrix& c_h, double tau) {
  const std::size_t n = m_h.size();
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> neg;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != j) {
        neg.push_back(dot(m_h[j], c_h[k]) / tau);
      }
    }
    total += nce_term(dot(m_h[j], c_h[j]) / tau, neg);
  }
  return total / static_cast<double>(n);
}

/// Channel-major image [c, h, w].
struct Image {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> v;

  Image(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, 0.0) {}
  double& at(std::size_t ch, std::size_t y, std::size_t x) { return v[(ch * h + y) * w + x]; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const { return v[(ch * h + y) * w + x]; }
};

/// Parameter values by store name.
using Params = std::map<std::string, std::vector<double>>;

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

/// y = x W + b with W stored [in, out].
inline std::vector<double> linear(const Params& p, const std::string& name, const std::vector<double>& x) {
  const auto& w = p.at(name + ".weight");
  std::vector<double> y = p.at(name + ".bias");
  const std::size_t out = y.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      y[o] += x[i] * w[i * out + o];
    }
  }
  return y;
}

/// Cross-correlation with a 3x3 kernel [out, in, 3, 3], zero padding of one pixel.
inline Image conv3x3(const Params& p, const std::string& name, const Image& x) {
  const auto& w = p.at(name + ".weight");
  const auto& b = p.at(name + ".bias");
  Image y(b.size(), x.h, x.w);
  for (std::size_t o = 0; o < y.c; ++o) {
    for (std::size_t yy = 0; yy < x.h; ++yy) {
      for (std::size_t xx = 0; xx < x.w; ++xx) {
        double acc = b[o];
        for (std::size_t i = 0; i < x.c; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const long sy = static_cast<long>(yy) + ky - 1;
              const long sx = static_cast<long>(xx) + kx - 1;
              if (sy >= 0 && sx >= 0 && sy < static_cast<long>(x.h) && sx < static_cast<long>(x.w)) {
                acc += w[((o * x.c + i) * 3 + ky) * 3 + kx] * x.at(i, sy, sx);
              }
            }
          }
        }
        y.at(o, yy, xx) = acc;
      }
    }
  }
  return y;
}

inline Image concat(const Image& a, const Image& b) {
  Image y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<long>(a.v.size()));
  return y;
}

/// silu(conv(x) + per-channel time bias).
inline Image block(const Params& p, const std::string& name, const Image& x, const std::vector<double>& hidden) {
  Image y = conv3x3(p, name + ".conv", x);
  const auto tb = linear(p, name + ".time", hidden);
  for (std::size_t c = 0; c < y.c; ++c) {
    for (std::size_t i = 0; i < y.h * y.w; ++i) {
      y.v[c * y.h * y.w + i] = silu(y.v[c * y.h * y.w + i] + tb[c]);
    }
  }
  return y;
}

/// Noise prediction of the two-level UNet for one sample.
inline Image denoiser(const Params& p, const Image& x_t, std::size_t t, const Image& condition, std::size_t time_dim) {
  const std::size_t half = time_dim / 2;
  std::vector<double> emb(time_dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double angle = static_cast<double>(t) * std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    emb[i] = std::sin(angle);
    emb[half + i] = std::cos(angle);
  }
  auto hidden = linear(p, "den.time_in", emb);
  for (auto& v : hidden) {
    v = silu(v);
  }
  hidden = linear(p, "den.time_out", hidden);
  for (auto& v : hidden) {
    v = silu(v);
  }
  const Image skip = block(p, "den.mid", block(p, "den.in", concat(x_t, condition), hidden), hidden);
  Image pooled(skip.c, skip.h / 2, skip.w / 2);
  for (std::size_t c = 0; c < skip.c; ++c) {
    for (std::size_t y = 0; y < pooled.h; ++y) {
      for (std::size_t x = 0; x < pooled.w; ++x) {
        pooled.at(c, y, x) = 0.25 * (skip.at(c, 2 * y, 2 * x) + skip.at(c, 2 * y, 2 * x + 1) +
                                     skip.at(c, 2 * y + 1, 2 * x) + skip.at(c, 2 * y + 1, 2 * x + 1));
      }
    }
  }
  const Image low = block(p, "den.down_b", block(p, "den.down_a", pooled, hidden), hidden);
  Image up(low.c, skip.h, skip.w);
  for (std::size_t c = 0; c < up.c; ++c) {
    for (std::size_t y = 0; y < up.h; ++y) {
      for (std::size_t x = 0; x < up.w; ++x) {
        up.at(c, y, x) = low.at(c, y / 2, x / 2);
      }
    }
  }
  return conv3x3(p, "den.out", block(p, "den.up", concat(up, skip), hidden));
}

/// One sample's fixed draws for the noise-prediction objective.
struct NoiseSample {
  std::size_t t = 0;
  double a = 1.0;
  double sigma = 0.0;
  bool keep_condition = true;
  Image eps;
};

/// Mean over samples and elements of (eps - prediction(a x0 + sigma eps, t, condition))^2,
/// with a dropped condition replaced by zeros.
inline double denoiser_objective(const Params& p, const std::vector<Image>& x0, const std::vector<Image>& condition,
                                 const std::vector<NoiseSample>& draws, std::size_t time_dim) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < x0.size(); ++b) {
    const auto& d = draws[b];
    Image x_t = x0[b];
    for (std::size_t i = 0; i < x_t.v.size(); ++i) {
      x_t.v[i] = d.a * x0[b].v[i] + d.sigma * d.eps.v[i];
    }
    Image cond = condition[b];
    if (!d.keep_condition) {
      std::fill(cond.v.begin(), cond.v.end(), 0.0);
    }
    const Image pred = denoiser(p, x_t, d.t, cond, time_dim);
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
      const double r = d.eps.v[i] - pred.v[i];
      total += r * r;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace stsr::oracle
