#include <algorithm>
#include <string>

#include "stsr/errors.hpp"
#include "stsr/ops.hpp"
#include "gemm.hpp"

namespace stsr {

using detail::Node;

namespace {

struct ImageDims {
  std::size_t batch, channels, height, width;
  std::size_t plane() const { return height * width; }
  std::size_t item() const { return channels * height * width; }
};

ImageDims image_dims(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw DimensionError(std::string(op) + ": expected [batch, channels, height, width], got " +
                         shape_string(x.shape()));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// col[(c*9 + ky*3 + kx), y*W + x] = img[c, y+ky-1, x+kx-1], zero outside.
void im2col(const float* img, const ImageDims& d, float* col) {
  const auto h = static_cast<std::ptrdiff_t>(d.height);
  const auto w = static_cast<std::ptrdiff_t>(d.width);
  for (std::size_t c = 0; c < d.channels; ++c) {
    const float* src = img + c * d.plane();
    for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
      for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
        float* dst = col + (c * 9 + static_cast<std::size_t>(ky * 3 + kx)) * d.plane();
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + ky - 1;
          float* row = dst + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, 0.0f);
            continue;
          }
          // Columns whose source x + kx - 1 falls inside the image.
          const std::ptrdiff_t x0 = kx == 0 ? 1 : 0;
          const std::ptrdiff_t x1 = kx == 2 ? w - 1 : w;
          std::fill(row, row + x0, 0.0f);
          std::copy(src + sy * w + x0 + kx - 1, src + sy * w + x1 + kx - 1, row + x0);
          std::fill(row + x1, row + w, 0.0f);
        }
      }
    }
  }
}

void col2im_add(const float* col, const ImageDims& d, float* img) {
  const auto h = static_cast<std::ptrdiff_t>(d.height);
  const auto w = static_cast<std::ptrdiff_t>(d.width);
  for (std::size_t c = 0; c < d.channels; ++c) {
    float* dst = img + c * d.plane();
    for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
      for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
        const float* src = col + (c * 9 + static_cast<std::size_t>(ky * 3 + kx)) * d.plane();
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + ky - 1;
          if (sy < 0 || sy >= h) {
            continue;
          }
          const std::ptrdiff_t x0 = kx == 0 ? 1 : 0;
          const std::ptrdiff_t x1 = kx == 2 ? w - 1 : w;
          float* out = dst + sy * w + kx - 1;
          const float* in = src + y * w;
          for (std::ptrdiff_t x = x0; x < x1; ++x) {
            out[x] += in[x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_3x3(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto d = image_dims(x, "conv2d_3x3");
  if (weight.rank() != 4 || weight.dim(1) != d.channels || weight.dim(2) != 3 || weight.dim(3) != 3) {
    throw DimensionError("conv2d_3x3: weight " + shape_string(weight.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
  }
  const std::size_t out_ch = weight.dim(0);
  if (bias.numel() != out_ch) {
    throw DimensionError("conv2d_3x3: bias " + shape_string(bias.shape()) + " for " + std::to_string(out_ch) +
                         " output channels");
  }
  const std::size_t k = d.channels * 9;
  const std::size_t p = d.plane();
  const std::size_t o = out_ch;

  std::vector<float> out(d.batch * o * p);
  std::vector<float> col(k * p);
  const auto bv = bias.data();
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(x.data().data() + b * d.item(), d, col.data());
    float* ob = out.data() + b * o * p;
    detail::gemm(weight.data().data(), false, col.data(), false, ob, o, p, k, false);
    for (std::size_t c = 0; c < o; ++c) {
      for (std::size_t i = 0; i < p; ++i) {
        ob[c * p + i] += bv[c];
      }
    }
  }

  Shape shape{d.batch, out_ch, d.height, d.width};
  return Tensor::make_result(std::move(shape), std::move(out), "conv2d_3x3", {x, weight, bias},
                             [d, k, p, o](Node& self) {
                               Node& px = *self.parents[0];
                               Node& pw = *self.parents[1];
                               Node& pb = *self.parents[2];
                               std::vector<float> col(k * p);
                               for (std::size_t b = 0; b < d.batch; ++b) {
                                 const float* dout = self.grad.data() + b * o * p;
                                 if (pb.requires_grad) {
                                   auto& gb = pb.grad_buffer();
                                   for (std::size_t c = 0; c < o; ++c) {
                                     float acc = 0.0f;
                                     for (std::size_t i = 0; i < p; ++i) {
                                       acc += dout[c * p + i];
                                     }
                                     gb[c] += acc;
                                   }
                                 }
                                 if (pw.requires_grad) {
                                   im2col(px.data.data() + b * d.item(), d, col.data());
                                   detail::gemm(dout, false, col.data(), true, pw.grad_buffer().data(), o, k, p, true);
                                 }
                                 if (px.requires_grad) {
                                   detail::gemm(pw.data.data(), true, dout, false, col.data(), k, p, o, false);
                                   col2im_add(col.data(), d, px.grad_buffer().data() + b * d.item());
                                 }
                               }
                             });
}

Tensor avg_pool2d(const Tensor& x, std::size_t factor) {
  const auto d = image_dims(x, "avg_pool2d");
  if (factor == 0 || d.height % factor != 0 || d.width % factor != 0) {
    throw DimensionError("avg_pool2d: factor " + std::to_string(factor) + " does not divide " +
                         shape_string(x.shape()));
  }
  const std::size_t oh = d.height / factor;
  const std::size_t ow = d.width / factor;
  const float inv = 1.0f / static_cast<float>(factor * factor);
  const auto xd = x.data();
  std::vector<float> out(d.batch * d.channels * oh * ow);
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const float* src = xd.data() + bc * d.plane();
    float* dst = out.data() + bc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy) {
          for (std::size_t dx = 0; dx < factor; ++dx) {
            acc += src[(y * factor + dy) * d.width + xx * factor + dx];
          }
        }
        dst[y * ow + xx] = static_cast<float>(acc) * inv;
      }
    }
  }
  return Tensor::make_result({d.batch, d.channels, oh, ow}, std::move(out), "avg_pool2d", {x},
                             [d, factor, oh, ow, inv](Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
                                 for (std::size_t y = 0; y < d.height; ++y) {
                                   for (std::size_t xx = 0; xx < d.width; ++xx) {
                                     g[bc * d.plane() + y * d.width + xx] +=
                                         self.grad[bc * oh * ow + (y / factor) * ow + xx / factor] * inv;
                                   }
                                 }
                               }
                             });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  const auto d = image_dims(x, "upsample_nearest");
  if (factor == 0) {
    throw DimensionError("upsample_nearest: zero factor");
  }
  const std::size_t oh = d.height * factor;
  const std::size_t ow = d.width * factor;
  const auto xd = x.data();
  std::vector<float> out(d.batch * d.channels * oh * ow);
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    float* dst = out.data() + bc * oh * ow;
    for (std::size_t sy = 0; sy < d.height; ++sy) {
      const float* src = xd.data() + bc * d.plane() + sy * d.width;
      for (std::size_t dy = 0; dy < factor; ++dy, dst += ow) {
        for (std::size_t sx = 0; sx < d.width; ++sx) {
          std::fill(dst + sx * factor, dst + (sx + 1) * factor, src[sx]);
        }
      }
    }
  }
  return Tensor::make_result({d.batch, d.channels, oh, ow}, std::move(out), "upsample_nearest", {x},
                             [d, factor, oh, ow](Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               const float* src = self.grad.data();
                               for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
                                 for (std::size_t sy = 0; sy < d.height; ++sy) {
                                   float* dst = g.data() + bc * d.plane() + sy * d.width;
                                   for (std::size_t dy = 0; dy < factor; ++dy, src += ow) {
                                     for (std::size_t sx = 0; sx < d.width; ++sx) {
                                       for (std::size_t dx = 0; dx < factor; ++dx) {
                                         dst[sx] += src[sx * factor + dx];
                                       }
                                     }
                                   }
                                 }
                               }
                             });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw DimensionError("concat_channels: no inputs");
  }
  const auto d0 = image_dims(parts[0], "concat_channels");
  std::vector<std::size_t> chans;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto d = image_dims(p, "concat_channels");
    if (d.batch != d0.batch || d.height != d0.height || d.width != d0.width) {
      throw DimensionError("concat_channels: part " + shape_string(p.shape()) + " incompatible with " +
                           shape_string(parts[0].shape()));
    }
    chans.push_back(d.channels);
    total += d.channels;
  }
  const std::size_t plane = d0.plane();
  std::vector<float> out(d0.batch * total * plane);
  for (std::size_t b = 0; b < d0.batch; ++b) {
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const float* src = parts[k].data().data() + b * chans[k] * plane;
      std::copy_n(src, chans[k] * plane, out.data() + (b * total + c0) * plane);
      c0 += chans[k];
    }
  }
  return Tensor::make_result({d0.batch, total, d0.height, d0.width}, std::move(out), "concat_channels", parts,
                             [batch = d0.batch, total, plane, chans = std::move(chans)](Node& self) {
                               std::size_t c0 = 0;
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 auto& p = *self.parents[k];
                                 if (p.requires_grad) {
                                   auto& g = p.grad_buffer();
                                   for (std::size_t b = 0; b < batch; ++b) {
                                     const float* src = self.grad.data() + (b * total + c0) * plane;
                                     float* dst = g.data() + b * chans[k] * plane;
                                     for (std::size_t i = 0; i < chans[k] * plane; ++i) {
                                       dst[i] += src[i];
                                     }
                                   }
                                 }
                                 c0 += chans[k];
                               }
                             });
}

Tensor broadcast_planes(const Tensor& v, std::size_t height, std::size_t width) {
  if (v.rank() != 2) {
    throw DimensionError("broadcast_planes: expected [batch, channels], got " + shape_string(v.shape()));
  }
  const std::size_t bc = v.numel();
  const std::size_t plane = height * width;
  const auto vd = v.data();
  std::vector<float> out(bc * plane);
  for (std::size_t i = 0; i < bc; ++i) {
    std::fill_n(out.data() + i * plane, plane, vd[i]);
  }
  return Tensor::make_result({v.dim(0), v.dim(1), height, width}, std::move(out), "broadcast_planes", {v},
                             [bc, plane](Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < bc; ++i) {
                                 double acc = 0.0;
                                 for (std::size_t j = 0; j < plane; ++j) {
                                   acc += self.grad[i * plane + j];
                                 }
                                 g[i] += static_cast<float>(acc);
                               }
                             });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  const auto d = image_dims(x, "add_channel_bias");
  if (bias.rank() != 2 || bias.dim(0) != d.batch || bias.dim(1) != d.channels) {
    throw DimensionError("add_channel_bias: bias " + shape_string(bias.shape()) + " incompatible with " +
                         shape_string(x.shape()));
  }
  const std::size_t bc = d.batch * d.channels;
  const std::size_t plane = d.plane();
  const auto xd = x.data();
  const auto bd = bias.data();
  std::vector<float> out(xd.size());
  for (std::size_t i = 0; i < bc; ++i) {
    for (std::size_t j = 0; j < plane; ++j) {
      out[i * plane + j] = xd[i * plane + j] + bd[i];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), "add_channel_bias", {x, bias},
                             [bc, plane](Node& self) {
                               Node& px = *self.parents[0];
                               Node& pb = *self.parents[1];
                               if (px.requires_grad) {
                                 auto& g = px.grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   g[i] += self.grad[i];
                                 }
                               }
                               if (pb.requires_grad) {
                                 auto& g = pb.grad_buffer();
                                 for (std::size_t i = 0; i < bc; ++i) {
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < plane; ++j) {
                                     acc += self.grad[i * plane + j];
                                   }
                                   g[i] += static_cast<float>(acc);
                                 }
                               }
                             });
}

Tensor global_mean_pool(const Tensor& x) {
  const auto d = image_dims(x, "global_mean_pool");
  const std::size_t bc = d.batch * d.channels;
  const std::size_t plane = d.plane();
  const auto xd = x.data();
  std::vector<float> out(bc);
  for (std::size_t i = 0; i < bc; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) {
      acc += xd[i * plane + j];
    }
    out[i] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return Tensor::make_result({d.batch, d.channels}, std::move(out), "global_mean_pool", {x},
                             [bc, plane](Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               const float inv = 1.0f / static_cast<float>(plane);
                               for (std::size_t i = 0; i < bc; ++i) {
                                 for (std::size_t j = 0; j < plane; ++j) {
                                   g[i * plane + j] += self.grad[i] * inv;
                                 }
                               }
                             });
}

}  // namespace stsr
