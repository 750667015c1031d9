#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stsr/tensor.hpp"

namespace stsr {

// Elementwise. Binary ops accept equal shapes or a one-element operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor add_scalar(const Tensor& a, float offset);
Tensor exp(const Tensor& a);
/// Throws DomainError on any non-positive entry.
Tensor log(const Tensor& a);
/// Throws DomainError on zero entries.
Tensor reciprocal(const Tensor& a);
Tensor relu(const Tensor& a);
/// x * sigmoid(x).
Tensor silu(const Tensor& a);

// Reductions (accumulated in double).
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// mean((a - b)^2) over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

// Matrices.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Row-wise softmax with max subtraction. Rows sum to one.
Tensor softmax_rows(const Tensor& x);
/// log(sum(exp(row))) for each row of an [n x k] matrix, shape [n].
Tensor logsumexp_rows(const Tensor& x);
/// Divides every row by its Euclidean norm. Zero rows raise DegenerateInputError.
Tensor normalize_rows(const Tensor& x);
Tensor add_row_vector(const Tensor& x, const Tensor& bias);

// Indexing and layout.
Tensor reshape(const Tensor& a, Shape shape);
Tensor gather(const Tensor& a, std::span<const std::size_t> flat_indices);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
/// Stacks equal-shape tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
/// Multiplies slice i of the leading axis by factors[i] (constants, no gradient).
Tensor scale_batch(const Tensor& x, std::span<const float> factors);

// Image tensors are [batch, channels, height, width].
/// 3x3 convolution, stride 1, zero "same" padding. weight [out, in, 3, 3], bias [out].
Tensor conv2d_3x3(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Mean over non-overlapping factor x factor blocks.
Tensor avg_pool2d(const Tensor& x, std::size_t factor);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
Tensor concat_channels(std::span<const Tensor> parts);
/// [batch, channels] -> [batch, channels, height, width], constant over space.
Tensor broadcast_planes(const Tensor& v, std::size_t height, std::size_t width);
/// x[b, c, :, :] + bias[b, c].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// [batch, channels, height, width] -> [batch, channels].
Tensor global_mean_pool(const Tensor& x);

}  // namespace stsr
