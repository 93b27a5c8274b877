#pragma once

// Differentiable primitives. Shape rules are listed per function; violations
// throw DimensionError naming the primitive.

#include <cstdint>
#include <span>
#include <vector>

#include "gsmt/tensor.hpp"

namespace gsmt {

/// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// [m x n] + bias of n elements, broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);

Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);

// Reductions to a [1] scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Concatenates [m x n_k] matrices along columns.
Tensor concat_cols(std::span<const Tensor> parts);
/// Columns [begin, end) of an [m x n] matrix.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

/// Same values, new shape with equal element count.
Tensor reshape(const Tensor& a, Shape shape);

/// Row-wise softmax over [m x n]. `allowed` has m*n flags; disallowed entries
/// are excluded from the max and the normaliser and come out exactly 0.
/// Each row's normaliser is summed in sorted order, so permuting columns
/// permutes the output bit-exactly. Throws ContractError if a row has no
/// allowed entry.
Tensor masked_row_softmax(const Tensor& a, std::span<const std::uint8_t> allowed);
Tensor row_softmax(const Tensor& a);

/// alpha [m x n] times u [n x d] with every output entry summed over sorted
/// products: the result does not depend on the order of the n neighbours.
Tensor neighbor_sum(const Tensor& alpha, const Tensor& u);

/// p, q: [n x h] -> [(n*n) x h], row i*n + j holding p_i + q_j.
Tensor pair_sum(const Tensor& p, const Tensor& q);

}  // namespace gsmt
