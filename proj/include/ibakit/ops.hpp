#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ibakit/tensor.hpp"

// Differentiable tensor operations. When a tape is active on the calling
// thread and any input requires grad, the result is tracked and a backward
// rule is recorded.
//
// Broadcasting (binary elementwise ops only): the operands must have equal
// shapes, or the shape of one must be a trailing suffix of the other's shape
// (a rank-0 scalar is the empty suffix). The smaller operand is repeated over
// the leading axes of the larger one. Nothing else is accepted.
namespace ibakit {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor exp(const Tensor& x);
// Natural log; non-positive input is an InvalidValueError.
Tensor log(const Tensor& x);
// Elementwise x^p for a constant exponent.
Tensor pow(const Tensor& x, double p);
// Saturates to the representable values nearest 0 and 1, so the result lies
// strictly inside (0,1) for every finite input. NaN input throws.
Tensor sigmoid(const Tensor& x);
// tanh approximation
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);

Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Along the last axis, via max subtraction.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
// keep.size() == last dim; positions with keep == 0 get probability exactly 0.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> keep);

// Rows of table [v,d] picked by ids -> [ids.size(), d].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
// Normalizes over the last axis, then scales by gain and shifts by bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
// Element at a flat index as a rank-0 tensor.
Tensor select(const Tensor& x, std::size_t flat_index);

}  // namespace ibakit
