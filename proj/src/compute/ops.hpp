#pragma once

#include <cmath>
#include <functional>

#include "../core/tensor.hpp"

namespace fraglow::ops {

// All kernels are deterministic: reductions (including matmul dot products)
// accumulate left-to-right in F64 and cast once to the output dtype.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& a);  // along last axis
Tensor concat(const std::vector<const Tensor*>& parts, int64_t axis);
Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t stop, bool squeeze);
Tensor reduce_mean(const Tensor& a);  // full reduce to [1]
Tensor reduce_sum(const Tensor& a);
Tensor reduce_axis(const Tensor& a, int64_t axis, bool mean);

// Gradients for the kernels above (inputs: forward operands and upstream dy).
Tensor matmul_grad_lhs(const Tensor& dy, const Tensor& a, const Tensor& b);
Tensor matmul_grad_rhs(const Tensor& dy, const Tensor& a, const Tensor& b);
Tensor tanh_grad(const Tensor& dy, const Tensor& y);
Tensor relu_grad(const Tensor& dy, const Tensor& x);
Tensor softmax_grad(const Tensor& dy, const Tensor& y);
// Reduces dy (shaped like a) onto the broadcast operand shape.
Tensor reduce_to_shape(const Tensor& dy, const Shape& target);

bool all_finite(const Tensor& a);

}  // namespace fraglow::ops
