#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mvlt/tensor.hpp"

// Differentiable tensor operations. Every function records a backward
// closure when one of its inputs requires a gradient.
namespace mvlt::ops {

// [m, k] x [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Adds a length-cols bias to every row of `a`.
Tensor add_bias(const Tensor& a, const Tensor& bias);

// x W + b with W stored [in, out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Exact erf form: 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(const Tensor& x);

// Normalizes over the last axis, then applies the affine gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& logits, std::size_t axis);

std::vector<Tensor> split(const Tensor& x, std::size_t axis, std::span<const std::size_t> sizes);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

// Row gather over the matrix view of `x`; indices may repeat.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean over rows of -log softmax(logits)[row, target].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// Mean of squared differences; gradients flow to both arguments.
Tensor mse(const Tensor& pred, const Tensor& target);

// Multi-head scaled dot-product attention without a mask.
// q: [Tq, D], k/v: [Tk, D]; D split evenly across `heads`.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

}  // namespace mvlt::ops
