#pragma once

// Differentiable primitives shared by every attention mechanism and model
// block. All reductions run in a fixed left-to-right order per output element
// so repeated runs (and threaded runs) are bitwise reproducible.

#include <cstdint>
#include <vector>

#include "vilong/rng.hpp"
#include "vilong/tensor.hpp"

namespace vilong {

// Number of worker threads used by the row-parallel loops in matmul and
// attention. Thread count never changes numerical results, only timing.
void set_compute_threads(unsigned n);
unsigned compute_threads();

// a [m,k] * b [k,n] -> [m,n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a [m,k] * b^T for b [n,k] -> [m,n]  (scores = Q K^T)
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// a^T [k,m] * b [k,n] -> [m,n]  (weight gradients = x^T dy)
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

// Row-wise softmax over the last dimension of a [r,c] tensor. Masked-out
// entries (mask value 0) are excluded from the normalization and exactly 0 in
// the output. A fully masked row is an error naming the row.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& scores, const Tensor<std::uint8_t>* mask = nullptr);

// d(scores) given the forward probabilities and d(probs).
template <class T>
Tensor<T> softmax_rows_backward(const Tensor<T>& probs, const Tensor<T>& dprobs);

// Normalizes over the last dimension; eps sits inside the square root.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

template <class T>
struct LayerNormGrads {
  Tensor<T> dx;
  Tensor<T> dgamma;
  Tensor<T> dbeta;
};

template <class T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                                      const Tensor<T>& dy, T eps = T(1e-5));

// Exact Gaussian-error formulation x * Phi(x), not the tanh approximation.
template <class T>
Tensor<T> gelu(const Tensor<T>& x);

template <class T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy);

// Align-corners bilinear resize of a [h,w,c] grid; channels are independent.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& grid, std::size_t new_h, std::size_t new_w);

// Samples from N(0, stddev^2) truncated to [-2 stddev, 2 stddev].
template <class T>
Tensor<T> trunc_normal_init(std::vector<std::size_t> shape, double stddev, Rng& rng);

template <class T>
Tensor<T> uniform_init(std::vector<std::size_t> shape, double lo, double hi, Rng& rng);

// Elementwise helpers (shapes must match exactly).
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

template <class T>
void scale_inplace(Tensor<T>& a, T s);

// Sum of all elements, accumulated in ascending index order.
template <class T>
T sum(const Tensor<T>& a);

// b [n] added to every row of a [m,n].
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& a, const Tensor<T>& bias);

template <class T>
Tensor<T> transpose(const Tensor<T>& a);

}  // namespace vilong
