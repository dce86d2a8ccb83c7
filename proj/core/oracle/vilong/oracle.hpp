#pragma once

// Brute-force references the library is tested against. The reference
// computations here use plain scalar loops only; they deliberately share no
// code with the implementations they validate.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vilong/attention.hpp"
#include "vilong/tensor.hpp"

namespace vilong::oracle {

// Scalar triple-loop matrix product.
template <class T>
Tensor<T> matmul_reference(const Tensor<T>& a, const Tensor<T>& b);

// Full quadratic attention mechanism (Q/K/V projections, masked softmax with
// optional [heads, N, N] bias, output projection), computed with per-token
// scalar loops. The O(N^2) reference the efficient paths are verified
// against; capped at N <= 512.
template <class T>
Tensor<T> masked_dense_reference(const Tensor<T>& tokens, const MsaParams<T>& params,
                                 const AttentionSpec& spec, const AttnMask& mask,
                                 const Tensor<T>* bias = nullptr);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
// Throws when f returns a non-finite value.
Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double h = 1e-5);

// |a - b| / max(|a|, |b|, 1e-8)
double rel_err(double a, double b);

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  double step = 1e-5;
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;

  bool passed(double tolerance) const { return max_rel_err < tolerance; }
  const GradCheckEntry* worst() const;
};

struct GradCheckOptions {
  AttentionSpec spec;
  std::size_t H = 4, W = 4;
  bool with_rpb = false;  // exercise the relative bias in the forward pass
  std::uint64_t seed = 7;
  double step = 1e-5;
};

// Checks msa_backward for the configured mechanism against finite
// differences of a randomly weighted scalar loss over msa_forward, in f64:
// the token gradient and every parameter tensor the mechanism uses. The
// parameters are redrawn at a generic scale first so no true gradient sits
// below the finite-difference noise floor.
GradCheckReport grad_check_msa(const GradCheckOptions& opt);

struct SweepOptions {
  std::vector<std::size_t> grid{2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
  std::vector<std::size_t> windows{1, 3, 5};
  std::vector<std::size_t> n_globals{0, 1, 2};
  std::size_t dim = 8;
  std::size_t heads = 2;
  bool with_rpb = true;
  bool backward = true;
  float tolerance = 1e-5f;
  std::uint64_t seed = 99;
};

struct SweepResult {
  std::size_t cases = 0;
  std::size_t failures = 0;
  double max_forward_diff = 0.0;
  double max_backward_diff = 0.0;
  std::string first_failure;  // empty when everything agreed
};

// Sliding-chunk vs. masked-dense agreement over every combination of grid
// sizes, windows, global counts, masking modes and the shift modes each
// masking mode admits (the exact-window mode only defines shift 0).
SweepResult chunk_dense_sweep(const SweepOptions& opt);

}  // namespace vilong::oracle
