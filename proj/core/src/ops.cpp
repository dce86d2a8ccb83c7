#include "vilong/ops.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>

namespace vilong {

namespace {

std::atomic<unsigned> g_threads{1};

// Splits [0, count) into contiguous blocks, one worker per block. Every output
// element is produced by exactly one worker with the same inner loop order as
// the serial path, so results do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  unsigned want = g_threads.load(std::memory_order_relaxed);
  if (want <= 1 || count < 2) {
    fn(std::size_t(0), count);
    return;
  }
  unsigned workers = static_cast<unsigned>(std::min<std::size_t>(want, count));
  std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk;
    std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

template <class T>
void require_rank2(const char* who, const Tensor<T>& t) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(who) + ": expected a rank-2 tensor, got " +
                                detail::shape_to_string(t.shape()));
  }
}

}  // namespace

void set_compute_threads(unsigned n) { g_threads.store(n == 0 ? 1 : n, std::memory_order_relaxed); }

unsigned compute_threads() { return g_threads.load(std::memory_order_relaxed); }

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                detail::shape_to_string(a.shape()) + " vs " +
                                detail::shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  parallel_for(m, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      T* crow = pc + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T aik = pa[i * k + kk];
        const T* brow = pb + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  });
  return c;
}

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("matmul_nt: inner dimensions disagree, " +
                                detail::shape_to_string(a.shape()) + " vs " +
                                detail::shape_to_string(b.shape()) + " transposed");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  parallel_for(m, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const T* arow = pa + i * k;
      T* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = pb + j * k;
        T acc = T(0);
        for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        crow[j] = acc;
      }
    }
  });
  return c;
}

template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2("matmul_tn", a);
  require_rank2("matmul_tn", b);
  if (a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("matmul_tn: inner dimensions disagree, " +
                                detail::shape_to_string(a.shape()) + " transposed vs " +
                                detail::shape_to_string(b.shape()));
  }
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  parallel_for(m, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = pb + kk * n;
      for (std::size_t i = lo; i < hi; ++i) {
        const T aki = pa[kk * m + i];
        T* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
      }
    }
  });
  return c;
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& scores, const Tensor<std::uint8_t>* mask) {
  require_rank2("softmax_rows", scores);
  if (mask && mask->shape() != scores.shape()) {
    throw std::invalid_argument("softmax_rows: mask shape " +
                                detail::shape_to_string(mask->shape()) + " does not match scores " +
                                detail::shape_to_string(scores.shape()));
  }
  const std::size_t r = scores.dim(0), c = scores.dim(1);
  Tensor<T> out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const T* srow = scores.data() + i * c;
    const std::uint8_t* mrow = mask ? mask->data() + i * c : nullptr;
    T maxv = T(0);
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (mrow && !mrow[j]) continue;
      if (!any || srow[j] > maxv) maxv = srow[j];
      any = true;
    }
    if (!any) {
      throw std::invalid_argument("softmax_rows: row " + std::to_string(i) + " is fully masked");
    }
    T* orow = out.data() + i * c;
    T denom = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      if (mrow && !mrow[j]) {
        orow[j] = T(0);
        continue;
      }
      T e = std::exp(srow[j] - maxv);
      orow[j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < c; ++j) {
      if (mrow && !mrow[j]) continue;
      orow[j] /= denom;
    }
  }
  return out;
}

template <class T>
Tensor<T> softmax_rows_backward(const Tensor<T>& probs, const Tensor<T>& dprobs) {
  require_rank2("softmax_rows_backward", probs);
  if (!probs.same_shape(dprobs)) {
    throw std::invalid_argument("softmax_rows_backward: probs " +
                                detail::shape_to_string(probs.shape()) + " vs dprobs " +
                                detail::shape_to_string(dprobs.shape()));
  }
  const std::size_t r = probs.dim(0), c = probs.dim(1);
  Tensor<T> dscores({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const T* p = probs.data() + i * c;
    const T* dp = dprobs.data() + i * c;
    T dot = T(0);
    for (std::size_t j = 0; j < c; ++j) dot += p[j] * dp[j];
    T* ds = dscores.data() + i * c;
    // Masked entries carry p == 0, so they stay 0 without consulting the mask.
    for (std::size_t j = 0; j < c; ++j) ds[j] = p[j] * (dp[j] - dot);
  }
  return dscores;
}

namespace {

template <class T>
void require_last_dim(const char* who, const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta) {
  if (x.rank() == 0 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.dim(0) != x.dim(x.rank() - 1) || beta.dim(0) != x.dim(x.rank() - 1)) {
    throw std::invalid_argument(std::string(who) + ": gamma/beta " +
                                detail::shape_to_string(gamma.shape()) + "/" +
                                detail::shape_to_string(beta.shape()) +
                                " must match last dimension of x " +
                                detail::shape_to_string(x.shape()));
  }
}

}  // namespace

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_last_dim("layer_norm", x, gamma, beta);
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x.data() + i * d;
    T* oi = out.data() + i * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      T dvj = xi[j] - mean;
      var += dvj * dvj;
    }
    var /= T(d);
    T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) oi[j] = (xi[j] - mean) * inv * gamma[j] + beta[j];
  }
  return out;
}

template <class T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                                      const Tensor<T>& dy, T eps) {
  require_last_dim("layer_norm_backward", x, gamma, gamma);
  if (!x.same_shape(dy)) {
    throw std::invalid_argument("layer_norm_backward: dy " + detail::shape_to_string(dy.shape()) +
                                " does not match x " + detail::shape_to_string(x.shape()));
  }
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / d;
  LayerNormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({d}), Tensor<T>({d})};
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x.data() + i * d;
    const T* dyi = dy.data() + i * d;
    T* dxi = g.dx.data() + i * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      T dvj = xi[j] - mean;
      var += dvj * dvj;
    }
    var /= T(d);
    T inv = T(1) / std::sqrt(var + eps);
    T m1 = T(0), m2 = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      T xhat = (xi[j] - mean) * inv;
      T dxhat = dyi[j] * gamma[j];
      m1 += dxhat;
      m2 += dxhat * xhat;
      g.dgamma[j] += dyi[j] * xhat;
      g.dbeta[j] += dyi[j];
    }
    m1 /= T(d);
    m2 /= T(d);
    for (std::size_t j = 0; j < d; ++j) {
      T xhat = (xi[j] - mean) * inv;
      T dxhat = dyi[j] * gamma[j];
      dxi[j] = (dxhat - m1 - xhat * m2) * inv;
    }
  }
  return g;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < x.size(); ++i) {
    T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  return out;
}

template <class T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  if (!x.same_shape(dy)) {
    throw std::invalid_argument("gelu_backward: dy " + detail::shape_to_string(dy.shape()) +
                                " does not match x " + detail::shape_to_string(x.shape()));
  }
  Tensor<T> dx(x.shape());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  for (std::size_t i = 0; i < x.size(); ++i) {
    T v = x[i];
    T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
    T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
  return dx;
}

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& grid, std::size_t new_h, std::size_t new_w) {
  if (grid.rank() != 3) {
    throw std::invalid_argument("bilinear_resize: expected [h,w,c] grid, got " +
                                detail::shape_to_string(grid.shape()));
  }
  if (new_h == 0 || new_w == 0) {
    throw std::invalid_argument("bilinear_resize: target size must be positive, got " +
                                std::to_string(new_h) + "x" + std::to_string(new_w));
  }
  const std::size_t h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
  if (new_h == h && new_w == w) return grid;
  Tensor<T> out({new_h, new_w, c});
  // Align-corners: corner samples map exactly onto corner samples.
  const double sy = new_h > 1 ? double(h - 1) / double(new_h - 1) : 0.0;
  const double sx = new_w > 1 ? double(w - 1) / double(new_w - 1) : 0.0;
  for (std::size_t oy = 0; oy < new_h; ++oy) {
    double fy = oy * sy;
    std::size_t y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, h - 1);
    double wy = fy - double(y0);
    for (std::size_t ox = 0; ox < new_w; ++ox) {
      double fx = ox * sx;
      std::size_t x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, w - 1);
      double wx = fx - double(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v00 = grid(y0, x0, ch), v01 = grid(y0, x1, ch);
        double v10 = grid(y1, x0, ch), v11 = grid(y1, x1, ch);
        double top = v00 + (v01 - v00) * wx;
        double bot = v10 + (v11 - v10) * wx;
        out(oy, ox, ch) = static_cast<T>(top + (bot - top) * wy);
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> trunc_normal_init(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.next_trunc_normal(stddev));
  return t;
}

template <class T>
Tensor<T> uniform_init(std::vector<std::size_t> shape, double lo, double hi, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(lo + (hi - lo) * rng.next_double());
  return t;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add: shape mismatch " + detail::shape_to_string(a.shape()) +
                                " vs " + detail::shape_to_string(b.shape()));
  }
  Tensor<T> c(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
  return c;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add_inplace: shape mismatch " +
                                detail::shape_to_string(a.shape()) + " vs " +
                                detail::shape_to_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <class T>
void scale_inplace(Tensor<T>& a, T s) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= s;
}

template <class T>
T sum(const Tensor<T>& a) {
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  return acc;
}

template <class T>
Tensor<T> add_row_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  require_rank2("add_row_bias", a);
  if (bias.rank() != 1 || bias.dim(0) != a.dim(1)) {
    throw std::invalid_argument("add_row_bias: bias " + detail::shape_to_string(bias.shape()) +
                                " does not match rows of " + detail::shape_to_string(a.shape()));
  }
  Tensor<T> c(a.shape());
  const std::size_t m = a.dim(0), n = a.dim(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c(i, j) = a(i, j) + bias[j];
  return c;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank2("transpose", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

#define VILONG_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> matmul_tn<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&, const Tensor<std::uint8_t>*);           \
  template Tensor<T> softmax_rows_backward<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template LayerNormGrads<T> layer_norm_backward<T>(const Tensor<T>&, const Tensor<T>&,        \
                                                    const Tensor<T>&, T);                      \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                \
  template Tensor<T> gelu_backward<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> trunc_normal_init<T>(std::vector<std::size_t>, double, Rng&);             \
  template Tensor<T> uniform_init<T>(std::vector<std::size_t>, double, double, Rng&);          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);                                  \
  template void scale_inplace<T>(Tensor<T>&, T);                                               \
  template T sum<T>(const Tensor<T>&);                                                         \
  template Tensor<T> add_row_bias<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> transpose<T>(const Tensor<T>&);

VILONG_INSTANTIATE_OPS(float)
VILONG_INSTANTIATE_OPS(double)

#undef VILONG_INSTANTIATE_OPS

}  // namespace vilong
