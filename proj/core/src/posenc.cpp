#include "vilong/posenc.hpp"

#include <stdexcept>
#include <string>

#include "vilong/ops.hpp"

namespace vilong {

template <class T>
Ape2d<T> make_ape2d(std::size_t h_max, std::size_t w_max, std::size_t n_g, std::size_t d,
                    Rng& rng) {
  if (d % 2 != 0) {
    throw std::invalid_argument("make_ape2d: token dimension must be even, got " +
                                std::to_string(d));
  }
  if (h_max == 0 || w_max == 0) {
    throw std::invalid_argument("make_ape2d: table extents must be positive");
  }
  Ape2d<T> ape;
  ape.y_table = trunc_normal_init<T>({h_max, d / 2}, 0.02, rng);
  ape.x_table = trunc_normal_init<T>({w_max, d / 2}, 0.02, rng);
  if (n_g > 0) ape.global_table = trunc_normal_init<T>({n_g, d}, 0.02, rng);
  return ape;
}

template <class T>
Tensor<T> ape_apply(const Tensor<T>& tokens, const Ape2d<T>& ape, std::size_t H, std::size_t W) {
  const std::size_t n_g = ape.n_global();
  const std::size_t d = ape.dim();
  if (tokens.rank() != 2 || tokens.dim(1) != d || tokens.dim(0) != n_g + H * W) {
    throw std::invalid_argument("ape_apply: tokens " + detail::shape_to_string(tokens.shape()) +
                                " do not match layout of " + std::to_string(n_g) + " globals + " +
                                std::to_string(H) + "x" + std::to_string(W) + " locals, dim " +
                                std::to_string(d));
  }
  if (H > ape.h_max() || W > ape.w_max()) {
    throw std::invalid_argument("ape_apply: grid " + std::to_string(H) + "x" + std::to_string(W) +
                                " exceeds the embedding tables (" + std::to_string(ape.h_max()) +
                                "x" + std::to_string(ape.w_max()) +
                                "); absolute embeddings are not interpolated");
  }
  Tensor<T> out = tokens;
  const std::size_t half = d / 2;
  for (std::size_t g = 0; g < n_g; ++g) {
    for (std::size_t j = 0; j < d; ++j) out(g, j) += ape.global_table(g, j);
  }
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      T* row = out.data() + (n_g + y * W + x) * d;
      const T* yrow = ape.y_table.data() + y * half;
      const T* xrow = ape.x_table.data() + x * half;
      for (std::size_t j = 0; j < half; ++j) row[j] += yrow[j];
      for (std::size_t j = 0; j < half; ++j) row[half + j] += xrow[j];
    }
  }
  return out;
}

template <class T>
RpbTable<T> make_rpb_table(std::size_t heads, std::size_t max_disp, Rng& rng) {
  if (heads == 0 || max_disp == 0) {
    throw std::invalid_argument("make_rpb_table: heads and max_disp must be positive");
  }
  RpbTable<T> rpb;
  rpb.heads = heads;
  rpb.max_disp = max_disp;
  const std::size_t side = 2 * max_disp - 1;
  rpb.table = trunc_normal_init<T>({heads, side, side}, 0.02, rng);
  rpb.global_bias = trunc_normal_init<T>({heads, 3}, 0.02, rng);
  return rpb;
}

template <class T>
T rpb_lookup(const RpbTable<T>& rpb, std::size_t head, std::int64_t dy, std::int64_t dx) {
  const std::int64_t lim = static_cast<std::int64_t>(rpb.max_disp) - 1;
  if (dy < -lim || dy > lim || dx < -lim || dx > lim) {
    throw std::invalid_argument("rpb_lookup: displacement (" + std::to_string(dy) + "," +
                                std::to_string(dx) + ") outside table range +-" +
                                std::to_string(lim));
  }
  return rpb.table(head, static_cast<std::size_t>(dy + lim), static_cast<std::size_t>(dx + lim));
}

template <class T>
Tensor<T> rpb_bias_matrix(const RpbTable<T>& rpb, std::size_t H, std::size_t W, std::size_t n_g,
                          const Tensor<std::uint8_t>& mask, const Tensor<std::int32_t>* dy,
                          const Tensor<std::int32_t>* dx) {
  const std::size_t n_l = H * W;
  const std::size_t n = n_g + n_l;
  if (mask.rank() != 2 || mask.dim(0) != n || mask.dim(1) != n) {
    throw std::invalid_argument("rpb_bias_matrix: mask " + detail::shape_to_string(mask.shape()) +
                                " does not match " + std::to_string(n) + " tokens");
  }
  if ((dy == nullptr) != (dx == nullptr)) {
    throw std::invalid_argument("rpb_bias_matrix: dy/dx overrides must be given together");
  }
  if (dy && (dy->rank() != 2 || dy->dim(0) != n_l || dy->dim(1) != n_l || !dx->same_shape(*dy))) {
    throw std::invalid_argument("rpb_bias_matrix: displacement maps must both be [n_l x n_l]");
  }
  const std::int64_t lim = static_cast<std::int64_t>(rpb.max_disp) - 1;
  Tensor<T> bias({rpb.heads, n, n});
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k < n; ++k) {
      if (!mask(q, k)) continue;
      if (q < n_g || k < n_g) {
        // {global->any, local->global, global->global}
        std::size_t slot = (q < n_g && k < n_g) ? 2 : (q < n_g ? 0 : 1);
        for (std::size_t h = 0; h < rpb.heads; ++h) bias(h, q, k) = rpb.global_bias(h, slot);
        continue;
      }
      const std::size_t ql = q - n_g, kl = k - n_g;
      std::int64_t ddy, ddx;
      if (dy) {
        ddy = (*dy)(ql, kl);
        ddx = (*dx)(ql, kl);
      } else {
        ddy = static_cast<std::int64_t>(kl / W) - static_cast<std::int64_t>(ql / W);
        ddx = static_cast<std::int64_t>(kl % W) - static_cast<std::int64_t>(ql % W);
      }
      if (ddy < -lim || ddy > lim || ddx < -lim || ddx > lim) {
        throw std::invalid_argument(
            "rpb_bias_matrix: attended pair query=" + std::to_string(q) + " key=" +
            std::to_string(k) + " has displacement (" + std::to_string(ddy) + "," +
            std::to_string(ddx) + ") outside table range +-" + std::to_string(lim));
      }
      const std::size_t iy = static_cast<std::size_t>(ddy + lim);
      const std::size_t ix = static_cast<std::size_t>(ddx + lim);
      for (std::size_t h = 0; h < rpb.heads; ++h) bias(h, q, k) = rpb.table(h, iy, ix);
    }
  }
  return bias;
}

template <class T>
RpbTable<T> rpb_resize(const RpbTable<T>& rpb, std::size_t new_max_disp) {
  if (new_max_disp == 0) {
    throw std::invalid_argument("rpb_resize: new_max_disp must be >= 1");
  }
  const std::size_t side = 2 * rpb.max_disp - 1;
  const std::size_t new_side = 2 * new_max_disp - 1;
  // Heads ride along as bilinear channels: [h, s, s] -> [s, s, h].
  Tensor<T> grid({side, side, rpb.heads});
  for (std::size_t h = 0; h < rpb.heads; ++h)
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) grid(i, j, h) = rpb.table(h, i, j);
  Tensor<T> resized = bilinear_resize(grid, new_side, new_side);
  RpbTable<T> out;
  out.heads = rpb.heads;
  out.max_disp = new_max_disp;
  out.table = Tensor<T>({rpb.heads, new_side, new_side});
  for (std::size_t h = 0; h < rpb.heads; ++h)
    for (std::size_t i = 0; i < new_side; ++i)
      for (std::size_t j = 0; j < new_side; ++j) out.table(h, i, j) = resized(i, j, h);
  out.global_bias = rpb.global_bias;
  return out;
}

#define VILONG_INSTANTIATE_POSENC(T)                                                          \
  template Ape2d<T> make_ape2d<T>(std::size_t, std::size_t, std::size_t, std::size_t, Rng&);  \
  template Tensor<T> ape_apply<T>(const Tensor<T>&, const Ape2d<T>&, std::size_t,             \
                                  std::size_t);                                               \
  template RpbTable<T> make_rpb_table<T>(std::size_t, std::size_t, Rng&);                     \
  template T rpb_lookup<T>(const RpbTable<T>&, std::size_t, std::int64_t, std::int64_t);      \
  template Tensor<T> rpb_bias_matrix<T>(const RpbTable<T>&, std::size_t, std::size_t,         \
                                        std::size_t, const Tensor<std::uint8_t>&,             \
                                        const Tensor<std::int32_t>*,                          \
                                        const Tensor<std::int32_t>*);                         \
  template RpbTable<T> rpb_resize<T>(const RpbTable<T>&, std::size_t);

VILONG_INSTANTIATE_POSENC(float)
VILONG_INSTANTIATE_POSENC(double)

#undef VILONG_INSTANTIATE_POSENC

}  // namespace vilong
