#include <cstdint>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "test_helpers.hpp"
#include "vilong/attention.hpp"
#include "vilong/rng.hpp"

using namespace vilong;

namespace {

std::uint64_t local_row_popcount(const AttnMask& mask, std::size_t y, std::size_t x) {
  const std::size_t q = mask.n_global + y * mask.width + x;
  std::uint64_t count = 0;
  for (std::size_t k = mask.n_global; k < mask.tokens(); ++k) count += mask.attend(q, k);
  return count;
}

}  // namespace

TEST_CASE("single-cell grid yields the all-true one-by-one mask") {
  AttnMask mask = build_vil_mask(1, 1, 0, 3, MaskingMode::SlidingChunkNoPad, 0);
  CHECK(mask.tokens() == 1);
  CHECK(mask.attend(0, 0) == 1);
}

TEST_CASE("exact window covering the grid equals full attention") {
  const std::size_t H = 4, W = 5;
  AttnMask vil = build_vil_mask(H, W, 1, 2 * 5 - 1, MaskingMode::ExactSlidingWindow, 0);
  AttnMask full = build_full_mask(H, W, 1);
  CHECK(vilong::testing::bitwise_equal(vil.attend, full.attend));
}

TEST_CASE("chunked 8x8 window-3 corner tokens attend sixteen locals") {
  AttnMask mask = build_vil_mask(8, 8, 0, 3, MaskingMode::SlidingChunkNoPad, 0);
  // chunk size 2: the corner chunk reaches chunks (0,0),(0,1),(1,0),(1,1)
  CHECK(local_row_popcount(mask, 0, 0) == 16);
  CHECK(local_row_popcount(mask, 7, 7) == 16);
  // an interior chunk reaches all nine neighbors
  CHECK(local_row_popcount(mask, 3, 3) == 36);
}

TEST_CASE("global rows and columns and the diagonal are always attended") {
  for (std::size_t n_g : {std::size_t(0), std::size_t(1), std::size_t(2)}) {
    for (auto masking : {MaskingMode::ExactSlidingWindow, MaskingMode::SlidingChunkNoPad,
                         MaskingMode::SlidingChunkCyclic}) {
      const int shift = masking == MaskingMode::ExactSlidingWindow ? 0 : -1;
      AttnMask mask = build_vil_mask(5, 4, n_g, 3, masking, shift);
      const std::size_t N = mask.tokens();
      for (std::size_t t = 0; t < N; ++t) {
        CHECK(mask.attend(t, t) == 1);
        if (t < n_g)
          for (std::size_t k = 0; k < N; ++k) {
            CHECK(mask.attend(t, k) == 1);
            CHECK(mask.attend(k, t) == 1);
          }
      }
    }
  }
}

TEST_CASE("exact-window masks are symmetric without globals") {
  for (std::size_t H : {3, 6, 9})
    for (std::size_t W : {4, 7}) {
      AttnMask mask = build_vil_mask(H, W, 0, 5, MaskingMode::ExactSlidingWindow, 0);
      const std::size_t N = mask.tokens();
      for (std::size_t a = 0; a < N; ++a)
        for (std::size_t b = 0; b < N; ++b) CHECK(mask.attend(a, b) == mask.attend(b, a));
    }
}

TEST_CASE("exact window bounds every local pair by the window radius") {
  const std::size_t H = 7, W = 6, window = 5;
  AttnMask mask = build_vil_mask(H, W, 1, window, MaskingMode::ExactSlidingWindow, 0);
  const std::ptrdiff_t r = (window - 1) / 2;
  for (std::size_t qy = 0; qy < H; ++qy)
    for (std::size_t qx = 0; qx < W; ++qx)
      for (std::size_t ky = 0; ky < H; ++ky)
        for (std::size_t kx = 0; kx < W; ++kx) {
          const bool in = std::abs(std::ptrdiff_t(ky) - std::ptrdiff_t(qy)) <= r &&
                          std::abs(std::ptrdiff_t(kx) - std::ptrdiff_t(qx)) <= r;
          const std::size_t q = 1 + qy * W + qx, k = 1 + ky * W + kx;
          CHECK(mask.attend(q, k) == (in ? 1 : 0));
        }
}

TEST_CASE("cyclic neighbors of a two-by-two chunk grid cover everything") {
  // 4x4 grid, chunk size 2: with wrap-around every chunk reaches all chunks
  AttnMask mask = build_vil_mask(4, 4, 0, 3, MaskingMode::SlidingChunkCyclic, 0);
  CHECK(mask.popcount() == 16u * 16u);
}

TEST_CASE("shift modes one through eight union to the unrestricted mask") {
  for (auto masking : {MaskingMode::SlidingChunkNoPad, MaskingMode::SlidingChunkCyclic}) {
    for (std::size_t n_g : {std::size_t(0), std::size_t(1)}) {
      AttnMask all = build_vil_mask(6, 7, n_g, 5, masking, 0);
      Tensor<std::uint8_t> merged(all.attend.shape());
      for (int mode = 1; mode <= 8; ++mode) {
        AttnMask part = build_vil_mask(6, 7, n_g, 5, masking, mode);
        for (std::size_t i = 0; i < merged.size(); ++i)
          merged[i] = merged[i] || part.attend[i];
      }
      CHECK(vilong::testing::bitwise_equal(merged, all.attend));
    }
  }
}

TEST_CASE("shift mode minus-one keeps only the own chunk") {
  const std::size_t H = 6, W = 8, window = 3, w_c = 2;
  AttnMask mask = build_vil_mask(H, W, 0, window, MaskingMode::SlidingChunkNoPad, -1);
  for (std::size_t qy = 0; qy < H; ++qy)
    for (std::size_t qx = 0; qx < W; ++qx)
      for (std::size_t ky = 0; ky < H; ++ky)
        for (std::size_t kx = 0; kx < W; ++kx) {
          const bool same_chunk = qy / w_c == ky / w_c && qx / w_c == kx / w_c;
          CHECK(mask.attend(qy * W + qx, ky * W + kx) == (same_chunk ? 1 : 0));
        }
}

TEST_CASE("each restricted shift mode is a subset of the unrestricted mask") {
  AttnMask all = build_vil_mask(5, 6, 1, 3, MaskingMode::SlidingChunkNoPad, 0);
  for (int mode = -1; mode <= 8; ++mode) {
    AttnMask part = build_vil_mask(5, 6, 1, 3, MaskingMode::SlidingChunkNoPad, mode);
    for (std::size_t i = 0; i < all.attend.size(); ++i)
      CHECK(part.attend[i] <= all.attend[i]);
  }
}

TEST_CASE("spec validation rejects structural errors") {
  AttentionSpec spec;
  spec.kind = AttnKind::ViL;
  spec.heads = 2;
  spec.dim = 8;

  SUBCASE("even window") {
    spec.window = 4;
    CHECK_THROWS_AS(validate_spec(spec), std::invalid_argument);
  }
  SUBCASE("shift restriction on the exact-window mode") {
    spec.masking = MaskingMode::ExactSlidingWindow;
    spec.shift_mode = 3;
    CHECK_THROWS_AS(validate_spec(spec), std::invalid_argument);
  }
  SUBCASE("shift mode out of range") {
    spec.shift_mode = 9;
    CHECK_THROWS_AS(validate_spec(spec), std::invalid_argument);
  }
  SUBCASE("head count must divide the dimension") {
    spec.heads = 3;
    CHECK_THROWS_AS(validate_spec(spec), std::invalid_argument);
  }
}

TEST_CASE("build_vil_mask rejects an even window") {
  CHECK_THROWS_AS(build_vil_mask(4, 4, 0, 2, MaskingMode::SlidingChunkNoPad, 0),
                  std::invalid_argument);
}

TEST_CASE("sample_shift_mode switches to the full neighborhood on schedule") {
  Rng rng(31);
  CHECK(sample_shift_mode(rng, 0, 100, 0.0) == 0);
  CHECK(sample_shift_mode(rng, 99, 100, 1.0) != 0);
  CHECK(sample_shift_mode(rng, 75, 100, 0.75) == 0);
  CHECK(sample_shift_mode(rng, 74, 100, 0.75) != 0);
}

TEST_CASE("sample_shift_mode draws identically under the same seed") {
  Rng a(9), b(9);
  for (int i = 0; i < 64; ++i) {
    int ma = sample_shift_mode(a, std::uint64_t(i), 1000, 0.75);
    int mb = sample_shift_mode(b, std::uint64_t(i), 1000, 0.75);
    CHECK(ma == mb);
    CHECK(ma >= 1);
    CHECK(ma <= 8);
  }
}
