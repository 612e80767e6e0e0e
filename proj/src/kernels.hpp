// SPDX-License-Identifier: Apache-2.0
// Dense kernels used by the graph. Every output element is accumulated in a
// fixed order (ascending reduction index), independent of how many rows are
// processed, so results are reproducible bit for bit and each row of a matmul
// depends only on its own inputs.
#pragma once

#include <algorithm>
#include <cstddef>

namespace pfrec::kernels {

/// c[n, m] += sum_k a[n, k] * b[k, m]
///
/// The depth is processed in blocks so a slab of `b` stays cache resident;
/// partial sums round-trip through `c` without changing the order in which
/// terms are added.
template <typename T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c,
              std::size_t n_rows, std::size_t depth, std::size_t cols) {
  constexpr std::size_t W = 256 / sizeof(T);
  constexpr std::size_t KB = 256;
  for (std::size_t k0 = 0; k0 < depth; k0 += KB) {
    const std::size_t k1 = std::min(depth, k0 + KB);
    std::size_t n = 0;
    for (; n + 2 <= n_rows; n += 2) {
      const T* a0 = a + n * depth;
      const T* a1 = a0 + depth;
      T* c0 = c + n * cols;
      T* c1 = c0 + cols;
      std::size_t m0 = 0;
      for (; m0 + W <= cols; m0 += W) {
        T acc0[W], acc1[W];
        for (std::size_t j = 0; j < W; ++j) {
          acc0[j] = c0[m0 + j];
          acc1[j] = c1[m0 + j];
        }
        for (std::size_t k = k0; k < k1; ++k) {
          const T v0 = a0[k];
          const T v1 = a1[k];
          const T* brow = b + k * cols + m0;
          for (std::size_t j = 0; j < W; ++j) {
            acc0[j] += v0 * brow[j];
            acc1[j] += v1 * brow[j];
          }
        }
        for (std::size_t j = 0; j < W; ++j) {
          c0[m0 + j] = acc0[j];
          c1[m0 + j] = acc1[j];
        }
      }
      for (; m0 < cols; ++m0) {
        T s0 = c0[m0], s1 = c1[m0];
        for (std::size_t k = k0; k < k1; ++k) {
          s0 += a0[k] * b[k * cols + m0];
          s1 += a1[k] * b[k * cols + m0];
        }
        c0[m0] = s0;
        c1[m0] = s1;
      }
    }
    for (; n < n_rows; ++n) {
      const T* a0 = a + n * depth;
      T* c0 = c + n * cols;
      std::size_t m0 = 0;
      for (; m0 + W <= cols; m0 += W) {
        T acc0[W];
        for (std::size_t j = 0; j < W; ++j) acc0[j] = c0[m0 + j];
        for (std::size_t k = k0; k < k1; ++k) {
          const T v0 = a0[k];
          const T* brow = b + k * cols + m0;
          for (std::size_t j = 0; j < W; ++j) acc0[j] += v0 * brow[j];
        }
        for (std::size_t j = 0; j < W; ++j) c0[m0 + j] = acc0[j];
      }
      for (; m0 < cols; ++m0) {
        T s0 = c0[m0];
        for (std::size_t k = k0; k < k1; ++k) s0 += a0[k] * b[k * cols + m0];
        c0[m0] = s0;
      }
    }
  }
}

/// out[c, r] = in[r, c]
template <typename T>
void transpose(const T* __restrict in, T* __restrict out, std::size_t rows,
               std::size_t cols) {
  constexpr std::size_t B = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += B) {
    const std::size_t r1 = std::min(rows, r0 + B);
    for (std::size_t c0 = 0; c0 < cols; c0 += B) {
      const std::size_t c1 = std::min(cols, c0 + B);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

}  // namespace pfrec::kernels
