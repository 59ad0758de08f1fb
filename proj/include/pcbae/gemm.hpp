#pragma once

// Small single-precision matrix kernels used by the convolution layers.
// Every output element is accumulated in a fixed order that does not depend
// on the tiling, so results are reproducible bit for bit.

#include <algorithm>
#include <cstddef>

namespace pcbae::detail {

// One R x W block of C += A * B, summing K in chunks of kKc. Each chunk
// starts from zero in registers and is then added to C, which keeps the
// float rounding error near (kKc + K / kKc) ulps instead of K.
template <std::size_t R, std::size_t W>
inline void gemm_nn_block(std::size_t rows, std::size_t width, std::size_t K, const float* A, std::size_t lda,
                          const float* B, std::size_t ldb, float* C, std::size_t ldc) {
  constexpr std::size_t kKc = 64;
  for (std::size_t k0 = 0; k0 < K; k0 += kKc) {
    const std::size_t k1 = std::min(K, k0 + kKc);
    float acc[R][W] = {};
    if (rows == R && width == W) {
      for (std::size_t k = k0; k < k1; ++k) {
        const float* __restrict b = B + k * ldb;
        for (std::size_t r = 0; r < R; ++r) {
          const float a = A[r * lda + k];
          for (std::size_t t = 0; t < W; ++t) acc[r][t] += a * b[t];
        }
      }
    } else {
      for (std::size_t k = k0; k < k1; ++k) {
        const float* __restrict b = B + k * ldb;
        for (std::size_t r = 0; r < rows; ++r) {
          const float a = A[r * lda + k];
          for (std::size_t t = 0; t < width; ++t) acc[r][t] += a * b[t];
        }
      }
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < width; ++t) C[r * ldc + t] += acc[r][t];
  }
}

// C[M x N] += A[M x K] * B[K x N], all row-major, in 4 x 32 register blocks.
inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const float* A,
                    std::size_t lda, const float* B, std::size_t ldb, float* C,
                    std::size_t ldc) {
  constexpr std::size_t kR = 4;
  constexpr std::size_t kW = 32;
  for (std::size_t i = 0; i < M; i += kR) {
    const std::size_t rows = std::min(kR, M - i);
    for (std::size_t j = 0; j < N; j += kW) {
      gemm_nn_block<kR, kW>(rows, std::min(kW, N - j), K, A + i * lda, lda, B + j, ldb, C + i * ldc + j, ldc);
    }
  }
}

// C[M x N] += A[M x K] * B[N x K]^T. Inner products run along K, in 4x4
// register blocks.
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const float* A,
                    std::size_t lda, const float* B, std::size_t ldb, float* C,
                    std::size_t ldc) {
  auto dot = [K](const float* __restrict a, const float* __restrict b) {
    float s = 0.0f;
#pragma omp simd reduction(+ : s)
    for (std::size_t k = 0; k < K; ++k) s += a[k] * b[k];
    return s;
  };
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    const float* __restrict a0 = A + (i + 0) * lda;
    const float* __restrict a1 = A + (i + 1) * lda;
    const float* __restrict a2 = A + (i + 2) * lda;
    const float* __restrict a3 = A + (i + 3) * lda;
    std::size_t j = 0;
    for (; j + 4 <= N; j += 4) {
      const float* __restrict b0 = B + (j + 0) * ldb;
      const float* __restrict b1 = B + (j + 1) * ldb;
      const float* __restrict b2 = B + (j + 2) * ldb;
      const float* __restrict b3 = B + (j + 3) * ldb;
      float s00 = 0, s01 = 0, s02 = 0, s03 = 0, s10 = 0, s11 = 0, s12 = 0, s13 = 0;
      float s20 = 0, s21 = 0, s22 = 0, s23 = 0, s30 = 0, s31 = 0, s32 = 0, s33 = 0;
#pragma omp simd reduction(+ : s00, s01, s02, s03, s10, s11, s12, s13, s20, s21, s22, s23, s30, s31, s32, s33)
      for (std::size_t k = 0; k < K; ++k) {
        const float x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
        const float y0 = b0[k], y1 = b1[k], y2 = b2[k], y3 = b3[k];
        s00 += x0 * y0; s01 += x0 * y1; s02 += x0 * y2; s03 += x0 * y3;
        s10 += x1 * y0; s11 += x1 * y1; s12 += x1 * y2; s13 += x1 * y3;
        s20 += x2 * y0; s21 += x2 * y1; s22 += x2 * y2; s23 += x2 * y3;
        s30 += x3 * y0; s31 += x3 * y1; s32 += x3 * y2; s33 += x3 * y3;
      }
      float* c0 = C + (i + 0) * ldc + j;
      float* c1 = C + (i + 1) * ldc + j;
      float* c2 = C + (i + 2) * ldc + j;
      float* c3 = C + (i + 3) * ldc + j;
      c0[0] += s00; c0[1] += s01; c0[2] += s02; c0[3] += s03;
      c1[0] += s10; c1[1] += s11; c1[2] += s12; c1[3] += s13;
      c2[0] += s20; c2[1] += s21; c2[2] += s22; c2[3] += s23;
      c3[0] += s30; c3[1] += s31; c3[2] += s32; c3[3] += s33;
    }
    for (; j < N; ++j) {
      const float* b = B + j * ldb;
      C[(i + 0) * ldc + j] += dot(a0, b);
      C[(i + 1) * ldc + j] += dot(a1, b);
      C[(i + 2) * ldc + j] += dot(a2, b);
      C[(i + 3) * ldc + j] += dot(a3, b);
    }
  }
  for (; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) C[i * ldc + j] += dot(A + i * lda, B + j * ldb);
  }
}

}  // namespace pcbae::detail
