#pragma once

#include <cstddef>

namespace wtcf {

// Row-major double GEMM: C = A op B (beta=0) or C += A op B (beta=1).
// Dimensions are the logical (post-transpose) ones: C is m x n, the
// contraction length is k. Leading dimensions are those of the stored
// arrays. Single-threaded by design; the packed micro-kernel keeps the
// result independent of blocking so repeated runs are bit-identical.
void dgemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc, int beta);
void dgemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc, int beta);
void dgemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc, int beta);

// Loop-nest path for tiny operands (per-head attention blocks) where packing
// overhead would dominate.
void dgemm_small_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                    double* c, int ldc, int beta);
void dgemm_small_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                    double* c, int ldc, int beta);
void dgemm_small_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                    double* c, int ldc, int beta);

}  // namespace wtcf
