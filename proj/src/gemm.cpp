#include "wtcf/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace wtcf {
namespace {

// Blocking: B is packed per k-block into 16-wide column panels, A into
// 8-row strips. KC keeps one B panel plus one A strip inside L1/L2.
constexpr int MR = 8;
constexpr int NR = 16;
constexpr int KC = 384;

struct Scratch {
  std::vector<double> a_pack;
  std::vector<double> b_pack;
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

enum class Layout { normal, transposed };

// Pack an MR-row strip of A for rows [i0, i0+rows) and k in [k0, k0+kc).
// Padded rows are zero so the kernel never reads garbage. The full-strip
// case runs branch-free; edges take the guarded path.
template <Layout L>
void pack_a_strip(const double* a, int lda, int i0, int rows, int k0, int kc, double* out) {
  if (rows == MR) {
    if constexpr (L == Layout::normal) {
      const double* base = a + static_cast<std::size_t>(i0) * lda + k0;
      for (int k = 0; k < kc; ++k) {
        double* dst = out + static_cast<std::size_t>(k) * MR;
        for (int r = 0; r < MR; ++r) dst[r] = base[static_cast<std::size_t>(r) * lda + k];
      }
    } else {
      const double* base = a + static_cast<std::size_t>(k0) * lda + i0;
      for (int k = 0; k < kc; ++k)
        std::memcpy(out + static_cast<std::size_t>(k) * MR, base + static_cast<std::size_t>(k) * lda,
                    MR * sizeof(double));
    }
    return;
  }
  for (int k = 0; k < kc; ++k) {
    for (int r = 0; r < MR; ++r) {
      double v = 0.0;
      if (r < rows) {
        if constexpr (L == Layout::normal)
          v = a[static_cast<std::size_t>(i0 + r) * lda + (k0 + k)];
        else
          v = a[static_cast<std::size_t>(k0 + k) * lda + (i0 + r)];
      }
      out[static_cast<std::size_t>(k) * MR + r] = v;
    }
  }
}

// Pack NR-wide panels of B for all n, k in [k0, k0+kc). Trailing columns of
// the final panel are zero-padded.
template <Layout L>
void pack_b(const double* b, int ldb, int k0, int kc, int n, double* out) {
  const int panels = (n + NR - 1) / NR;
  for (int p = 0; p < panels; ++p) {
    const int j0 = p * NR;
    const int cols = std::min(NR, n - j0);
    double* dst = out + static_cast<std::size_t>(p) * kc * NR;
    if (cols == NR) {
      if constexpr (L == Layout::normal) {
        const double* base = b + static_cast<std::size_t>(k0) * ldb + j0;
        for (int k = 0; k < kc; ++k)
          std::memcpy(dst + static_cast<std::size_t>(k) * NR,
                      base + static_cast<std::size_t>(k) * ldb, NR * sizeof(double));
      } else {
        const double* base = b + static_cast<std::size_t>(j0) * ldb + k0;
        for (int k = 0; k < kc; ++k) {
          double* row = dst + static_cast<std::size_t>(k) * NR;
          for (int j = 0; j < NR; ++j) row[j] = base[static_cast<std::size_t>(j) * ldb + k];
        }
      }
      continue;
    }
    for (int k = 0; k < kc; ++k) {
      for (int j = 0; j < NR; ++j) {
        double v = 0.0;
        if (j < cols) {
          if constexpr (L == Layout::normal)
            v = b[static_cast<std::size_t>(k0 + k) * ldb + (j0 + j)];
          else
            v = b[static_cast<std::size_t>(j0 + j) * ldb + (k0 + k)];
        }
        dst[static_cast<std::size_t>(k) * NR + j] = v;
      }
    }
  }
}

#if defined(__AVX512F__)

// 8x16 register tile accumulated over the whole k-block.
void kernel_8x16(const double* ap, const double* bp, int kc, double* c, int ldc, int rows,
                 int cols, int accumulate) {
  __m512d acc0[MR], acc1[MR];
  const __mmask8 m0 = cols >= 8 ? 0xff : static_cast<__mmask8>((1u << cols) - 1);
  const __mmask8 m1 = cols >= NR ? 0xff
                                 : (cols > 8 ? static_cast<__mmask8>((1u << (cols - 8)) - 1) : 0);
  for (int r = 0; r < MR; ++r) {
    acc0[r] = _mm512_setzero_pd();
    acc1[r] = _mm512_setzero_pd();
  }
  for (int k = 0; k < kc; ++k) {
    const __m512d b0 = _mm512_loadu_pd(bp + static_cast<std::size_t>(k) * NR);
    const __m512d b1 = _mm512_loadu_pd(bp + static_cast<std::size_t>(k) * NR + 8);
    const double* arow = ap + static_cast<std::size_t>(k) * MR;
    for (int r = 0; r < MR; ++r) {
      const __m512d av = _mm512_set1_pd(arow[r]);
      acc0[r] = _mm512_fmadd_pd(av, b0, acc0[r]);
      acc1[r] = _mm512_fmadd_pd(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < rows; ++r) {
    double* crow = c + static_cast<std::size_t>(r) * ldc;
    if (accumulate) {
      acc0[r] = _mm512_add_pd(acc0[r], _mm512_maskz_loadu_pd(m0, crow));
      if (m1) acc1[r] = _mm512_add_pd(acc1[r], _mm512_maskz_loadu_pd(m1, crow + 8));
    }
    _mm512_mask_storeu_pd(crow, m0, acc0[r]);
    if (m1) _mm512_mask_storeu_pd(crow + 8, m1, acc1[r]);
  }
}

#else

void kernel_8x16(const double* ap, const double* bp, int kc, double* c, int ldc, int rows,
                 int cols, int accumulate) {
  double acc[MR][NR];
  for (auto& row : acc) std::fill(row, row + NR, 0.0);
  for (int k = 0; k < kc; ++k) {
    const double* b = bp + static_cast<std::size_t>(k) * NR;
    const double* arow = ap + static_cast<std::size_t>(k) * MR;
    for (int r = 0; r < MR; ++r) {
      const double av = arow[r];
      for (int j = 0; j < NR; ++j) acc[r][j] += av * b[j];
    }
  }
  for (int r = 0; r < rows; ++r) {
    double* crow = c + static_cast<std::size_t>(r) * ldc;
    for (int j = 0; j < cols; ++j) {
      if (accumulate)
        crow[j] += acc[r][j];
      else
        crow[j] = acc[r][j];
    }
  }
}

#endif

template <Layout LA, Layout LB>
void gemm_packed(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc, int beta) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0)
      for (int i = 0; i < m; ++i)
        std::fill(c + static_cast<std::size_t>(i) * ldc, c + static_cast<std::size_t>(i) * ldc + n,
                  0.0);
    return;
  }
  auto& s = scratch();
  const int panels = (n + NR - 1) / NR;
  s.b_pack.resize(static_cast<std::size_t>(panels) * KC * NR);
  s.a_pack.resize(static_cast<std::size_t>(KC) * MR);

  for (int k0 = 0; k0 < k; k0 += KC) {
    const int kc = std::min(KC, k - k0);
    const int acc_c = (beta == 1 || k0 > 0) ? 1 : 0;
    pack_b<LB>(b, ldb, k0, kc, n, s.b_pack.data());
    for (int i0 = 0; i0 < m; i0 += MR) {
      const int rows = std::min(MR, m - i0);
      pack_a_strip<LA>(a, lda, i0, rows, k0, kc, s.a_pack.data());
      for (int p = 0; p < panels; ++p) {
        const int j0 = p * NR;
        const int cols = std::min(NR, n - j0);
        kernel_8x16(s.a_pack.data(), s.b_pack.data() + static_cast<std::size_t>(p) * kc * NR, kc,
                    c + static_cast<std::size_t>(i0) * ldc + j0, ldc, rows, cols, acc_c);
      }
    }
  }
}

template <Layout LA, Layout LB>
void gemm_small(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
                int ldc, int beta) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * ldc;
    if (beta == 0) std::fill(crow, crow + n, 0.0);
    for (int kk = 0; kk < k; ++kk) {
      const double av = LA == Layout::normal ? a[static_cast<std::size_t>(i) * lda + kk]
                                             : a[static_cast<std::size_t>(kk) * lda + i];
      if constexpr (LB == Layout::normal) {
        const double* brow = b + static_cast<std::size_t>(kk) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::size_t>(j) * ldb + kk];
      }
    }
  }
}

}  // namespace

void dgemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc, int beta) {
  gemm_packed<Layout::normal, Layout::normal>(m, n, k, a, lda, b, ldb, c, ldc, beta);
}
void dgemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc, int beta) {
  gemm_packed<Layout::transposed, Layout::normal>(m, n, k, a, lda, b, ldb, c, ldc, beta);
}
void dgemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc, int beta) {
  gemm_packed<Layout::normal, Layout::transposed>(m, n, k, a, lda, b, ldb, c, ldc, beta);
}

void dgemm_small_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                    double* c, int ldc, int beta) {
  gemm_small<Layout::normal, Layout::normal>(m, n, k, a, lda, b, ldb, c, ldc, beta);
}
void dgemm_small_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                    double* c, int ldc, int beta) {
  gemm_small<Layout::transposed, Layout::normal>(m, n, k, a, lda, b, ldb, c, ldc, beta);
}
void dgemm_small_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                    double* c, int ldc, int beta) {
  gemm_small<Layout::normal, Layout::transposed>(m, n, k, a, lda, b, ldb, c, ldc, beta);
}

}  // namespace wtcf
