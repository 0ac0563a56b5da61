// Compiled with -mavx2 -mfma. Nothing in here may be called unless
// avx2_supported() returned true.
#include "falsevfl/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#define FALSEVFL_HAVE_AVX2 1
#include <immintrin.h>
#else
#define FALSEVFL_HAVE_AVX2 0
#endif

namespace falsevfl::kernels::avx2 {

#if FALSEVFL_HAVE_AVX2
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4),
                           acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Four dot products sharing the left operand.
inline void dot4(const double* a, const double* b0, const double* b1,
                 const double* b2, const double* b3, std::size_t k, double* out) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd();
  __m256d s3 = _mm256_setzero_pd();
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    const __m256d va = _mm256_loadu_pd(a + p);
    s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + p), s0);
    s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + p), s1);
    s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + p), s2);
    s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + p), s3);
  }
  double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
  for (; p < k; ++p) {
    r0 += a[p] * b0[p];
    r1 += a[p] * b1[p];
    r2 += a[p] * b2[p];
    r3 += a[p] * b3[p];
  }
  out[0] += r0;
  out[1] += r1;
  out[2] += r2;
  out[3] += r3;
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      dot4(ai, b + j * k, b + (j + 1) * k, b + (j + 2) * k, b + (j + 3) * k, k,
           ci + j);
    }
    for (; j < n; ++j) ci[j] += dot(ai, b + j * k, k);
  }
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip != 0.0) axpy(aip, b + p * n, ci, n);
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (ap[i] != 0.0) axpy(ap[i], bp, c + i * n, n);
    }
  }
}

double weighted_sq_dist(const double* x, const double* mean,
                        const double* inv_var, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(mean + i));
    acc = _mm256_fmadd_pd(_mm256_mul_pd(d, d), _mm256_loadu_pd(inv_var + i), acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = x[i] - mean[i];
    s += d * d * inv_var[i];
  }
  return s;
}

}  // namespace

bool compiled() { return true; }

const KernelTable& table() {
  static const KernelTable t{&dot, &axpy, &gemm_nt, &gemm_nn, &gemm_tn,
                             &weighted_sq_dist};
  return t;
}

#else

bool compiled() { return false; }

const KernelTable& table() { return scalar::table(); }

#endif

}  // namespace falsevfl::kernels::avx2
