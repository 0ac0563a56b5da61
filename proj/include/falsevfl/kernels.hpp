#pragma once
// Dense inner-loop kernels.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant. The active table is chosen once at startup from CPUID
// and can be overridden (tests, benchmarking) with set_backend().
//
// All matrices are row-major and densely packed.

#include <cstddef>
#include <string_view>

namespace falsevfl::kernels {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k);
  // sum_i (x[i] - mean[i])^2 * inv_var[i]
  double (*weighted_sq_dist)(const double* x, const double* mean,
                             const double* inv_var, std::size_t n);
};

namespace scalar {
const KernelTable& table();
}

namespace avx2 {
// True when the variant was compiled in (x86-64 builds only).
bool compiled();
const KernelTable& table();
}  // namespace avx2

// True when the running CPU supports AVX2 and FMA and the variant is compiled.
bool avx2_supported();

Backend active_backend();
// Throws ConfigError when asking for an unsupported backend.
void set_backend(Backend backend);
std::string_view backend_name(Backend backend);

const KernelTable& active();

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k) {
  active().gemm_nt(a, b, c, m, n, k);
}
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k) {
  active().gemm_nn(a, b, c, m, n, k);
}
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k) {
  active().gemm_tn(a, b, c, m, n, k);
}
inline double weighted_sq_dist(const double* x, const double* mean,
                               const double* inv_var, std::size_t n) {
  return active().weighted_sq_dist(x, mean, inv_var, n);
}

}  // namespace falsevfl::kernels
