#include <atomic>
#include <cstdlib>

#include "falsevfl/error.hpp"
#include "falsevfl/kernels.hpp"

namespace falsevfl::kernels {
namespace {

// FALSEVFL_KERNELS=scalar forces the reference kernels.
Backend detect() {
  const char* forced = std::getenv("FALSEVFL_KERNELS");
  if (forced != nullptr && std::string_view(forced) == "scalar") return Backend::Scalar;
  if (avx2_supported()) return Backend::Avx2;
  return Backend::Scalar;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> backend{detect()};
  return backend;
}

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  if (!avx2::compiled()) return false;
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() { return current().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (backend == Backend::Avx2 && !avx2_supported()) {
    throw ConfigError("AVX2 kernels requested but not supported on this CPU");
  }
  current().store(backend, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& active() {
  return active_backend() == Backend::Avx2 ? avx2::table() : scalar::table();
}

}  // namespace falsevfl::kernels
