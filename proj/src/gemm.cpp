#include "crowd/gemm.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <vector>

namespace crowd {
namespace {

// CBLAS ABI constants; stable across implementations.
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

using CblasDgemmFn = void (*)(int, int, int, int, int, int, double,
                              const double*, int, const double*, int, double,
                              double*, int);

CblasDgemmFn g_blas_dgemm = nullptr;
std::once_flag g_init_once;

void bind_blas() {
  // Some VMs mask CPUID model info, which makes OpenBLAS's dynamic dispatch
  // fall back to SSE2 kernels. Pin the AVX-512 kernels when the CPU has them.
  // OpenBLAS reads the variable in its init path, so the library must not be
  // loaded yet -- hence dlopen binding instead of a link-time dependency.
#if defined(__x86_64__)
  if (__builtin_cpu_supports("avx512f"))
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", /*overwrite=*/0);
#endif
  void* handle = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
  if (!handle) handle = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
  if (!handle) return;
  if (auto set_threads = reinterpret_cast<void (*)(int)>(
          dlsym(handle, "openblas_set_num_threads")))
    set_threads(1);  // determinism + the single-threaded runtime contract
  g_blas_dgemm =
      reinterpret_cast<CblasDgemmFn>(dlsym(handle, "cblas_dgemm"));
}

// Correctness-first fallback used when no BLAS can be loaded.
void naive_dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  std::vector<double> at, bt;
  const double* A = a;
  const double* B = b;
  int sa = lda, sb = ldb;
  if (trans_a) {
    at.resize(static_cast<std::size_t>(m) * k);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) at[static_cast<std::size_t>(i) * k + j] = a[static_cast<std::size_t>(j) * lda + i];
    A = at.data();
    sa = k;
  }
  if (trans_b) {
    bt.resize(static_cast<std::size_t>(k) * n);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j) bt[static_cast<std::size_t>(i) * n + j] = b[static_cast<std::size_t>(j) * ldb + i];
    B = bt.data();
    sb = n;
  }
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * ldc;
    if (beta == 0.0)
      std::memset(crow, 0, sizeof(double) * static_cast<std::size_t>(n));
    else if (beta != 1.0)
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    for (int p = 0; p < k; ++p) {
      double av = alpha * A[static_cast<std::size_t>(i) * sa + p];
      const double* brow = B + static_cast<std::size_t>(p) * sb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

void init_numerics() { std::call_once(g_init_once, bind_blas); }

bool using_blas() {
  init_numerics();
  return g_blas_dgemm != nullptr;
}

void dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
           const double* a, int lda, const double* b, int ldb, double beta,
           double* c, int ldc) {
  init_numerics();
  if (m == 0 || n == 0) return;
  if (g_blas_dgemm) {
    g_blas_dgemm(kRowMajor, trans_a ? kTrans : kNoTrans,
                 trans_b ? kTrans : kNoTrans, m, n, k, alpha, a, lda, b, ldb,
                 beta, c, ldc);
    return;
  }
  naive_dgemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace crowd
