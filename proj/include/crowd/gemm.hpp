#pragma once

namespace crowd {

// One-time numeric backend setup (BLAS binding, thread pinning). Idempotent;
// dgemm() calls it lazily, CLI entry points call it eagerly.
void init_numerics();

// True when the dlopen'ed BLAS backend is active (informational).
bool using_blas();

// Row-major C = alpha * op(A) * op(B) + beta * C where op(A) is m x k and
// op(B) is k x n. lda/ldb/ldc are leading dimensions of the stored matrices.
void dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
           const double* a, int lda, const double* b, int ldb, double beta,
           double* c, int ldc);

}  // namespace crowd
