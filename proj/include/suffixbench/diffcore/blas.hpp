#pragma once

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace suffixbench::diffcore {

// The GEMMs here are small; dispatching them to worker threads costs more
// than it buys and a fixed thread count keeps results run-to-run identical.
inline bool pin_blas_threads() {
    openblas_set_num_threads(1);
    return true;
}
inline const bool blas_threads_pinned = pin_blas_threads();

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
// The heavy inner kernel is delegated to BLAS; everything around it
// (graph, backward rules, all other operators) is implemented here.
inline void gemm(bool trans_a, bool trans_b, long m, long n, long k, float alpha, const float* a,
                 long lda, const float* b, long ldb, float beta, float* c, long ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, long m, long n, long k, double alpha, const double* a,
                 long lda, const double* b, long ldb, double beta, double* c, long ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

}  // namespace suffixbench::diffcore
