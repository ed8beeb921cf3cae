#pragma once

#include <cblas.h>

#include <mutex>

extern "C" void openblas_set_num_threads(int);

namespace mscnn::detail {

// Row-major dgemm: C = alpha * op(A) * op(B) + beta * C.
// OpenBLAS is pinned to one thread so results stay bit-identical run to run.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta,
                 double* c, int ldc) {
    static std::once_flag once;
    std::call_once(once, [] { openblas_set_num_threads(1); });
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

}  // namespace mscnn::detail
