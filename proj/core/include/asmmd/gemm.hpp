#pragma once

#include <cstdint>

namespace asmmd {

/// Row-major C = alpha * op(A) * op(B) + beta * C.
/// op(A) is m x k, op(B) is k x n, C is m x n. Leading dimensions are the
/// row strides of the stored (untransposed) matrices. Small products run on
/// an inline kernel, large ones are forwarded to BLAS on a single thread.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n,
          std::int64_t k, double alpha, const double* a, std::int64_t lda,
          const double* b, std::int64_t ldb, double beta, double* c,
          std::int64_t ldc);

}  // namespace asmmd
