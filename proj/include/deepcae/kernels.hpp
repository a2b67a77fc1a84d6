#pragma once

#include "deepcae/matrix.hpp"

// Dense products used by the tape and the penalty code.
//
// The functions in `kernels` are OpenMP-parallel over output rows. Every
// output entry is accumulated in the same order regardless of thread count,
// so results are bitwise reproducible. `kernels::reference` holds plain serial
// loops kept as the test oracle and benchmark baseline.

namespace deepcae::kernels {

/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// transpose(a) * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * transpose(b)
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Threads OpenMP would use for a parallel region (1 without OpenMP).
int max_threads();

namespace reference {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
}  // namespace reference

}  // namespace deepcae::kernels
