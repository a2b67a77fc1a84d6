#include "deepcae/kernels.hpp"

#include <string>

#include "deepcae/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace deepcae::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 15;

void check_inner(std::size_t lhs, std::size_t rhs, const Matrix& a, const Matrix& b, const char* what) {
    if (lhs != rhs)
        throw ShapeError(std::string(what) + ": incompatible shapes " + a.shape_string() + " and " +
                         b.shape_string());
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_inner(a.cols(), b.rows(), a, b, "matmul");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Matrix c(n, m);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* cd = c.data().data();
    const bool par = n * k * m >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        double* crow = cd + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ad[i * k + p];
            const double* brow = bd + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_inner(a.rows(), b.rows(), a, b, "matmul_tn");
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
    Matrix c(n, m);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* cd = c.data().data();
    const bool par = n * k * m >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        double* crow = cd + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double api = ad[p * n + i];
            const double* brow = bd + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += api * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_inner(a.cols(), b.cols(), a, b, "matmul_nt");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Matrix c(n, m);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* cd = c.data().data();
    const bool par = n * k * m >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const double* arow = ad + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = bd + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            cd[i * m + j] = s;
        }
    }
    return c;
}

namespace reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_inner(a.cols(), b.rows(), a, b, "matmul");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
            c(i, j) = s;
        }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) { return matmul(a.transposed(), b); }

Matrix matmul_nt(const Matrix& a, const Matrix& b) { return matmul(a, b.transposed()); }

}  // namespace reference

}  // namespace deepcae::kernels
