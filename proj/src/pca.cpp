#include "deepcae/pca.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "deepcae/errors.hpp"
#include "deepcae/kernels.hpp"

namespace deepcae {

PcaBaseline pca_fit(const Matrix& x, std::size_t m) {
    const std::size_t n = x.rows(), d = x.cols();
    if (m < 1 || m > d)
        throw ShapeError("pca_fit: component count " + std::to_string(m) + " must be in [1, " + std::to_string(d) + "]");
    if (!x.all_finite()) throw NumericError("pca_fit: input contains non-finite values");

    PcaBaseline p;
    p.mean = Matrix(1, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) p.mean(0, c) += x(r, c);
    p.mean *= 1.0 / static_cast<double>(n);

    Eigen::MatrixXd centred(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) centred(r, c) = x(r, c) - p.mean(0, c);
    const Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericError("pca_fit: eigendecomposition failed");
    // Eigen returns ascending eigenvalues.
    const Eigen::VectorXd& values = solver.eigenvalues();
    const Eigen::MatrixXd& vectors = solver.eigenvectors();

    const double scale = std::max(values.cwiseAbs().maxCoeff(), 1e-300);
    p.axes = Matrix(d, m);
    for (std::size_t k = 0; k < d; ++k) p.eigenvalues.push_back(values(static_cast<Eigen::Index>(d - 1 - k)));
    for (std::size_t k = 0; k < m; ++k) {
        const auto col = static_cast<Eigen::Index>(d - 1 - k);
        Eigen::Index arg = 0;
        vectors.col(col).cwiseAbs().maxCoeff(&arg);
        const double sign = vectors(arg, col) < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < d; ++r) p.axes(r, k) = sign * vectors(static_cast<Eigen::Index>(r), col);
        if (p.eigenvalues[k] <= 1e-12 * scale) p.degenerate = true;
    }
    return p;
}

namespace {
Matrix centre(const PcaBaseline& pca, const Matrix& x) {
    if (x.cols() != pca.mean.cols())
        throw ShapeError("pca: expected " + std::to_string(pca.mean.cols()) + " columns, got " + x.shape_string());
    Matrix c = x;
    for (std::size_t r = 0; r < c.rows(); ++r)
        for (std::size_t k = 0; k < c.cols(); ++k) c(r, k) -= pca.mean(0, k);
    return c;
}
}  // namespace

Matrix pca_project(const PcaBaseline& pca, const Matrix& x) { return kernels::matmul(centre(pca, x), pca.axes); }

Matrix pca_reconstruct(const PcaBaseline& pca, const Matrix& x) {
    Matrix lifted = kernels::matmul_nt(pca_project(pca, x), pca.axes);
    for (std::size_t r = 0; r < lifted.rows(); ++r)
        for (std::size_t k = 0; k < lifted.cols(); ++k) lifted(r, k) += pca.mean(0, k);
    return lifted;
}

}  // namespace deepcae
