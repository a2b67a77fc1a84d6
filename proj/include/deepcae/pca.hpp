#pragma once

#include <cstddef>
#include <vector>

#include "deepcae/matrix.hpp"

namespace deepcae {

/// Linear PCA used as the reconstruction baseline.
struct PcaBaseline {
    Matrix mean;                      // 1 x d_x
    Matrix axes;                      // d_x x m, orthonormal columns
    std::vector<double> eigenvalues;  // all d_x covariance eigenvalues, descending
    /// Set when a kept axis spans a (numerically) zero-variance direction; such
    /// axes are an arbitrary orthonormal completion.
    bool degenerate = false;

    std::size_t components() const noexcept { return axes.cols(); }
};

/// Mean-centres x, eigendecomposes the population covariance (1/n) and keeps
/// the top m axes. Each axis is signed so its largest-magnitude entry is positive.
PcaBaseline pca_fit(const Matrix& x, std::size_t m);

/// Coordinates of x in the axis basis (n x m).
Matrix pca_project(const PcaBaseline& pca, const Matrix& x);
Matrix pca_reconstruct(const PcaBaseline& pca, const Matrix& x);

}  // namespace deepcae
