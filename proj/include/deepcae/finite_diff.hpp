#pragma once

#include <functional>

#include "deepcae/matrix.hpp"

namespace deepcae {

using VectorFunction = std::function<Matrix(const Matrix&)>;
using ScalarFunction = std::function<double(const Matrix&)>;

inline constexpr double kDefaultFdStep = 1e-5;

/// Central-difference Jacobian of f at x. Both x and f(x) are read as flat
/// vectors in row-major order; entry (i, j) is
/// (f(x + step e_j) - f(x - step e_j))_i / (2 step).
/// Throws NumericError if f returns a non-finite value.
Matrix finite_diff_jacobian(const VectorFunction& f, const Matrix& x, double step = kDefaultFdStep);

/// Central-difference gradient of a scalar function, shaped like x.
Matrix finite_diff_gradient(const ScalarFunction& f, const Matrix& x, double step = kDefaultFdStep);

}  // namespace deepcae
