#include "deepcae/finite_diff.hpp"

#include <cmath>

#include "deepcae/errors.hpp"

namespace deepcae {

namespace {
void check_step(double step) {
    if (!(step > 0.0) || !std::isfinite(step)) throw NumericError("finite difference step must be positive");
}
}  // namespace

Matrix finite_diff_jacobian(const VectorFunction& f, const Matrix& x, double step) {
    check_step(step);
    Matrix probe = x;
    Matrix jac;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double orig = probe.data()[j];
        probe.data()[j] = orig + step;
        const Matrix plus = f(probe);
        probe.data()[j] = orig - step;
        const Matrix minus = f(probe);
        probe.data()[j] = orig;
        require_same_shape(plus, minus, "finite_diff_jacobian");
        if (!plus.all_finite() || !minus.all_finite())
            throw NumericError("finite_diff_jacobian: function returned a non-finite value");
        if (j == 0) jac = Matrix(plus.size(), x.size());
        for (std::size_t i = 0; i < plus.size(); ++i)
            jac(i, j) = (plus.data()[i] - minus.data()[i]) / (2.0 * step);
    }
    return jac;
}

Matrix finite_diff_gradient(const ScalarFunction& f, const Matrix& x, double step) {
    check_step(step);
    Matrix probe = x;
    Matrix grad(x.rows(), x.cols());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double orig = probe.data()[j];
        probe.data()[j] = orig + step;
        const double plus = f(probe);
        probe.data()[j] = orig - step;
        const double minus = f(probe);
        probe.data()[j] = orig;
        if (!std::isfinite(plus) || !std::isfinite(minus))
            throw NumericError("finite_diff_gradient: function returned a non-finite value");
        grad.data()[j] = (plus - minus) / (2.0 * step);
    }
    return grad;
}

}  // namespace deepcae
