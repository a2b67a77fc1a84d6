#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace deepcae {

class Rng;

/// Dense row-major matrix of doubles. Always at least 1x1.
class Matrix {
public:
    Matrix() : Matrix(1, 1) {}
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix scalar(double v) { return Matrix(1, 1, v); }
    static Matrix uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi);
    static Matrix normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);
    /// Single-row matrix holding `values`.
    static Matrix row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_string() const;

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    /// Scalar value of a 1x1 matrix.
    double item() const;

    Matrix transposed() const;
    Matrix row_copy(std::size_t r) const;
    /// Rows selected by index, in the given order.
    Matrix gather_rows(std::span<const std::size_t> indices) const;

    bool all_finite() const noexcept;
    double sum() const noexcept;
    double squared_norm() const noexcept;
    double max_abs() const noexcept;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s) noexcept;

    bool operator==(const Matrix& o) const = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// max|a-b| / max(max|a|, max|b|, floor). A norm-wise relative error that
/// stays meaningful when individual entries are near zero.
double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-12);
double relative_error(double a, double b, double floor = 1e-12);

/// Throws ShapeError unless shapes are equal; `what` names the operation.
void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

}  // namespace deepcae
