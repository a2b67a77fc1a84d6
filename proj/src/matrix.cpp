#include "deepcae/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "deepcae/errors.hpp"
#include "deepcae/random.hpp"

namespace deepcae {

namespace {
void check_dims(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0)
        throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) + "x" +
                         std::to_string(cols));
}
}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols) {
    check_dims(rows, cols);
    data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    check_dims(rows, cols);
    if (data_.size() != rows * cols)
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                         shape_string());
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
    check_dims(rows_, cols_);
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
    Matrix m(rows, cols);
    for (double& v : m.data_) v = rng.uniform(lo, hi);
    return m;
}

Matrix Matrix::normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.data_) v = stddev * rng.normal();
    return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

double Matrix::item() const {
    if (rows_ != 1 || cols_ != 1) throw ShapeError("item() on non-scalar matrix " + shape_string());
    return data_[0];
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix Matrix::row_copy(std::size_t r) const {
    if (r >= rows_) throw ShapeError("row index out of range for " + shape_string());
    return row_vector(row(r));
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw ShapeError("gather_rows with no indices");
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows_) throw ShapeError("row index out of range for " + shape_string());
        std::copy_n(data_.begin() + indices[i] * cols_, cols_, out.data_.begin() + i * cols_);
    }
    return out;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Matrix::sum() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Matrix::squared_norm() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
}

double Matrix::max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

Matrix& Matrix::operator+=(const Matrix& o) {
    require_same_shape(*this, o, "add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    require_same_shape(*this, o, "subtract");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
    return out;
}

double relative_error(const Matrix& a, const Matrix& b, double floor) {
    require_same_shape(a, b, "relative_error");
    double diff = 0.0;
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) diff = std::max(diff, std::abs(ad[i] - bd[i]));
    return diff / std::max({a.max_abs(), b.max_abs(), floor});
}

double relative_error(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
}

}  // namespace deepcae
