#include "ltlab/matrix.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace ltlab {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                             " does not match shape " + std::to_string(rows_) + "x" +
                             std::to_string(cols_));
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw DimensionError("ragged row in matrix literal");
        }
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::checked(std::size_t rows, std::size_t cols, std::vector<double> data) {
    Matrix m(rows, cols, std::move(data));
    if (!m.all_finite()) {
        throw DimensionError("matrix contains non-finite entries");
    }
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Matrix::frobenius_norm() const { return norm2(data_); }

double Matrix::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul shape mismatch: " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " * " + std::to_string(b.rows()) +
                             "x" + std::to_string(b.cols()));
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Matrix out(n, m);
    // i-k-j order: cache friendly and still accumulates each out(i,j)
    // over k in ascending order.
    for (std::size_t i = 0; i < n; ++i) {
        double* out_row = out.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            const double* b_row = b.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) out_row[j] += aip * b_row[j];
        }
    }
    return out;
}

Matrix solve_spd(const Matrix& a, const Matrix& b, double jitter) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw DimensionError("solve_spd: matrix is not square");
    if (b.rows() != n) throw DimensionError("solve_spd: rhs row count mismatch");
    if (jitter < 0.0) throw DimensionError("solve_spd: jitter must be >= 0");

    // Lower-triangular Cholesky factor of (a + jitter*I).
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j) + jitter;
        for (std::size_t p = 0; p < j; ++p) diag -= l(j, p) * l(j, p);
        if (!(diag > 0.0) || !std::isfinite(diag)) {
            throw SingularMatrixError(
                "solve_spd: non-positive pivot " + std::to_string(diag) +
                    " at index " + std::to_string(j) +
                    "; matrix is not positive definite at this jitter",
                j);
        }
        const double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
            l(i, j) = s / ljj;
        }
    }

    // Solve L Y = b, then L^T X = Y, one rhs column at a time.
    const std::size_t m = b.cols();
    Matrix x = b;
    for (std::size_t c = 0; c < m; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = x(i, c);
            for (std::size_t p = 0; p < i; ++p) s -= l(i, p) * x(p, c);
            x(i, c) = s / l(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = x(ii, c);
            for (std::size_t p = ii + 1; p < n; ++p) s -= l(p, ii) * x(p, c);
            x(ii, c) = s / l(ii, ii);
        }
    }
    return x;
}

namespace {
void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch");
    }
}
}  // namespace

Matrix operator+(const Matrix& a, const Matrix& b) {
    Matrix r = a;
    r += b;
    return r;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
    Matrix r = a;
    r -= b;
    return r;
}

Matrix operator*(double s, const Matrix& a) {
    Matrix r = a;
    r *= s;
    return r;
}

Matrix& operator+=(Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "operator+");
    for (std::size_t i = 0; i < a.size(); ++i) a.raw()[i] += b.raw()[i];
    return a;
}

Matrix& operator-=(Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "operator-");
    for (std::size_t i = 0; i < a.size(); ++i) a.raw()[i] -= b.raw()[i];
    return a;
}

Matrix& operator*=(Matrix& a, double s) {
    for (double& v : a.raw()) v *= s;
    return a;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

}  // namespace ltlab
