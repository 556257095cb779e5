#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "ltlab/error.hpp"

namespace ltlab {

/// Dense row-major matrix of 64-bit floats.
///
/// All reductions over entries run in a fixed left-to-right order so that
/// results are bit-identical across runs and platforms. No BLAS, no
/// vectorized reassociation.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    /// Constructs from nested braces, e.g. Matrix::from_rows({{1,2},{3,4}}).
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    /// Like the data constructor but rejects NaN/Inf entries.
    static Matrix checked(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * cols_, cols_};
    }

    Matrix transposed() const;

    /// True if every entry is finite.
    bool all_finite() const;

    double frobenius_norm() const;
    double max_abs() const;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

/// Standard product; per output element the k-sum runs left to right.
/// Throws DimensionError when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Solves (a + jitter*I) X = b for symmetric positive-definite a via
/// Cholesky factorization. Throws SingularMatrixError naming the failing
/// pivot when the factorization breaks down.
Matrix solve_spd(const Matrix& a, const Matrix& b, double jitter);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

Matrix& operator+=(Matrix& a, const Matrix& b);
Matrix& operator-=(Matrix& a, const Matrix& b);
Matrix& operator*=(Matrix& a, double s);

/// Left-to-right dot product of two equal-length spans.
double dot(std::span<const double> a, std::span<const double> b);

/// Left-to-right Euclidean norm.
double norm2(std::span<const double> a);

}  // namespace ltlab
