#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ltlab/grad_check.hpp"
#include "ltlab/matrix.hpp"
#include "ltlab/matrix_io.hpp"
#include "ltlab/rng.hpp"

using namespace ltlab;

namespace {

// Independent oracle: plain triple loop, j-index innermost sum.
Matrix matmul_naive(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

// Independent oracle: explicit inverse via Gauss-Jordan with partial
// pivoting, nothing shared with the Cholesky path.
Matrix invert_gauss_jordan(Matrix a) {
    const std::size_t n = a.rows();
    Matrix inv = Matrix::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
        for (std::size_t j = 0; j < n; ++j) {
            std::swap(a(col, j), a(pivot, j));
            std::swap(inv(col, j), inv(pivot, j));
        }
        const double d = a(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            a(col, j) /= d;
            inv(col, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a(r, col);
            for (std::size_t j = 0; j < n; ++j) {
                a(r, j) -= f * a(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

double rel_err(const Matrix& got, const Matrix& want) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got.raw()[i] - want.raw()[i]) * (got.raw()[i] - want.raw()[i]);
        den += want.raw()[i] * want.raw()[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

Matrix random_spd(std::size_t n, RngStream& rng) {
    Matrix g = sample_gaussian(rng, n, n, 0.0, 1.0);
    Matrix a = matmul(g, g.transposed());
    for (std::size_t i = 0; i < n; ++i) a(i, i) += static_cast<double>(n);
    return a;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
    RngStream rng(1);
    Matrix a = sample_gaussian(rng, 3, 4, 0.0, 1.0);
    CHECK(matmul(Matrix::identity(3), a) == a);

    Matrix b = Matrix::from_rows({{1, 2}, {3, 4}});
    Matrix v = Matrix::from_rows({{0}, {1}});
    Matrix r = matmul(b, v);
    CHECK(r(0, 0) == 2.0);
    CHECK(r(1, 0) == 4.0);
}

TEST_CASE("matmul matches naive triple loop") {
    RngStream rng(7);
    Matrix a = sample_gaussian(rng, 7, 5, 0.0, 1.0);
    Matrix b = sample_gaussian(rng, 5, 3, 0.0, 1.0);
    Matrix got = matmul(a, b);
    Matrix want = matmul_naive(a, b);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.raw()[i] == doctest::Approx(want.raw()[i]).epsilon(1e-12));
}

TEST_CASE("matmul rejects shape mismatch") {
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST_CASE("matmul associativity on random triples") {
    RngStream rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Matrix a = sample_gaussian(rng, 4, 6, 0.0, 1.0);
        Matrix b = sample_gaussian(rng, 6, 5, 0.0, 1.0);
        Matrix c = sample_gaussian(rng, 5, 3, 0.0, 1.0);
        Matrix left = matmul(matmul(a, b), c);
        Matrix right = matmul(a, matmul(b, c));
        CHECK(rel_err(left, right) < 1e-9);
    }
}

TEST_CASE("solve_spd identity and diagonal") {
    RngStream rng(3);
    Matrix b = sample_gaussian(rng, 4, 2, 0.0, 1.0);
    Matrix x = solve_spd(Matrix::identity(4), b, 0.0);
    CHECK(rel_err(x, b) < 1e-15);

    Matrix d = Matrix::from_rows({{2, 0}, {0, 4}});
    Matrix rhs = Matrix::from_rows({{2}, {8}});
    Matrix sol = solve_spd(d, rhs, 0.0);
    CHECK(sol(0, 0) == doctest::Approx(1.0));
    CHECK(sol(1, 0) == doctest::Approx(2.0));
}

TEST_CASE("solve_spd matches explicit-inverse oracle on random SPD") {
    RngStream rng(17);
    Matrix a = random_spd(6, rng);
    Matrix b = sample_gaussian(rng, 6, 2, 0.0, 1.0);
    Matrix got = solve_spd(a, b, 0.0);
    Matrix want = matmul(invert_gauss_jordan(a), b);
    CHECK(rel_err(got, want) < 1e-9);
}

TEST_CASE("solve_spd recovers a known solution") {
    RngStream rng(23);
    for (int trial = 0; trial < 4; ++trial) {
        Matrix a = random_spd(5, rng);
        Matrix x0 = sample_gaussian(rng, 5, 3, 0.0, 1.0);
        Matrix b = matmul(a, x0);
        Matrix got = solve_spd(a, b, 0.0);
        CHECK(rel_err(got, x0) < 1e-9);
    }
}

TEST_CASE("solve_spd names the failing pivot") {
    Matrix a = Matrix::from_rows({{1, 0}, {0, -1}});
    Matrix b = Matrix::from_rows({{1}, {1}});
    try {
        solve_spd(a, b, 0.0);
        FAIL("expected SingularMatrixError");
    } catch (const SingularMatrixError& e) {
        CHECK(e.pivot() == 1);
    }
    // Jitter big enough to fix the diagonal makes it solvable.
    CHECK_NOTHROW(solve_spd(a, b, 2.0));
}

TEST_CASE("checked constructor rejects non-finite entries") {
    CHECK_THROWS_AS(Matrix::checked(1, 2, {1.0, std::nan("")}), DimensionError);
    CHECK_NOTHROW(Matrix::checked(1, 2, {1.0, 2.0}));
}

TEST_CASE("finite_diff_grad on linear and quadratic functions") {
    RngStream rng(5);
    Matrix x = sample_gaussian(rng, 3, 2, 0.0, 1.0);

    auto sum = [](const Matrix& m) {
        double s = 0.0;
        for (double v : m.raw()) s += v;
        return s;
    };
    Matrix g1 = finite_diff_grad(sum, x, 1e-5);
    for (double v : g1.raw()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    auto half_sq = [](const Matrix& m) {
        double s = 0.0;
        for (double v : m.raw()) s += v * v;
        return 0.5 * s;
    };
    Matrix g2 = finite_diff_grad(half_sq, x, 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(g2.raw()[i] == doctest::Approx(x.raw()[i]).epsilon(1e-8));
}

TEST_CASE("finite_diff_grad propagates non-finite objective") {
    Matrix x(1, 1, 1.0);
    auto bad = [](const Matrix&) { return std::numeric_limits<double>::infinity(); };
    CHECK_THROWS_AS(finite_diff_grad(bad, x, 1e-5), TrainingError);
}

TEST_CASE("matrix binary round trip") {
    RngStream rng(9);
    Matrix m = sample_gaussian(rng, 5, 7, -2.0, 3.0);
    std::stringstream ss;
    write_matrix(ss, m);
    Matrix back = read_matrix(ss);
    CHECK(back == m);
}

TEST_CASE("matrix read errors carry byte offsets") {
    std::stringstream empty;
    CHECK_THROWS_AS(read_matrix(empty), FormatError);

    std::stringstream bad("XXXX\x01\x00\x00\x00\x01\x00\x00\x00");
    CHECK_THROWS_AS(read_matrix(bad), FormatError);

    std::stringstream truncated;
    write_matrix(truncated, Matrix(2, 2, 1.0));
    std::string s = truncated.str();
    s.resize(s.size() - 5);
    std::stringstream cut(s);
    try {
        read_matrix(cut);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset() >= 12);
    }
}
