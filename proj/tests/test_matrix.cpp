#include <cmath>
#include <vector>

#include "doctest.h"
#include "kd/matrix.hpp"

using kd::Matrix;

TEST_CASE("matrix construction and element access") {
    Matrix m(2, 3, 1.5);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m.size() == 6);
    CHECK(m(1, 2) == 1.5);

    m(0, 1) = -4.0;
    CHECK(m(0, 1) == -4.0);
    CHECK(m.row(0)[1] == -4.0);

    Matrix from_data(2, 2, {1.0, 2.0, 3.0, 4.0});
    CHECK(from_data(0, 0) == 1.0);
    CHECK(from_data(1, 0) == 3.0);  // row-major

    CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0, 3.0}), kd::DimensionError);
}

TEST_CASE("matmul against hand-computed product") {
    const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
    const Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
    const Matrix c = kd::matmul(a, b);
    REQUIRE(c.rows() == 2);
    REQUIRE(c.cols() == 2);
    CHECK(c(0, 0) == 58.0);
    CHECK(c(0, 1) == 64.0);
    CHECK(c(1, 0) == 139.0);
    CHECK(c(1, 1) == 154.0);
}

TEST_CASE("matmul by identity is the identity map") {
    const Matrix a(2, 2, {3.5, -1.0, 0.25, 2.0});
    Matrix eye(2, 2);
    eye(0, 0) = eye(1, 1) = 1.0;
    const Matrix c = kd::matmul(a, eye);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(c.data()[k] == a.data()[k]);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    const Matrix a(2, 3);
    const Matrix b(2, 3);
    CHECK_THROWS_AS(kd::matmul(a, b), kd::DimensionError);
}

TEST_CASE("transpose-variant products agree with explicit transposes") {
    const Matrix a(3, 2, {1, 2, 3, 4, 5, 6});
    const Matrix b(3, 2, {-1, 0.5, 2, -2, 0, 3});

    // A^T B: (2x3)(3x2) = 2x2
    const Matrix ta = kd::matmul_transpose_a(a, b);
    Matrix a_t(2, 3);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 2; ++c) a_t(c, r) = a(r, c);
    const Matrix ref_a = kd::matmul(a_t, b);
    REQUIRE(ta.rows() == 2);
    REQUIRE(ta.cols() == 2);
    for (std::size_t k = 0; k < ta.size(); ++k) CHECK(ta.data()[k] == doctest::Approx(ref_a.data()[k]));

    // A B^T: (3x2)(2x3) = 3x3
    const Matrix tb = kd::matmul_transpose_b(a, b);
    Matrix b_t(2, 3);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 2; ++c) b_t(c, r) = b(r, c);
    const Matrix ref_b = kd::matmul(a, b_t);
    REQUIRE(tb.rows() == 3);
    REQUIRE(tb.cols() == 3);
    for (std::size_t k = 0; k < tb.size(); ++k) CHECK(tb.data()[k] == doctest::Approx(ref_b.data()[k]));
}

TEST_CASE("row reductions") {
    const Matrix m(2, 3, {1, 2, 3, -5, 0, 5});
    const auto mean = kd::row_mean(m);
    CHECK(mean[0] == doctest::Approx(2.0));
    CHECK(mean[1] == doctest::Approx(0.0));
    CHECK(kd::row_max(m)[0] == 3.0);
    CHECK(kd::row_max(m)[1] == 5.0);
    CHECK(kd::row_min(m)[0] == 1.0);
    CHECK(kd::row_min(m)[1] == -5.0);

    const auto cs = kd::col_sum(m);
    REQUIRE(cs.size() == 3);
    CHECK(cs[0] == -4.0);
    CHECK(cs[1] == 2.0);
    CHECK(cs[2] == 8.0);
}

TEST_CASE("row_argmax breaks ties toward the lowest index") {
    const Matrix m(3, 4, {0, 1, 1, 0,   // tie between cols 1 and 2
                          2, 2, 2, 2,   // full tie
                          0, 0, 0, 9});
    const auto am = kd::row_argmax(m);
    CHECK(am[0] == 1);
    CHECK(am[1] == 0);
    CHECK(am[2] == 3);
}

TEST_CASE("vector statistics over a batch column") {
    const std::vector<double> v = {0.5, 0.7, -0.2, 1.0};
    CHECK(kd::vec_mean(v) == doctest::Approx(0.5));
    CHECK(kd::vec_max(v) == 1.0);
    CHECK(kd::vec_min(v) == -0.2);
    CHECK(kd::vec_sum(v) == doctest::Approx(2.0));
}

TEST_CASE("vec_softmax normalizes and survives large inputs") {
    const std::vector<double> v = {0.0, 0.0};
    const auto p = kd::vec_softmax(v);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));

    const std::vector<double> big = {1000.0, 0.0};
    const auto q = kd::vec_softmax(big);
    CHECK(std::isfinite(q[0]));
    CHECK(q[0] == doctest::Approx(1.0));
    CHECK(q[0] + q[1] == doctest::Approx(1.0));
}

TEST_CASE("finiteness guards") {
    Matrix m(1, 2, {1.0, 2.0});
    CHECK(kd::is_finite(m));
    CHECK_NOTHROW(kd::require_finite(m, "test"));

    m(0, 1) = std::nan("");
    CHECK_FALSE(kd::is_finite(m));
    CHECK_THROWS_AS(kd::require_finite(m, "test"), kd::InvalidInputError);

    m(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_FALSE(kd::is_finite(m));
}
