#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eventflow/numerics.hpp"

using namespace evf;

namespace {

MatF mat(std::size_t r, std::size_t c, std::initializer_list<float> v) {
    return MatF(r, c, std::vector<float>(v));
}

}  // namespace

TEST_CASE("matmul identity and hand values") {
    const MatF a = mat(2, 2, {1, 2, 3, 4});
    const MatF i2 = MatF::identity(2);
    const MatF ai = matmul(a, i2);
    CHECK(ai.v == a.v);

    const MatF row = mat(1, 2, {1, 2});
    const MatF col = mat(2, 1, {3, 4});
    const MatF prod = matmul(row, col);
    CHECK(prod.rows == 1);
    CHECK(prod.cols == 1);
    CHECK(prod.v[0] == 11.0f);

    const MatF zero = MatF::zeros(2, 2);
    const MatF za = matmul(zero, a);
    for (float x : za.v) CHECK(x == 0.0f);
}

TEST_CASE("matmul rejects mismatched shapes") {
    const MatF a(2, 3);
    const MatF b(2, 3);
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    CHECK_THROWS_AS(matmul_nt(a, MatF(4, 2)), ShapeError);
    CHECK_THROWS_AS(matmul_tn(a, MatF(3, 3)), ShapeError);
}

TEST_CASE("matmul with identity associates bitwise") {
    Rng rng(11);
    MatF a(5, 5), b(5, 5);
    for (auto& x : a.v) x = static_cast<float>(rng.uniform(-2, 2));
    for (auto& x : b.v) x = static_cast<float>(rng.uniform(-2, 2));
    const MatF i5 = MatF::identity(5);
    const MatF lhs = matmul(matmul(a, i5), b);
    const MatF rhs = matmul(a, matmul(i5, b));
    CHECK(lhs.v == rhs.v);
}

TEST_CASE("silu values") {
    const MatF x = mat(1, 4, {0.f, 30.f, 1.f, -30.f});
    const MatF y = silu(x);
    CHECK(y.v[0] == 0.0f);
    CHECK(y.v[1] == doctest::Approx(30.0).epsilon(1e-6));  // sigmoid saturates
    CHECK(y.v[2] == doctest::Approx(0.7310585786300049).epsilon(1e-6));
    CHECK(std::abs(y.v[3]) < 1e-8f);
}

TEST_CASE("silu is monotone for x >= 0") {
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        const float a = static_cast<float>(rng.uniform(0, 20));
        const float b = static_cast<float>(rng.uniform(0, 20));
        const float lo = std::min(a, b), hi = std::max(a, b);
        const MatF y = silu(mat(1, 2, {lo, hi}));
        CHECK(y.v[0] <= y.v[1]);
    }
}

TEST_CASE("linear_forward basics") {
    const MatF x = mat(2, 2, {1, 2, 3, 4});
    SUBCASE("identity weights, zero bias") {
        const MatF y = linear_forward(MatF::identity(2), std::vector<float>{0, 0}, x);
        CHECK(y.v == x.v);
    }
    SUBCASE("zero weights, constant bias") {
        const MatF y = linear_forward(MatF::zeros(3, 2), std::vector<float>{5, 6, 7}, x);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(y.at(i, 0) == 5.0f);
            CHECK(y.at(i, 1) == 6.0f);
            CHECK(y.at(i, 2) == 7.0f);
        }
    }
    SUBCASE("hand value") {
        const MatF y =
            linear_forward(mat(1, 1, {2}), std::vector<float>{1}, mat(1, 1, {3}));
        CHECK(y.v[0] == 7.0f);
    }
    SUBCASE("shape errors") {
        CHECK_THROWS_AS(linear_forward(MatF(2, 3), std::vector<float>{0, 0}, x),
                        ShapeError);
        CHECK_THROWS_AS(linear_forward(MatF(2, 2), std::vector<float>{0}, x), ShapeError);
    }
}

TEST_CASE("single linear layer with squared loss matches hand gradient") {
    // y = x w^T, loss = mean over rows of ||y - target||^2,
    // dL/dw = 2 (y - target)^T x / batch.
    Rng rng(3);
    const std::size_t batch = 6, in = 3, out = 2;
    MatF x(batch, in), w(out, in), target(batch, out);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : w.v) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : target.v) v = static_cast<float>(rng.uniform(-1, 1));
    const std::vector<float> b(out, 0.f);

    const MatF y = linear_forward(w, b, x);
    MatF seed;
    mse_rowsum_loss(y, target, &seed);
    const LinearGrads<float> g = linear_backward(w, x, seed);

    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t j = 0; j < in; ++j) {
            double expect = 0.0;
            for (std::size_t i = 0; i < batch; ++i)
                expect += 2.0 * (y.at(i, o) - target.at(i, o)) * x.at(i, j) /
                          static_cast<double>(batch);
            CHECK(g.gw.at(o, j) == doctest::Approx(expect).epsilon(1e-5));
        }
}

TEST_CASE("zero output gradient propagates zero everywhere") {
    Rng rng(5);
    MatF x(4, 3), w(2, 3);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : w.v) v = static_cast<float>(rng.uniform(-1, 1));
    const LinearGrads<float> g = linear_backward(w, x, MatF::zeros(4, 2));
    for (float v : g.gw.v) CHECK(v == 0.0f);
    for (float v : g.gb) CHECK(v == 0.0f);
    for (float v : g.gx.v) CHECK(v == 0.0f);
}

TEST_CASE("silu_backward matches scalar finite differences") {
    const double eps = 1e-6;
    for (double x0 : {-2.0, -0.5, 0.0, 0.7, 3.0}) {
        MatD pre(1, 1);
        pre.v[0] = x0;
        MatD gout(1, 1);
        gout.v[0] = 1.0;
        const double grad = silu_backward(pre, gout).v[0];
        const auto f = [](double x) { return x / (1.0 + std::exp(-x)); };
        const double fd = (f(x0 + eps) - f(x0 - eps)) / (2 * eps);
        CHECK(grad == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("parallel kernels are bitwise independent of thread count") {
    Rng rng(23);
    MatF a(37, 53), b(53, 29);
    for (auto& x : a.v) x = static_cast<float>(rng.uniform(-1, 1));
    for (auto& x : b.v) x = static_cast<float>(rng.uniform(-1, 1));
    set_num_threads(1);
    const MatF c1 = matmul(a, b);
    set_num_threads(4);
    const MatF c4 = matmul(a, b);
    set_num_threads(1);
    CHECK(c1.v == c4.v);
}
