#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ska/error.hpp"
#include "ska/gram_solver.hpp"
#include "ska/krylov_basis.hpp"

using namespace ska;
using namespace ska::gram;

namespace {

Matrix orthonormal(Eigen::Index d, Eigen::Index s, RandomSource& rng) {
    return oracle::mgs_orthonormalize(gaussian_matrix(d, s, rng));
}

// Columns with singular values spread over [1, sqrt(kappa_p)].
Matrix conditioned(Eigen::Index d, Eigen::Index s, double kappa_g, RandomSource& rng) {
    const Matrix u = orthonormal(d, s, rng);
    const Matrix v = orthonormal(s, s, rng);
    Vector sv(s);
    for (Eigen::Index i = 0; i < s; ++i) sv(i) = std::pow(kappa_g, 0.5 * i / static_cast<double>(s - 1));
    return u * sv.asDiagonal() * v.transpose();
}

double energy_error(const Matrix& gm, const Vector& x, const Vector& exact) {
    const Vector e = x - exact;
    return std::sqrt(e.dot(gm * e));
}

}  // namespace

TEST_CASE("scalar system") {
    Matrix p(1, 1);
    p << 2.0;
    Vector g(1);
    g << 3.0;
    CHECK(streaming_gauss_seidel(p, g, {0.0, 1}).alpha(0) == doctest::Approx(1.5));
    CHECK(streaming_gauss_seidel(p, g, {1.0, 1}).alpha(0) == doctest::Approx(1.2));
    CHECK(streaming_gauss_seidel(p, g, {1.0, 1}).residual_norm <= 1e-15);
}

TEST_CASE("orthonormal columns are solved exactly in one sweep") {
    RandomSource rng(5);
    const Matrix p = orthonormal(40, 6, rng);
    const Vector g = gaussian_vector(40, rng);
    const auto r = streaming_gauss_seidel(p, g, {0.0, 1});
    CHECK((r.alpha - p.transpose() * g).cwiseAbs().maxCoeff() <= 1e-14);
    const auto r2 = streaming_gauss_seidel(p, g, {1e-4, 2});
    CHECK((r2.alpha - p.transpose() * g / (1.0 + 1e-4)).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(r2.gram_norm_estimate == doctest::Approx(1.0 + 1e-4).epsilon(1e-12));
}

TEST_CASE("sweeps match an explicit Gauss-Seidel iteration") {
    RandomSource rng(6);
    for (int m : {1, 2, 5}) {
        const Matrix p = conditioned(30, 8, 1e3, rng);
        const Vector g = gaussian_vector(30, rng);
        const Matrix gm = oracle::gram(p, 1e-4);
        const Vector b = p.transpose() * g;
        Vector x = Vector::Zero(8);
        for (int k = 0; k < m; ++k) x = oracle::gauss_seidel_sweep(gm, b, x);
        const auto r = streaming_gauss_seidel(p, g, {1e-4, m});
        CHECK((r.alpha - x).norm() <= 1e-12 * x.norm());
        CHECK(r.residual_norm == doctest::Approx((b - gm * r.alpha).norm()).epsilon(1e-8));
    }
}

TEST_CASE("many sweeps agree with a Cholesky solve") {
    RandomSource rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        // Column scaling leaves the sweep's convergence rate unchanged but
        // spreads kappa(G) up to about 1e4.
        const Vector scale = logspace(1.0, 100.0, 6);
        const Matrix p = gaussian_matrix(60, 6, rng) * scale.asDiagonal();
        CHECK(oracle::condition_number(oracle::gram(p, 1e-4)) <= 1e5);
        const Vector g = gaussian_vector(60, rng);
        const Vector exact = dense_oracle_solve(p, g, 1e-4);
        const auto r = streaming_gauss_seidel(p, g, {1e-4, 50});
        CHECK((r.alpha - exact).norm() / exact.norm() <= 1e-12);
    }
}

TEST_CASE("backward error stays under the bound on orthonormal bases") {
    RandomSource rng(8);
    for (int s : {4, 8, 16}) {
        for (int trial = 0; trial < 100; ++trial) {
            const Matrix g = gaussian_matrix(200, s + 1, rng);
            const Matrix z = krylov::chebyshev_basis(g, s + 1, krylov::ChebyshevParams{}).z;
            const Vector rhs = gaussian_vector(200, rng);
            const auto r = streaming_gauss_seidel(z, rhs, {1e-4, 2});
            const double kappa = oracle::condition_number(oracle::gram(z, 1e-4));
            CHECK(r.backward_error <= backward_error_bound(s, kappa));
            CHECK(r.backward_error <= 1e-10);
        }
    }
}

TEST_CASE("energy-norm error never grows across sweeps") {
    RandomSource rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix p = conditioned(30, 8, 1e4, rng);
        const Vector g = gaussian_vector(30, rng);
        const Matrix gm = oracle::gram(p, 1e-4);
        const Vector exact = dense_oracle_solve(p, g, 1e-4);
        double prev = energy_error(gm, Vector::Zero(8), exact);
        for (int m = 1; m <= 8; ++m) {
            const double e = energy_error(gm, streaming_gauss_seidel(p, g, {1e-4, m}).alpha, exact);
            CHECK(e <= prev * (1.0 + 1e-10) + 1e-13);
            prev = e;
        }
    }
}

TEST_CASE("two sweeps on a general d=30, s=8 system reduce the forward error") {
    RandomSource rng(10);
    const Matrix p = gaussian_matrix(30, 8, rng);
    const Vector g = gaussian_vector(30, rng);
    const Vector exact = dense_oracle_solve(p, g, 1e-4);
    const double e1 = (streaming_gauss_seidel(p, g, {1e-4, 1}).alpha - exact).norm();
    const double e2 = (streaming_gauss_seidel(p, g, {1e-4, 2}).alpha - exact).norm();
    const double e20 = (streaming_gauss_seidel(p, g, {1e-4, 200}).alpha - exact).norm();
    CHECK(e2 < exact.norm());
    CHECK(e20 <= 1e-8 * exact.norm());
    CHECK(e20 < e1);
}

TEST_CASE("verbatim sweeps stop changing after the first") {
    RandomSource rng(11);
    const Matrix p = gaussian_matrix(20, 5, rng);
    const Vector g = gaussian_vector(20, rng);
    const GramSolveConfig one{1e-4, 1, SweepMode::Verbatim};
    const GramSolveConfig five{1e-4, 5, SweepMode::Verbatim};
    CHECK(streaming_gauss_seidel(p, g, one).alpha == streaming_gauss_seidel(p, g, five).alpha);
    const GramSolveConfig gs1{1e-4, 1, SweepMode::GaussSeidel};
    CHECK(streaming_gauss_seidel(p, g, one).alpha == streaming_gauss_seidel(p, g, gs1).alpha);
}

TEST_CASE("large regularization drives alpha to b / lambda") {
    RandomSource rng(12);
    const Matrix p = gaussian_matrix(15, 4, rng);
    const Vector g = gaussian_vector(15, rng);
    const double lambda = 1e10;
    const Vector b = p.transpose() * g;
    const auto r = streaming_gauss_seidel(p, g, {lambda, 2});
    CHECK((r.alpha * lambda - b).norm() <= 1e-6 * b.norm());
}

TEST_CASE("work counts scale with sweeps and basis size") {
    RandomSource rng(13);
    const Vector g = gaussian_vector(100, rng);
    const auto count = [&](int s, int m) {
        const Matrix p = gaussian_matrix(100, s, rng);
        return streaming_gauss_seidel(p, g, {1e-4, m});
    };
    for (int s : {2, 8, 16}) {
        for (int m : {1, 2, 4}) {
            const auto r = count(s, m);
            const std::int64_t pairs = static_cast<std::int64_t>(s) * (s - 1);
            const std::int64_t expect = 2 * s + pairs / 2 + (m - 1) * pairs + pairs + 2 * s * kPowerIterations;
            CHECK(r.inner_products == expect);
            CHECK(r.flops_estimate == 2 * r.inner_products * 100);
        }
    }
    const auto a = count(32, 8);
    const auto b = count(32, 16);
    const double ratio = static_cast<double>(b.inner_products) / static_cast<double>(a.inner_products);
    CHECK(ratio > 1.6);
    CHECK(ratio < 2.0);
}

TEST_CASE("error handling") {
    Matrix p = Matrix::Zero(4, 2);
    p(0, 0) = 1.0;
    const Vector g = Vector::Ones(4);
    try {
        (void)streaming_gauss_seidel(p, g, {0.0, 1});
        FAIL("expected ZeroDiagonal");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ZeroDiagonal);
    }
    CHECK_NOTHROW(streaming_gauss_seidel(p, g, {1e-4, 1}));
    try {
        (void)streaming_gauss_seidel(p, Vector::Ones(3), {1e-4, 1});
        FAIL("expected DimMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimMismatch);
    }
    CHECK_THROWS_AS(streaming_gauss_seidel(p, g, {-1.0, 1}), Error);
    CHECK_THROWS_AS(streaming_gauss_seidel(p, g, {1e-4, 0}), Error);
    try {
        (void)dense_oracle_solve(p, g, 0.0);
        FAIL("expected NotSPD");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotSPD);
    }
}

TEST_CASE("backward error bound formula") {
    CHECK(backward_error_bound(1, 1.0) == kMachineEpsilon);
    CHECK(backward_error_bound(4, 10.0) == doctest::Approx(kMachineEpsilon * 10.0 * 7.0));
    const auto r = streaming_gauss_seidel(Matrix::Zero(3, 1), Vector::Zero(3), {1.0, 1});
    CHECK(r.backward_error == 0.0);
}
