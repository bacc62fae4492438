#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "ska/error.hpp"
#include "ska/problems.hpp"

using namespace ska;
using namespace ska::problems;

namespace {

Vector sorted_eigenvalues(const Matrix& h) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

LogisticProblem hand_logistic(const Matrix& x, const Vector& y, double lambda) {
    LogisticProblem p;
    p.x = x;
    p.y = y;
    p.lambda_reg = lambda;
    p.w_star = Vector::Zero(x.cols());
    p.feature_scales = Vector::Ones(x.cols());
    return p;
}

}  // namespace

TEST_CASE("gen_quadratic spectrum") {
    RandomSource rng(1);
    const auto p2 = gen_quadratic(2, 100.0, 0.0, rng);
    const Vector ev2 = sorted_eigenvalues(p2.h);
    CHECK(ev2(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(ev2(1) == doctest::Approx(100.0).epsilon(1e-8));

    const auto p = gen_quadratic(100, 1e4, 0.0, rng);
    const Vector ev = sorted_eigenvalues(p.h);
    const double kappa = ev(99) / ev(0);
    CHECK(kappa >= 0.999e4);
    CHECK(kappa <= 1.001e4);
    CHECK((p.h - p.h.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.lipschitz() == doctest::Approx(1e4));
}

TEST_CASE("quadratic optimum metadata") {
    RandomSource rng(2);
    const auto p = gen_quadratic(20, 1e3, 0.0, rng);
    const double f0 = quad_objective(p, p.x_star);
    CHECK(f0 == doctest::Approx(p.f_star).epsilon(1e-10));
    for (Eigen::Index j = 0; j < p.dim(); ++j) {
        Vector x = p.x_star;
        x(j) += 1e-3;
        CHECK(quad_objective(p, x) >= f0);
        x(j) -= 2e-3;
        CHECK(quad_objective(p, x) >= f0);
    }
    CHECK(quad_exact_gradient(p, p.x_star).norm() <= 1e-8);
    RandomSource noise(3);
    CHECK(quad_gradient(p, p.x_star, noise).norm() <= 1e-8);
    const Vector x = p.x_star + Vector::Ones(20);
    CHECK(quad_gap(p, x) == doctest::Approx(quad_objective(p, x) - p.f_star).epsilon(1e-9));
}

TEST_CASE("quadratic gradient noise moments") {
    RandomSource rng(4);
    auto p = gen_quadratic(10, 10.0, 0.1, rng);
    const Vector x = Vector::Ones(10);
    const Vector exact = quad_exact_gradient(p, x);
    Vector sum = Vector::Zero(10);
    double sq = 0.0;
    constexpr int n = 10000;
    for (int k = 0; k < n; ++k) {
        const Vector e = quad_gradient(p, x, rng) - exact;
        sum += e;
        sq += e.squaredNorm();
    }
    const Vector mean = sum / n;
    CHECK(mean.norm() <= 3.0 * 0.1 / std::sqrt(static_cast<double>(n)) * std::sqrt(10.0));
    CHECK(sq / n == doctest::Approx(10 * 0.01).epsilon(0.1));
}

TEST_CASE("clustered spectrum") {
    RandomSource rng(5);
    const auto p = gen_clustered(100, 0.0, rng);
    const Vector ev = sorted_eigenvalues(p.h);
    int low = 0;
    for (int i = 0; i < 100; ++i) {
        const bool near1 = ev(i) >= 0.95 - 1e-9 && ev(i) <= 1.05 + 1e-9;
        const bool near10 = ev(i) >= 9.5 - 1e-8 && ev(i) <= 10.5 + 1e-8;
        CHECK((near1 || near10));
        low += near1;
    }
    CHECK(low == 80);
    std::set<double> distinct(p.eigenvalues.data(), p.eigenvalues.data() + 100);
    CHECK(distinct.size() == 100);
}

TEST_CASE("quadratic generators reject bad input") {
    RandomSource rng(6);
    CHECK_THROWS_AS(gen_quadratic(1, 10.0, 0.0, rng), Error);
    CHECK_THROWS_AS(gen_quadratic(5, 0.5, 0.0, rng), Error);
    CHECK_THROWS_AS(gen_quadratic(5, 10.0, -1.0, rng), Error);
}

TEST_CASE("gen_logistic isotropic case") {
    RandomSource rng(7);
    const auto p = gen_logistic(4000, 20, 1.0, {}, 0.1, rng);
    Eigen::JacobiSVD<Matrix> svd(p.x / std::sqrt(4000.0));
    const Vector sv = svd.singularValues();
    CHECK(sv(0) <= 1.1 * 1.1);
    CHECK(sv(sv.size() - 1) >= 0.9 * 0.9);
    CHECK(p.lambda_reg == doctest::Approx(0.1));
}

TEST_CASE("gen_logistic conditioning against a brute-force SVD") {
    RandomSource rng(8);
    const auto p = gen_logistic(2000, 50, 100.0, {}, 0.1, rng);
    Eigen::JacobiSVD<Matrix> svd(p.x);
    const Vector sv = svd.singularValues();
    const double brute = sv(0) / sv(sv.size() - 1);
    CHECK(feature_condition_number(p) == doctest::Approx(brute).epsilon(0.1));
    CHECK(brute > 50.0);
    CHECK(brute < 200.0);
    CHECK(p.w_star.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.lambda_reg == doctest::Approx(0.1 / 100.0));
}

TEST_CASE("gen_logistic without label noise is separable by w*") {
    RandomSource rng(9);
    const auto p = gen_logistic(500, 10, 10.0, 0.0, 0.1, rng);
    const Vector margin = (p.x * p.w_star).cwiseProduct(p.y);
    CHECK(margin.minCoeff() > 0.0);
    for (Eigen::Index i = 0; i < p.y.size(); ++i) CHECK(std::abs(p.y(i)) == 1.0);
}

TEST_CASE("gen_logistic is deterministic per seed") {
    RandomSource a(10), b(10);
    const auto p = gen_logistic(300, 8, 50.0, {}, 0.1, a);
    const auto q = gen_logistic(300, 8, 50.0, {}, 0.1, b);
    CHECK(p.x == q.x);
    CHECK(p.y == q.y);
}

TEST_CASE("logistic loss") {
    RandomSource rng(11);
    const auto p = gen_logistic(200, 5, 10.0, {}, 0.1, rng);
    CHECK(logistic_loss(p, Vector::Zero(5)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(std::isfinite(log1p_exp_neg(50.0)));
    CHECK(std::isfinite(log1p_exp_neg(-50.0)));
    CHECK(log1p_exp_neg(-50.0) == doctest::Approx(50.0));
    CHECK(std::isfinite(log1p_exp_neg(-800.0)));

    // Naive formula in long double at moderate margins.
    const Vector w = 0.5 * Vector::Ones(5);
    long double acc = 0;
    for (Eigen::Index i = 0; i < p.samples(); ++i) {
        const long double t = p.y(i) * p.x.row(i).dot(w);
        acc += std::log(1.0L + std::exp(-t));
    }
    const double naive = static_cast<double>(acc / p.samples()) + 0.5 * p.lambda_reg * w.squaredNorm();
    CHECK(std::abs(logistic_loss(p, w) - naive) <= 1e-10);
}

TEST_CASE("logistic gradient against central differences") {
    RandomSource rng(12);
    const auto p = gen_logistic(300, 12, 20.0, {}, 0.1, rng);
    std::vector<std::size_t> all(300);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (int k = 0; k < 5; ++k) {
        const Vector w = gaussian_vector(12, rng);
        const Vector g = logistic_minibatch_gradient(p, w, all);
        const Vector fd = oracle::central_difference([&](const Vector& v) { return logistic_loss(p, v); }, w, 1e-5);
        CHECK((g - fd).norm() / g.norm() <= 1e-6);
    }
}

TEST_CASE("logistic gradient special cases") {
    Matrix x = Matrix::Identity(2, 2);
    Vector y(2);
    y << 1, -1;
    const auto p = hand_logistic(x, y, 0.0);
    const std::vector<std::size_t> batch{0, 1};
    const Vector g = logistic_minibatch_gradient(p, Vector::Zero(2), batch);
    CHECK(g(0) == doctest::Approx(-0.25));
    CHECK(g(1) == doctest::Approx(0.25));

    // Saturated margins leave only the ridge term.
    const auto q = hand_logistic(x, y, 0.3);
    Vector w(2);
    w << 1e3, -1e3;
    const Vector gq = logistic_minibatch_gradient(q, w, batch);
    CHECK(gq(0) == doctest::Approx(0.3 * 1e3));
    CHECK(gq(1) == doctest::Approx(-0.3 * 1e3));

    const std::vector<std::size_t> bad{5};
    try {
        (void)logistic_minibatch_gradient(p, Vector::Zero(2), bad);
        FAIL("expected IndexOutOfRange");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IndexOutOfRange);
    }
}

TEST_CASE("logistic Jacobi preconditioner") {
    const auto p = hand_logistic(Matrix::Identity(2, 2), Vector::Ones(2), 0.0);
    const Vector d = jacobi_preconditioner(p);
    CHECK(d(0) == 1.0);
    CHECK(d(1) == 1.0);

    Matrix x = Matrix::Zero(4, 2);
    x.col(0).setConstant(2.0);
    x(0, 1) = 1.0;
    CHECK(jacobi_preconditioner(hand_logistic(x, Vector::Ones(4), 0.0))(0) == doctest::Approx(1.0 / 16.0));

    RandomSource rng(13);
    const auto r = hand_logistic(gaussian_matrix(30, 6, rng), Vector::Ones(30), 0.0);
    const Vector colsq = r.x.array().square().colwise().sum().transpose();
    CHECK((jacobi_preconditioner(r).cwiseProduct(colsq) - Vector::Ones(6)).cwiseAbs().maxCoeff() <= 1e-14);

    Matrix z = Matrix::Identity(3, 2);
    z(0, 0) = 0.0;
    CHECK(jacobi_preconditioner(hand_logistic(z, Vector::Ones(3), 0.0))(0) == 1.0);
}

TEST_CASE("quadratic Jacobi preconditioner inverts the diagonal") {
    RandomSource rng(14);
    const auto p = gen_quadratic(8, 100.0, 0.0, rng);
    CHECK((jacobi_preconditioner(p).cwiseProduct(p.h.diagonal()) - Vector::Ones(8)).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("mini-batch sampler epochs") {
    MiniBatchSampler s(4, 2, 1);
    auto a = s.next_batch();
    auto b = s.next_batch();
    CHECK(a.size() == 2);
    CHECK(b.size() == 2);
    std::set<std::size_t> u(a.begin(), a.end());
    u.insert(b.begin(), b.end());
    CHECK(u == std::set<std::size_t>{0, 1, 2, 3});

    MiniBatchSampler t(5, 2, 1);
    CHECK(t.next_batch().size() == 2);
    CHECK(t.next_batch().size() == 2);
    CHECK(t.next_batch().size() == 1);
    CHECK(t.next_batch().size() == 2);

    MiniBatchSampler x(50, 7, 99), y(50, 7, 99);
    for (int i = 0; i < 30; ++i) CHECK(x.next_batch() == y.next_batch());
    CHECK_THROWS_AS(MiniBatchSampler(0, 2, 1), Error);
}

TEST_CASE("problem dumps round-trip bitwise") {
    RandomSource rng(15);
    const auto q = gen_quadratic(6, 1e3, 0.25, rng);
    std::stringstream ss;
    save(q, ss);
    const auto q2 = load_quadratic(ss);
    CHECK(q2.h == q.h);
    CHECK(q2.b == q.b);
    CHECK(q2.x_star == q.x_star);
    CHECK(q2.f_star == q.f_star);
    CHECK(q2.eigenvalues == q.eigenvalues);
    CHECK(q2.noise_sigma == q.noise_sigma);

    const auto l = gen_logistic(40, 4, 10.0, {}, 0.1, rng);
    std::stringstream sl;
    save(l, sl);
    const auto l2 = load_logistic(sl);
    CHECK(l2.x == l.x);
    CHECK(l2.y == l.y);
    CHECK(l2.w_star == l.w_star);
    CHECK(l2.lambda_reg == l.lambda_reg);
    CHECK(l2.label_noise == l.label_noise);

    std::stringstream bad("ska-problem 1\nfamily logistic\n");
    CHECK_THROWS_AS(load_quadratic(bad), Error);
}
