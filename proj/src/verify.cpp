#include "ska/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <Eigen/Eigenvalues>

#include "ska/gram_solver.hpp"
#include "ska/krylov_basis.hpp"
#include "ska/optimizers.hpp"
#include "ska/problems.hpp"

namespace ska::verify {

namespace {

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

// One forward sweep of classical Gauss-Seidel on an explicit matrix, from zero.
Vector classical_sweep(const Matrix& g, const Vector& b, const Vector& start) {
    Vector x = start;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        double sum = 0.0;
        for (Eigen::Index j = 0; j < g.cols(); ++j)
            if (j != i) sum += g(i, j) * x(j);
        x(i) = (b(i) - sum) / g(i, i);
    }
    return x;
}

double symmetric_condition(const Matrix& g) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
    const Vector ev = es.eigenvalues();
    return ev.maxCoeff() / ev.minCoeff();
}

Matrix formed_gram(const Matrix& p, double lambda) {
    Matrix g = p.transpose() * p;
    g.diagonal().array() += lambda;
    return g;
}

// The recurrence reads G[:, j-1] for column j, so columns 1 and 2 share a
// source column and s >= 3 inputs give s - 1 independent columns.
Matrix chebyshev_orthonormal(Eigen::Index d, int s, RandomSource& rng) {
    const int inputs = s >= 2 ? s + 1 : s;
    return krylov::chebyshev_basis(gaussian_matrix(d, inputs, rng), inputs, {}).z;
}

}  // namespace

PropertyResult gram_oracle_equivalence(std::uint64_t seed) {
    PropertyResult r{"gram: streaming sweep equals classical sweep; many sweeps equal Cholesky", true, {}};
    RandomSource rng(seed);
    double worst_sweep = 0.0;
    double worst_chol = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index d = 40;
        const int s = 2 + trial % 7;
        // Well-conditioned P: orthonormal columns plus a modest perturbation.
        Matrix p = chebyshev_orthonormal(d, s, rng) + 0.1 * gaussian_matrix(d, s, rng);
        const Vector g = gaussian_vector(d, rng);
        const double lambda = 1e-4;

        const Matrix gram = formed_gram(p, lambda);
        const Vector one = classical_sweep(gram, p.transpose() * g, Vector::Zero(s));
        const auto res1 = gram::streaming_gauss_seidel(p, g, {lambda, 1, gram::SweepMode::GaussSeidel});
        worst_sweep = std::max(worst_sweep, (res1.alpha - one).cwiseAbs().maxCoeff());

        const Vector exact = gram::dense_oracle_solve(p, g, lambda);
        const auto res50 = gram::streaming_gauss_seidel(p, g, {lambda, 50, gram::SweepMode::GaussSeidel});
        worst_chol = std::max(worst_chol, (res50.alpha - exact).norm() / exact.norm());
    }
    r.passed = worst_sweep <= 1e-14 && worst_chol <= 1e-12;
    r.detail = fmt("max entrywise diff (m=1) %.3e, max relative diff (m=50) %.3e", worst_sweep, worst_chol);
    return r;
}

PropertyResult gram_backward_error_bound(std::uint64_t seed) {
    PropertyResult r{"gram: single-sweep backward error within eps*kappa*(1+s(s-1)/2)", true, {}};
    RandomSource rng(seed);
    double worst_ratio = 0.0;
    double worst_abs = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int s = (trial % 3 == 0) ? 4 : (trial % 3 == 1) ? 8 : 16;
        const Matrix z = chebyshev_orthonormal(200, s, rng);
        const Vector g = gaussian_vector(200, rng);
        const auto res = gram::streaming_gauss_seidel(z, g, {1e-4, 1, gram::SweepMode::GaussSeidel});
        const double bound = gram::backward_error_bound(s, symmetric_condition(formed_gram(z, 1e-4)));
        worst_ratio = std::max(worst_ratio, res.backward_error / bound);
        worst_abs = std::max(worst_abs, res.backward_error);
    }
    r.passed = worst_ratio <= 1.0 && worst_abs <= 1e-10;
    r.detail = fmt("max error/bound %.3f, max backward error %.3e", worst_ratio, worst_abs);
    return r;
}

PropertyResult gram_sweep_monotonicity(std::uint64_t seed) {
    PropertyResult r{"gram: residual non-increasing in the number of sweeps", true, {}};
    RandomSource rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int s = 2 + trial % 15;
        const Matrix p = gaussian_matrix(30, s, rng);
        const Vector g = gaussian_vector(30, rng);
        double prev = INFINITY;
        for (int m = 1; m <= 10; ++m) {
            const double cur = gram::streaming_gauss_seidel(p, g, {1e-4, m, gram::SweepMode::GaussSeidel}).residual_norm;
            worst = std::max(worst, cur - prev);
            prev = cur;
        }
    }
    r.passed = worst <= 1e-15;
    r.detail = fmt("largest residual increase between consecutive sweeps %.3e", worst);
    return r;
}

PropertyResult variance_trace(std::uint64_t seed) {
    PropertyResult r{"optimizers: tr Cov(projected) <= tr Cov(gradient) + 3 SE", true, {}};
    RandomSource rng(seed);
    auto prob = std::make_shared<problems::QuadraticProblem>(problems::gen_quadratic(50, 100.0, 1.0, rng));
    const opt::QuadraticObjective obj(prob);
    constexpr int n = 5000;
    double worst_margin = -INFINITY;
    int cases = 0;
    for (int point = 0; point < 10; ++point) {
        const Vector w = obj.initial_point(rng);
        for (int s : {2, 4, 8}) {
            const int inputs = s > 1 ? s + 1 : s;  // the recurrence loses one rank
            Matrix cols(w.size(), inputs);
            for (int j = 0; j < inputs; ++j) cols.col(j) = problems::quad_gradient(*prob, w, rng);
            const Matrix z = krylov::chebyshev_basis(cols, inputs, {}).z;

            Matrix gs(w.size(), n);
            Matrix ds(w.size(), n);
            for (int k = 0; k < n; ++k) {
                gs.col(k) = problems::quad_gradient(*prob, w, rng);
                ds.col(k) = z * gram::streaming_gauss_seidel(z, gs.col(k), {1e-4, 2, gram::SweepMode::GaussSeidel}).alpha;
            }
            auto trace_and_se = [&](const Matrix& x) {
                const Vector mean = x.rowwise().mean();
                Eigen::ArrayXd dev2 = (x.colwise() - mean).colwise().squaredNorm().transpose().array();
                const double tr = dev2.sum() / (n - 1);
                const double sd = std::sqrt((dev2 - dev2.mean()).square().sum() / (n - 1));
                return std::pair{tr, sd / std::sqrt(static_cast<double>(n))};
            };
            const auto [tr_g, se_g] = trace_and_se(gs);
            const auto [tr_d, se_d] = trace_and_se(ds);
            const double margin = tr_d - (tr_g + 3.0 * std::hypot(se_g, se_d));
            worst_margin = std::max(worst_margin, margin);
            if (margin > 0.0) r.passed = false;
            ++cases;
        }
    }
    r.detail = fmt("%g cases; max of tr(d) - tr(g) - 3SE = %.3e", cases, worst_margin);
    return r;
}

PropertyResult gradient_finite_differences(std::uint64_t seed) {
    PropertyResult r{"problems: gradients match central differences", true, {}};
    RandomSource rng(seed);
    auto quad = std::make_shared<problems::QuadraticProblem>(problems::gen_quadratic(12, 50.0, 0.0, rng));
    auto logi = std::make_shared<problems::LogisticProblem>(problems::gen_logistic(200, 15, 20.0, {}, 0.1, rng));
    const opt::QuadraticObjective qo(quad);
    const opt::LogisticObjective lo(logi);
    double worst = 0.0;
    for (const opt::Objective* obj : {static_cast<const opt::Objective*>(&qo), static_cast<const opt::Objective*>(&lo)}) {
        for (int k = 0; k < 5; ++k) {
            const Vector w = gaussian_vector(obj->dim(), rng);
            const Vector g = obj->full_gradient(w);
            Vector fd(w.size());
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                const double h = 1e-5 * std::max(1.0, std::abs(w(i)));
                Vector wp = w, wm = w;
                wp(i) += h;
                wm(i) -= h;
                fd(i) = (obj->loss(wp) - obj->loss(wm)) / (2.0 * h);
            }
            worst = std::max(worst, (fd - g).norm() / std::max(g.norm(), 1e-300));
        }
    }
    r.passed = worst <= 1e-6;
    r.detail = fmt("max relative difference %.3e", worst);
    return r;
}

PropertyResult reduction_identities(std::uint64_t seed) {
    PropertyResult r{"optimizers: SKA(s=1, monomial) and Nesterov(beta=0) reduce to SGD", true, {}};
    RandomSource rng(seed);
    auto prob = std::make_shared<problems::QuadraticProblem>(problems::gen_quadratic(10, 10.0, 0.5, rng));
    const opt::QuadraticObjective obj(prob);

    opt::OptConfig sgd;
    sgd.kind = opt::OptimizerKind::Sgd;
    sgd.eta = 0.1 / obj.lipschitz();
    opt::OptConfig ska = sgd;
    ska.kind = opt::OptimizerKind::Ska;
    ska.s = 1;
    ska.basis_kind = krylov::BasisKind::Monomial;
    ska.gram_reg = 0.0;
    opt::OptConfig nes = sgd;
    nes.kind = opt::OptimizerKind::Nesterov;
    nes.beta = 0.0;

    const Vector w0 = obj.initial_point(rng);
    auto s0 = opt::init_state(obj, sgd, w0);
    auto s1 = opt::init_state(obj, ska, w0);
    auto s2 = opt::init_state(obj, nes, w0);
    auto batches = obj.batches(1, seed);
    double worst_ska = 0.0;
    double worst_nes = 0.0;
    for (int k = 0; k < 100; ++k) {
        const opt::Batch b = batches->next();
        s1.w = s0.w;
        s2.w = s0.w;
        opt::sgd_step(s0, obj, b, sgd);
        opt::ska_step(s1, obj, b, ska);
        opt::nesterov_step(s2, obj, b, nes);
        worst_ska = std::max(worst_ska, (s1.w - s0.w).cwiseAbs().maxCoeff());
        worst_nes = std::max(worst_nes, (s2.w - s0.w).cwiseAbs().maxCoeff());
    }
    r.passed = worst_ska <= 1e-14 && worst_nes <= 1e-14;
    r.detail = fmt("max per-step deviation: SKA %.3e, Nesterov %.3e", worst_ska, worst_nes);
    return r;
}

PropertyResult projection_boundedness(std::uint64_t seed) {
    PropertyResult r{"optimizers: ||Z alpha|| <= ||g|| for orthonormal Z", true, {}};
    RandomSource rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 60; ++trial) {
        const int s = 1 + trial % 16;
        const Matrix z = chebyshev_orthonormal(64, s, rng);
        const Vector g = gaussian_vector(64, rng);
        const double lambda = trial % 3 == 0 ? 0.0 : trial % 3 == 1 ? 1e-4 : 1.0;
        const Vector d = z * gram::streaming_gauss_seidel(z, g, {lambda, 2, gram::SweepMode::GaussSeidel}).alpha;
        worst = std::max(worst, d.norm() / g.norm());
    }
    r.passed = worst <= 1.0 + 1e-12;
    r.detail = fmt("max ||d|| / ||g|| = %.15f", worst);
    return r;
}

std::vector<PropertyResult> run_all(std::uint64_t seed) {
    return {
        gram_oracle_equivalence(seed),     gram_backward_error_bound(seed), gram_sweep_monotonicity(seed),
        variance_trace(seed),              gradient_finite_differences(seed), reduction_identities(seed),
        projection_boundedness(seed),
    };
}

}  // namespace ska::verify
