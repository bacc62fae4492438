#include "ska/gram_solver.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "ska/error.hpp"

namespace ska::gram {

void GramSolveConfig::validate() const {
    if (!(lambda_reg >= 0.0)) throw Error(ErrorCode::InvalidArgument, "GramSolveConfig: lambda_reg must be >= 0");
    if (sweeps < 1) throw Error(ErrorCode::InvalidArgument, "GramSolveConfig: sweeps must be >= 1");
}

namespace {

struct Streamer {
    const Matrix& p;
    std::int64_t dots = 0;

    double dot(Eigen::Index i, Eigen::Index j) {
        ++dots;
        return p.col(i).dot(p.col(j));
    }
};

}  // namespace

GramSolveResult streaming_gauss_seidel(const Matrix& p, const Vector& g, const GramSolveConfig& cfg) {
    cfg.validate();
    const Eigen::Index s = p.cols();
    const Eigen::Index d = p.rows();
    if (s < 1) throw Error(ErrorCode::InvalidArgument, "streaming_gauss_seidel: P has no columns");
    if (g.size() != d)
        throw Error(ErrorCode::DimMismatch, "streaming_gauss_seidel: rows(P) = " + std::to_string(d) +
                                                ", len(g) = " + std::to_string(g.size()));

    Streamer st{p};
    GramSolveResult out;
    Vector b(s);
    Vector diag(s);
    for (Eigen::Index i = 0; i < s; ++i) {
        ++st.dots;
        b(i) = p.col(i).dot(g);
        diag(i) = st.dot(i, i) + cfg.lambda_reg;
        if (!(diag(i) >= kMinDiagonal))
            throw Error(ErrorCode::ZeroDiagonal, "streaming_gauss_seidel: G(" + std::to_string(i) + "," +
                                                     std::to_string(i) + ") below 1e-300");
    }

    Vector& alpha = out.alpha;
    alpha = Vector::Zero(s);
    for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
        const bool upper = sweep > 0 && cfg.mode == SweepMode::GaussSeidel;
        for (Eigen::Index i = 0; i < s; ++i) {
            double sum = 0.0;
            for (Eigen::Index j = 0; j < i; ++j) sum += st.dot(i, j) * alpha(j);
            if (upper)
                for (Eigen::Index j = i + 1; j < s; ++j) sum += st.dot(i, j) * alpha(j);
            alpha(i) = (b(i) - sum) / diag(i);
        }
    }

    // Residual with the same streamed entries the sweep used.
    double r2 = 0.0;
    for (Eigen::Index i = 0; i < s; ++i) {
        double gi = diag(i) * alpha(i);
        for (Eigen::Index j = 0; j < s; ++j)
            if (j != i) gi += st.dot(i, j) * alpha(j);
        const double ri = b(i) - gi;
        r2 += ri * ri;
    }
    out.residual_norm = std::sqrt(r2);

    // ||G||_2 by power iteration, G applied as P^T (P v) + lambda v.
    Vector v = Vector::Constant(s, 1.0 / std::sqrt(static_cast<double>(s)));
    double est = 0.0;
    for (int k = 0; k < kPowerIterations; ++k) {
        Vector gv = p.transpose() * (p * v) + cfg.lambda_reg * v;
        st.dots += 2 * s;
        est = gv.norm();
        if (!(est > 0.0)) break;
        v = gv / est;
    }
    out.gram_norm_estimate = est;

    const double denom = est * alpha.norm() + b.norm();
    out.backward_error = denom > 0.0 ? out.residual_norm / denom : 0.0;
    out.inner_products = st.dots;
    out.flops_estimate = 2 * st.dots * static_cast<std::int64_t>(d);
    return out;
}

Vector dense_oracle_solve(const Matrix& p, const Vector& g, double lambda_reg) {
    if (p.cols() < 1) throw Error(ErrorCode::InvalidArgument, "dense_oracle_solve: P has no columns");
    if (g.size() != p.rows()) throw Error(ErrorCode::DimMismatch, "dense_oracle_solve: rows(P) != len(g)");
    Matrix gram = p.transpose() * p;
    gram.diagonal().array() += lambda_reg;
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotSPD, "dense_oracle_solve: Cholesky failed");
    return llt.solve(p.transpose() * g);
}

double backward_error_bound(int s, double kappa_g) {
    const double sd = static_cast<double>(s);
    return kMachineEpsilon * kappa_g * (1.0 + sd * (sd - 1.0) / 2.0);
}

}  // namespace ska::gram
