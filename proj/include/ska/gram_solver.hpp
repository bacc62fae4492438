#pragma once

// Regularized Gram system (P^T P + lambda I) alpha = P^T g solved by forward
// Gauss-Seidel sweeps whose Gram entries are streamed as dot products.

#include <cstdint>

#include "ska/numerics.hpp"

namespace ska::gram {

enum class SweepMode {
    GaussSeidel,  // sweeps >= 2 also use the upper triangle (true GS on G)
    Verbatim,     // every sweep uses the lower triangle only; idempotent after sweep 1
};

struct GramSolveConfig {
    double lambda_reg = 1e-4;
    int sweeps = 2;
    SweepMode mode = SweepMode::GaussSeidel;

    void validate() const;
};

struct GramSolveResult {
    Vector alpha;
    double residual_norm = 0.0;   // ||b - G alpha||
    double backward_error = 0.0;  // residual_norm / (||G|| ||alpha|| + ||b||)
    double gram_norm_estimate = 0.0;
    std::int64_t flops_estimate = 0;
    std::int64_t inner_products = 0;  // length-d dot products evaluated
};

inline constexpr double kMachineEpsilon = 2.220446049250313e-16;
inline constexpr double kMinDiagonal = 1e-300;
inline constexpr int kPowerIterations = 20;

/// Throws ZeroDiagonal if some p_i^T p_i + lambda < 1e-300.
/// Extra storage is O(s) plus one length-d vector for the norm estimate.
GramSolveResult streaming_gauss_seidel(const Matrix& p, const Vector& g, const GramSolveConfig& cfg);

/// Forms G explicitly and solves by Cholesky. Throws NotSPD.
Vector dense_oracle_solve(const Matrix& p, const Vector& g, double lambda_reg);

/// eps * kappa_G * (1 + s(s-1)/2)
double backward_error_bound(int s, double kappa_g);

}  // namespace ska::gram
