#pragma once

// Synthetic test problems with controlled spectra: log-spaced and clustered
// quadratics, and an ill-conditioned binary logistic regression.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "ska/numerics.hpp"

namespace ska::problems {

/// f(x) = 1/2 x^T H x - b^T x with stochastic gradients Hx - b + eps,
/// eps ~ N(0, noise_sigma^2 I).
struct QuadraticProblem {
    Matrix h;
    Vector b;
    Vector x_star;
    double f_star = 0.0;
    double kappa = 1.0;  // lambda_max / lambda_min of the prescribed spectrum
    double noise_sigma = 0.0;
    Vector eigenvalues;  // prescribed spectrum, ascending for log-spaced problems

    [[nodiscard]] Eigen::Index dim() const { return b.size(); }
    [[nodiscard]] double lipschitz() const { return eigenvalues.maxCoeff(); }
};

/// (1/n) sum log(1 + exp(-y_i x_i^T w)) + (lambda/2) ||w||^2
struct LogisticProblem {
    Matrix x;  // n x d
    Vector y;  // entries in {-1, +1}
    Vector w_star;
    double lambda_reg = 0.0;
    double kappa = 1.0;
    double label_noise = 0.0;  // std of the Gaussian noise added to the margins
    Vector feature_scales;     // sigma_i, geometric from 1 down to 1/kappa

    [[nodiscard]] Eigen::Index dim() const { return x.cols(); }
    [[nodiscard]] Eigen::Index samples() const { return x.rows(); }
};

/// Builds H = Q diag(eigenvalues) Q^T with Q from the QR of a Gaussian matrix,
/// then draws b ~ N(0, I) and solves for x_star by Cholesky.
/// Draw order from rng: Q's Gaussian matrix (column-major), then b.
QuadraticProblem quadratic_from_spectrum(const Vector& eigenvalues, double noise_sigma, RandomSource& rng);

/// Eigenvalues logspace(1, kappa, d).
QuadraticProblem gen_quadratic(Eigen::Index d, double kappa, double noise_sigma, RandomSource& rng);

/// ceil(0.8 d) eigenvalues at 1 (1 + u) and the rest at 10 (1 + u), u ~ U(-0.05, 0.05).
/// The jitters are drawn first, then the quadratic_from_spectrum draws.
QuadraticProblem gen_clustered(Eigen::Index d, double noise_sigma, RandomSource& rng);

double quad_objective(const QuadraticProblem& p, const Vector& x);
/// f(x) - f_star, evaluated as 1/2 (x - x*)^T H (x - x*) to avoid cancellation.
double quad_gap(const QuadraticProblem& p, const Vector& x);
Vector quad_exact_gradient(const QuadraticProblem& p, const Vector& x);
/// Hx - b + eps; draws d normals from rng only when noise_sigma > 0.
Vector quad_gradient(const QuadraticProblem& p, const Vector& x, RandomSource& rng);

/// 1 / diag(H)
Vector jacobi_preconditioner(const QuadraticProblem& p);

/// Feature construction X = Z U Sigma U^T with sigma_i = kappa^{-(i-1)/(d-1)},
/// w_star_j proportional to 1/sqrt(sigma_j) and unit-normalized,
/// y_i = sign(x_i^T w_star + eps_i) with sign(0) = +1.
/// label_noise = nullopt selects 0.1 * std(X w_star).
/// Draw order: U's Gaussian matrix, Z (column-major), then the n label noises.
LogisticProblem gen_logistic(Eigen::Index n, Eigen::Index d, double kappa, std::optional<double> label_noise,
                             double lambda_scale, RandomSource& rng);

inline constexpr double kDefaultLambdaScale = 0.1;
inline constexpr double kDefaultLabelNoiseFraction = 0.1;

/// Numerically stable log(1 + exp(-t)).
double log1p_exp_neg(double t);

double logistic_loss(const LogisticProblem& p, const Vector& w);

/// -(1/|B|) X_B^T (y_B .* s(-y_B .* X_B w)) + lambda w, s the logistic sigmoid.
Vector logistic_minibatch_gradient(const LogisticProblem& p, const Vector& w, std::span<const std::size_t> batch);

/// 1 ./ sum(X.^2, 1); a zero column maps to 1.0 with a warning on std::clog.
Vector jacobi_preconditioner(const LogisticProblem& p);

/// Largest singular value over smallest for X / sqrt(n), via a dense SVD.
double feature_condition_number(const LogisticProblem& p);

/// Epoch-based sampling without replacement: each epoch draws a fresh
/// Fisher-Yates permutation and hands it out in consecutive slices. The last
/// slice of an epoch may be short.
class MiniBatchSampler {
public:
    MiniBatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> next_batch();

    [[nodiscard]] std::size_t epoch() const noexcept { return epoch_; }
    [[nodiscard]] std::size_t batch_size() const noexcept { return batch_size_; }

private:
    void reshuffle();

    std::size_t n_;
    std::size_t batch_size_;
    RandomSource rng_;
    std::vector<std::size_t> perm_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

// Text dump for regression fixtures. Layout (one item per line, floats in
// std::to_chars hex format, e.g. -1.8p+1, so they round-trip exactly):
//   ska-problem 1
//   family quadratic|logistic
//   <scalar-name> <value>          ...
//   <vector-name> <len> v0 v1 ...
//   <matrix-name> <rows> <cols>    followed by <rows> lines of <cols> values
//   end
// Quadratic field order: d kappa noise_sigma f_star b x_star eigenvalues h.
// Logistic field order:  n d kappa lambda_reg label_noise y w_star feature_scales x.
void save(const QuadraticProblem& p, std::ostream& out);
void save(const LogisticProblem& p, std::ostream& out);
QuadraticProblem load_quadratic(std::istream& in);
LogisticProblem load_logistic(std::istream& in);

}  // namespace ska::problems
