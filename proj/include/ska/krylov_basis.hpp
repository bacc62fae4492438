#pragma once

// Krylov basis construction from stochastic gradients.
//
// Two column sources:
//   History      - the last s (preconditioned) gradients, newest first.
//   Perturbation - g, then gradients at w + delta * previous column, all on
//                  the same mini-batch.
// Two transforms of those columns:
//   Monomial     - columns scaled to unit length, nothing else.
//   Chebyshev    - three-term recurrence with the [a, b] -> [-1, 1] map,
//                  each column normalized, then Householder QR.

#include <functional>
#include <optional>

#include "ska/numerics.hpp"

namespace ska::krylov {

enum class BasisSource { History, Perturbation };
enum class BasisKind { Monomial, Chebyshev };

/// Ring buffer of the most recent gradients.
class GradientBuffer {
public:
    GradientBuffer(Eigen::Index dim, int capacity);

    /// g becomes column 0; the oldest column is evicted at capacity.
    void push(const Vector& g);

    [[nodiscard]] int fill() const noexcept { return fill_; }
    [[nodiscard]] int capacity() const noexcept { return capacity_; }
    [[nodiscard]] Eigen::Index dim() const noexcept { return store_.rows(); }

    /// Column i counted from the newest (i = 0).
    [[nodiscard]] Eigen::Ref<const Vector> column(int i) const;
    /// dim x fill matrix, newest first.
    [[nodiscard]] Matrix columns() const;

private:
    Matrix store_;
    int capacity_;
    int head_ = -1;  // slot of the newest column
    int fill_ = 0;
};

struct ChebyshevParams {
    double a = 0.01;
    double b = 10.0;

    [[nodiscard]] double scale() const { return 2.0 / (b - a); }
    [[nodiscard]] double shift() const { return (a + b) / (b - a); }
    void validate() const;
};

struct KrylovBasis {
    Matrix z;
    BasisSource source = BasisSource::History;
    BasisKind kind = BasisKind::Monomial;
    bool orthonormalized = false;
    int substituted_columns = 0;  // vanished columns replaced by random unit vectors
    int dropped_columns = 0;      // columns removed as numerically dependent

    [[nodiscard]] Eigen::Index size() const { return z.cols(); }
};

using GradientOracle = std::function<Vector(const Vector&)>;

inline constexpr double kDefaultPerturbation = 1e-6;
inline constexpr double kVanishedNorm = 1e-300;

/// Column 0 = g1 (already preconditioned by the caller when d_inv is used).
/// Column i = d_inv .* oracle(w + delta * column_{i-1}) for i = 1..s-1.
/// The oracle must evaluate on one fixed mini-batch for every call.
/// Exceptions thrown by the oracle are rethrown as OracleFailure.
Matrix perturbation_columns(const GradientOracle& oracle, const Vector& w, const Vector& g1, int s, double delta,
                            const std::optional<Vector>& d_inv);

/// The normalized three-term recurrence columns before orthogonalization.
/// Increments *substituted for each vanished column replaced via fallback.
Matrix chebyshev_recurrence(const Matrix& g, int s, const ChebyshevParams& params, RandomSource* fallback = nullptr,
                            int* substituted = nullptr);

/// Chebyshev recurrence over the first s columns of g, normalized per column,
/// then orthonormalized by QR (diag(R) >= 0, so Z[:,0] = g[:,0]/||g[:,0]||).
/// A pre-normalization column with norm < 1e-300 raises ZeroVector unless
/// fallback is given, in which case it is replaced by a random unit vector.
/// Columns found dependent by QR are dropped, so z may have fewer than s columns.
KrylovBasis chebyshev_basis(const Matrix& g, int s, const ChebyshevParams& params, RandomSource* fallback = nullptr);

/// Columns scaled to unit norm; no orthogonalization.
KrylovBasis monomial_basis(const Matrix& cols, RandomSource* fallback = nullptr);

}  // namespace ska::krylov
