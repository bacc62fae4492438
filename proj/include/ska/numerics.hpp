#pragma once

// Dense linear algebra and seeded randomness shared by every other module.
//
// Storage is Eigen's column-major dynamic matrix/vector over doubles. The
// helpers here add the handful of operations whose exact contract matters
// to the rest of the library (sign-normalized Householder QR, logspace,
// reproducible normal variates).

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Core>

namespace ska {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Seeded stream of 64-bit integers, uniforms and standard normals.
///
/// Integer stream: std::mt19937_64, whose output sequence is fixed by the
/// C++ standard and therefore identical on every conforming platform.
/// Uniforms: top 53 bits scaled by 2^-53, giving [0, 1).
/// Normals: Box-Muller on two uniforms, u1 mapped to (0, 1] to avoid log(0).
/// Both variates of a Box-Muller pair are used (cosine branch first).
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }
    double uniform();
    double normal();
    /// Unbiased draw from {0, ..., n-1} by rejection; n must be positive.
    std::size_t uniform_index(std::size_t n);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer. Used to derive independent seeds.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Folds a master seed and a list of indices into one seed:
/// h = splitmix64(master); for each i: h = splitmix64(h ^ (i + 0x9e3779b97f4a7c15)).
std::uint64_t mix_seed(std::uint64_t master, std::initializer_list<std::uint64_t> indices) noexcept;

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, RandomSource& rng);
Vector gaussian_vector(Eigen::Index n, RandomSource& rng);

struct QrResult {
    Matrix q;  // rows x cols, orthonormal columns
    Matrix r;  // cols x cols, upper triangular, nonnegative diagonal
};

/// Householder thin QR with the sign convention diag(R) >= 0.
/// Does not check rank; see thin_qr.
QrResult householder_qr(const Matrix& m);

/// householder_qr plus a rank check: throws RankDeficient when some
/// |R_jj| < 1e-14 * ||M||_F.
QrResult thin_qr(const Matrix& m);

inline constexpr double kRankTolerance = 1e-14;

/// exp(linspace(ln lo, ln hi, count)); endpoints are returned exactly.
Vector logspace(double lo, double hi, Eigen::Index count);

/// max_ij |A_ij - I_ij|
double max_abs_identity_deviation(const Matrix& a);

}  // namespace ska
