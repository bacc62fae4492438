#include "ska/numerics.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/QR>

#include "ska/error.hpp"

namespace ska {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NotSPD: return "NotSPD";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::ZeroDiagonal: return "ZeroDiagonal";
    case ErrorCode::ZeroColumn: return "ZeroColumn";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::OracleFailure: return "OracleFailure";
    case ErrorCode::NoProgress: return "NoProgress";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

double RandomSource::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RandomSource::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::size_t RandomSource::uniform_index(std::size_t n) {
    if (n == 0) throw Error(ErrorCode::InvalidArgument, "uniform_index: n must be positive");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % bound);
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t master, std::initializer_list<std::uint64_t> indices) noexcept {
    std::uint64_t h = splitmix64(master);
    for (std::uint64_t i : indices) h = splitmix64(h ^ (i + 0x9e3779b97f4a7c15ULL));
    return h;
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, RandomSource& rng) {
    if (rows < 1 || cols < 1) throw Error(ErrorCode::InvalidArgument, "gaussian_matrix: empty shape");
    Matrix m(rows, cols);
    // Column-major fill order is part of the reproducibility contract.
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
    return m;
}

Vector gaussian_vector(Eigen::Index n, RandomSource& rng) {
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "gaussian_vector: empty shape");
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

QrResult householder_qr(const Matrix& m) {
    if (m.rows() < m.cols() || m.cols() < 1)
        throw Error(ErrorCode::InvalidArgument, "thin_qr: need rows >= cols >= 1, got " +
                                                    std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    const Eigen::Index n = m.cols();
    Eigen::HouseholderQR<Matrix> qr(m);
    QrResult out;
    out.q = qr.householderQ() * Matrix::Identity(m.rows(), n);
    out.r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (out.r(j, j) < 0.0) {
            out.r.row(j) *= -1.0;
            out.q.col(j) *= -1.0;
        }
    }
    return out;
}

QrResult thin_qr(const Matrix& m) {
    QrResult out = householder_qr(m);
    const double tol = kRankTolerance * m.norm();
    for (Eigen::Index j = 0; j < out.r.cols(); ++j) {
        if (!(out.r(j, j) >= tol))
            throw Error(ErrorCode::RankDeficient, "thin_qr: |R(" + std::to_string(j) + "," + std::to_string(j) +
                                                      ")| below tolerance");
    }
    return out;
}

Vector logspace(double lo, double hi, Eigen::Index count) {
    if (!(lo > 0.0) || !(hi > 0.0)) throw Error(ErrorCode::InvalidRange, "logspace: bounds must be positive");
    if (count < 1) throw Error(ErrorCode::InvalidArgument, "logspace: count must be >= 1");
    Vector out(count);
    out(0) = lo;
    if (count == 1) return out;
    const double a = std::log(lo);
    const double b = std::log(hi);
    const double steps = static_cast<double>(count - 1);
    for (Eigen::Index i = 1; i + 1 < count; ++i) out(i) = std::exp(a + (b - a) * (static_cast<double>(i) / steps));
    out(count - 1) = hi;
    return out;
}

double max_abs_identity_deviation(const Matrix& a) {
    return (a - Matrix::Identity(a.rows(), a.cols())).cwiseAbs().maxCoeff();
}

}  // namespace ska
