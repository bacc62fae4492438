#include "ska/krylov_basis.hpp"

#include <cmath>
#include <string>

#include "ska/error.hpp"

namespace ska::krylov {

GradientBuffer::GradientBuffer(Eigen::Index dim, int capacity) : store_(dim, capacity), capacity_(capacity) {
    if (dim < 1 || capacity < 1) throw Error(ErrorCode::InvalidArgument, "GradientBuffer: dim and capacity must be >= 1");
}

void GradientBuffer::push(const Vector& g) {
    if (g.size() != store_.rows())
        throw Error(ErrorCode::DimMismatch, "GradientBuffer::push: got " + std::to_string(g.size()) + ", expected " +
                                                std::to_string(store_.rows()));
    head_ = (head_ + 1) % capacity_;
    store_.col(head_) = g;
    if (fill_ < capacity_) ++fill_;
}

Eigen::Ref<const Vector> GradientBuffer::column(int i) const {
    if (i < 0 || i >= fill_) throw Error(ErrorCode::IndexOutOfRange, "GradientBuffer::column " + std::to_string(i));
    const int slot = ((head_ - i) % capacity_ + capacity_) % capacity_;
    return store_.col(slot);
}

Matrix GradientBuffer::columns() const {
    Matrix out(store_.rows(), fill_);
    for (int i = 0; i < fill_; ++i) out.col(i) = column(i);
    return out;
}

void ChebyshevParams::validate() const {
    if (!(b > a)) throw Error(ErrorCode::InvalidArgument, "ChebyshevParams: need b > a");
}

Matrix perturbation_columns(const GradientOracle& oracle, const Vector& w, const Vector& g1, int s, double delta,
                            const std::optional<Vector>& d_inv) {
    if (s < 1) throw Error(ErrorCode::InvalidArgument, "perturbation_columns: s must be >= 1");
    if (!(delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "perturbation_columns: delta must be > 0");
    if (g1.size() != w.size() || (d_inv && d_inv->size() != w.size()))
        throw Error(ErrorCode::DimMismatch, "perturbation_columns: dimension mismatch");

    Matrix cols(w.size(), s);
    cols.col(0) = g1;
    for (int i = 1; i < s; ++i) {
        Vector gi;
        try {
            gi = oracle(w + delta * cols.col(i - 1));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw Error(ErrorCode::OracleFailure, std::string("perturbation_columns: ") + e.what());
        }
        if (gi.size() != w.size()) throw Error(ErrorCode::OracleFailure, "perturbation_columns: oracle returned wrong size");
        cols.col(i) = d_inv ? Vector(d_inv->cwiseProduct(gi)) : gi;
    }
    return cols;
}

namespace {

// Normalizes v in place, substituting a random unit vector if it vanished.
void normalize_or_substitute(Eigen::Ref<Vector> v, RandomSource* fallback, int& substituted, const char* who) {
    const double nrm = v.norm();
    if (nrm >= kVanishedNorm && std::isfinite(nrm)) {
        v /= nrm;
        return;
    }
    if (!fallback) throw Error(ErrorCode::ZeroVector, std::string(who) + ": column norm below 1e-300");
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = fallback->normal();
    v /= v.norm();
    ++substituted;
}

// QR with dependent columns removed one at a time.
Matrix orthonormalize_dropping(Matrix z, int& dropped) {
    for (;;) {
        QrResult qr = householder_qr(z);
        const double tol = kRankTolerance * z.norm();
        Eigen::Index bad = -1;
        for (Eigen::Index j = 0; j < qr.r.cols(); ++j) {
            if (!(qr.r(j, j) >= tol)) {
                bad = j;
                break;
            }
        }
        if (bad < 0 || z.cols() == 1) return std::move(qr.q);
        Matrix reduced(z.rows(), z.cols() - 1);
        reduced << z.leftCols(bad), z.rightCols(z.cols() - bad - 1);
        z = std::move(reduced);
        ++dropped;
    }
}

}  // namespace

Matrix chebyshev_recurrence(const Matrix& g, int s, const ChebyshevParams& params, RandomSource* fallback,
                            int* substituted) {
    params.validate();
    if (s < 1 || g.cols() < s) throw Error(ErrorCode::InvalidArgument, "chebyshev_basis: need 1 <= s <= cols(G)");
    if (g.rows() < s) throw Error(ErrorCode::InvalidArgument, "chebyshev_basis: need rows(G) >= s");

    const double scale = params.scale();
    const double shift = params.shift();
    int local = 0;
    int& count = substituted ? *substituted : local;

    Matrix z(g.rows(), s);
    z.col(0) = g.col(0);
    normalize_or_substitute(z.col(0), fallback, count, "chebyshev_basis");
    if (s > 1) {
        z.col(1) = scale * g.col(1) - shift * z.col(0);
        normalize_or_substitute(z.col(1), fallback, count, "chebyshev_basis");
        // Column j (0-based) reads G[:, j-1], so column 2 stays in span{z0, z1}.
        for (int j = 2; j < s; ++j) {
            z.col(j) = 2.0 * (scale * g.col(j - 1) - shift * z.col(j - 1)) - z.col(j - 2);
            normalize_or_substitute(z.col(j), fallback, count, "chebyshev_basis");
        }
    }
    return z;
}

KrylovBasis chebyshev_basis(const Matrix& g, int s, const ChebyshevParams& params, RandomSource* fallback) {
    KrylovBasis out;
    out.kind = BasisKind::Chebyshev;
    out.orthonormalized = true;
    Matrix z = chebyshev_recurrence(g, s, params, fallback, &out.substituted_columns);
    out.z = orthonormalize_dropping(std::move(z), out.dropped_columns);
    return out;
}

KrylovBasis monomial_basis(const Matrix& cols, RandomSource* fallback) {
    if (cols.cols() < 1) throw Error(ErrorCode::InvalidArgument, "monomial_basis: no columns");
    KrylovBasis out;
    out.kind = BasisKind::Monomial;
    out.z = cols;
    for (Eigen::Index j = 0; j < out.z.cols(); ++j)
        normalize_or_substitute(out.z.col(j), fallback, out.substituted_columns, "monomial_basis");
    return out;
}

}  // namespace ska::krylov
