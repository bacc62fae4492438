#include "ska/problems.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "ska/error.hpp"

namespace ska::problems {

QuadraticProblem quadratic_from_spectrum(const Vector& eigenvalues, double noise_sigma, RandomSource& rng) {
    const Eigen::Index d = eigenvalues.size();
    if (d < 1) throw Error(ErrorCode::InvalidArgument, "quadratic: empty spectrum");
    if (!(eigenvalues.minCoeff() > 0.0)) throw Error(ErrorCode::InvalidArgument, "quadratic: spectrum must be positive");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "quadratic: noise_sigma must be >= 0");

    const Matrix q = thin_qr(gaussian_matrix(d, d, rng)).q;
    Matrix h = q * eigenvalues.asDiagonal() * q.transpose();
    h = 0.5 * (h + h.transpose()).eval();

    QuadraticProblem p;
    p.b = gaussian_vector(d, rng);
    Eigen::LLT<Matrix> llt(h);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotSPD, "quadratic: Cholesky of H failed");
    p.x_star = llt.solve(p.b);
    p.h = std::move(h);
    p.f_star = -0.5 * p.b.dot(p.x_star);
    p.kappa = eigenvalues.maxCoeff() / eigenvalues.minCoeff();
    p.noise_sigma = noise_sigma;
    p.eigenvalues = eigenvalues;
    return p;
}

QuadraticProblem gen_quadratic(Eigen::Index d, double kappa, double noise_sigma, RandomSource& rng) {
    if (d < 2) throw Error(ErrorCode::InvalidArgument, "gen_quadratic: d must be >= 2");
    if (!(kappa >= 1.0)) throw Error(ErrorCode::InvalidArgument, "gen_quadratic: kappa must be >= 1");
    return quadratic_from_spectrum(logspace(1.0, kappa, d), noise_sigma, rng);
}

QuadraticProblem gen_clustered(Eigen::Index d, double noise_sigma, RandomSource& rng) {
    if (d < 2) throw Error(ErrorCode::InvalidArgument, "gen_clustered: d must be >= 2");
    const auto low = static_cast<Eigen::Index>(std::ceil(0.8 * static_cast<double>(d)));
    Vector eig(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double center = i < low ? 1.0 : 10.0;
        eig(i) = center * (1.0 + 0.1 * (rng.uniform() - 0.5));
    }
    return quadratic_from_spectrum(eig, noise_sigma, rng);
}

double quad_objective(const QuadraticProblem& p, const Vector& x) {
    return 0.5 * x.dot(p.h * x) - p.b.dot(x);
}

double quad_gap(const QuadraticProblem& p, const Vector& x) {
    const Vector e = x - p.x_star;
    return 0.5 * e.dot(p.h * e);
}

Vector quad_exact_gradient(const QuadraticProblem& p, const Vector& x) {
    if (x.size() != p.dim()) throw Error(ErrorCode::DimMismatch, "quad_gradient: dimension mismatch");
    return p.h * x - p.b;
}

Vector quad_gradient(const QuadraticProblem& p, const Vector& x, RandomSource& rng) {
    Vector g = quad_exact_gradient(p, x);
    if (p.noise_sigma > 0.0)
        for (Eigen::Index i = 0; i < g.size(); ++i) g(i) += p.noise_sigma * rng.normal();
    return g;
}

Vector jacobi_preconditioner(const QuadraticProblem& p) {
    return p.h.diagonal().cwiseInverse();
}

LogisticProblem gen_logistic(Eigen::Index n, Eigen::Index d, double kappa, std::optional<double> label_noise,
                             double lambda_scale, RandomSource& rng) {
    if (d < 2 || n <= d) throw Error(ErrorCode::InvalidArgument, "gen_logistic: need n > d >= 2");
    if (!(kappa >= 1.0)) throw Error(ErrorCode::InvalidArgument, "gen_logistic: kappa must be >= 1");
    if (label_noise && !(*label_noise >= 0.0))
        throw Error(ErrorCode::InvalidArgument, "gen_logistic: label_noise must be >= 0");

    LogisticProblem p;
    p.kappa = kappa;
    p.lambda_reg = lambda_scale / kappa;
    p.feature_scales.resize(d);
    for (Eigen::Index i = 0; i < d; ++i)
        p.feature_scales(i) = std::pow(kappa, -static_cast<double>(i) / static_cast<double>(d - 1));

    const Matrix u = thin_qr(gaussian_matrix(d, d, rng)).q;
    const Matrix z = gaussian_matrix(n, d, rng);
    p.x = z * (u * p.feature_scales.asDiagonal() * u.transpose());

    p.w_star = p.feature_scales.cwiseSqrt().cwiseInverse();
    p.w_star /= p.w_star.norm();

    const Vector margins = p.x * p.w_star;
    if (label_noise) {
        p.label_noise = *label_noise;
    } else {
        const double mean = margins.mean();
        const double var = (margins.array() - mean).square().mean();
        p.label_noise = kDefaultLabelNoiseFraction * std::sqrt(var);
    }

    p.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = margins(i) + p.label_noise * rng.normal();
        p.y(i) = m >= 0.0 ? 1.0 : -1.0;
    }
    if (p.y.minCoeff() == p.y.maxCoeff())
        throw Error(ErrorCode::DegenerateLabels, "gen_logistic: all labels identical");
    return p;
}

double log1p_exp_neg(double t) {
    return t >= 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

double logistic_loss(const LogisticProblem& p, const Vector& w) {
    if (w.size() != p.dim()) throw Error(ErrorCode::DimMismatch, "logistic_loss: dimension mismatch");
    const Vector margins = p.x * w;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < margins.size(); ++i) sum += log1p_exp_neg(p.y(i) * margins(i));
    return sum / static_cast<double>(p.samples()) + 0.5 * p.lambda_reg * w.squaredNorm();
}

Vector logistic_minibatch_gradient(const LogisticProblem& p, const Vector& w, std::span<const std::size_t> batch) {
    if (w.size() != p.dim()) throw Error(ErrorCode::DimMismatch, "logistic gradient: dimension mismatch");
    if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "logistic gradient: empty batch");
    const auto n = static_cast<std::size_t>(p.samples());
    Vector acc = Vector::Zero(p.dim());
    for (std::size_t idx : batch) {
        if (idx >= n) throw Error(ErrorCode::IndexOutOfRange, "logistic gradient: index " + std::to_string(idx));
        const auto i = static_cast<Eigen::Index>(idx);
        const double yi = p.y(i);
        const double t = yi * p.x.row(i).dot(w);
        // y_i * s(-t) = y_i / (1 + exp(t)); exp overflow saturates to 0 cleanly.
        acc.noalias() += (yi / (1.0 + std::exp(t))) * p.x.row(i).transpose();
    }
    return -acc / static_cast<double>(batch.size()) + p.lambda_reg * w;
}

Vector jacobi_preconditioner(const LogisticProblem& p) {
    Vector out(p.dim());
    for (Eigen::Index j = 0; j < p.dim(); ++j) {
        const double s = p.x.col(j).squaredNorm();
        if (s == 0.0) {
            std::clog << "warning: jacobi_preconditioner: column " << j << " is zero, using 1.0\n";
            out(j) = 1.0;
        } else {
            out(j) = 1.0 / s;
        }
    }
    return out;
}

double feature_condition_number(const LogisticProblem& p) {
    Eigen::BDCSVD<Matrix> svd(p.x);
    const Vector& sv = svd.singularValues();
    return sv.maxCoeff() / sv.minCoeff();
}

MiniBatchSampler::MiniBatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(seed) {
    if (n == 0 || batch_size == 0) throw Error(ErrorCode::InvalidArgument, "MiniBatchSampler: n and batch must be > 0");
    perm_.resize(n_);
    reshuffle();
}

void MiniBatchSampler::reshuffle() {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    for (std::size_t i = n_ - 1; i > 0; --i) std::swap(perm_[i], perm_[rng_.uniform_index(i + 1)]);
    cursor_ = 0;
}

std::vector<std::size_t> MiniBatchSampler::next_batch() {
    if (cursor_ >= n_) {
        reshuffle();
        ++epoch_;
    }
    const std::size_t end = std::min(n_, cursor_ + batch_size_);
    std::vector<std::size_t> out(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 perm_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return out;
}

// ---- text dump ----

namespace {

void put_double(std::ostream& out, double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
    out.write(buf, res.ptr - buf);
}

double parse_double(const std::string& tok) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto res = std::from_chars(first, last, v, std::chars_format::hex);
    if (res.ec != std::errc{} || res.ptr != last) throw Error(ErrorCode::Io, "problem dump: bad float '" + tok + "'");
    return v;
}

void put_scalar(std::ostream& out, const char* name, double v) {
    out << name << ' ';
    put_double(out, v);
    out << '\n';
}

void put_vector(std::ostream& out, const char* name, const Vector& v) {
    out << name << ' ' << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out << ' ';
        put_double(out, v(i));
    }
    out << '\n';
}

void put_matrix(std::ostream& out, const char* name, const Matrix& m) {
    out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ' ';
            put_double(out, m(i, j));
        }
        out << '\n';
    }
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    void expect(const std::string& word) {
        const std::string got = token();
        if (got != word) throw Error(ErrorCode::Io, "problem dump: expected '" + word + "', got '" + got + "'");
    }
    std::string token() {
        std::string t;
        if (!(in_ >> t)) throw Error(ErrorCode::Io, "problem dump: unexpected end of input");
        return t;
    }
    long long integer(const std::string& name) {
        expect(name);
        return integer();
    }
    long long integer() {
        const std::string t = token();
        long long v = 0;
        auto res = std::from_chars(t.data(), t.data() + t.size(), v);
        if (res.ec != std::errc{} || v < 0) throw Error(ErrorCode::Io, "problem dump: bad integer '" + t + "'");
        return v;
    }
    double scalar(const std::string& name) {
        expect(name);
        return parse_double(token());
    }
    Vector vector(const std::string& name) {
        expect(name);
        const auto len = static_cast<Eigen::Index>(integer());
        Vector v(len);
        for (Eigen::Index i = 0; i < len; ++i) v(i) = parse_double(token());
        return v;
    }
    Matrix matrix(const std::string& name) {
        expect(name);
        const auto rows = static_cast<Eigen::Index>(integer());
        const auto cols = static_cast<Eigen::Index>(integer());
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = parse_double(token());
        return m;
    }

private:
    std::istream& in_;
};

void check_output(std::ostream& out) {
    if (!out) throw Error(ErrorCode::Io, "problem dump: write failed");
}

}  // namespace

void save(const QuadraticProblem& p, std::ostream& out) {
    out << "ska-problem 1\nfamily quadratic\n";
    out << "d " << p.dim() << '\n';
    put_scalar(out, "kappa", p.kappa);
    put_scalar(out, "noise_sigma", p.noise_sigma);
    put_scalar(out, "f_star", p.f_star);
    put_vector(out, "b", p.b);
    put_vector(out, "x_star", p.x_star);
    put_vector(out, "eigenvalues", p.eigenvalues);
    put_matrix(out, "h", p.h);
    out << "end\n";
    check_output(out);
}

void save(const LogisticProblem& p, std::ostream& out) {
    out << "ska-problem 1\nfamily logistic\n";
    out << "n " << p.samples() << '\n' << "d " << p.dim() << '\n';
    put_scalar(out, "kappa", p.kappa);
    put_scalar(out, "lambda_reg", p.lambda_reg);
    put_scalar(out, "label_noise", p.label_noise);
    put_vector(out, "y", p.y);
    put_vector(out, "w_star", p.w_star);
    put_vector(out, "feature_scales", p.feature_scales);
    put_matrix(out, "x", p.x);
    out << "end\n";
    check_output(out);
}

QuadraticProblem load_quadratic(std::istream& in) {
    Reader r(in);
    r.expect("ska-problem");
    r.expect("1");
    r.expect("family");
    r.expect("quadratic");
    QuadraticProblem p;
    const auto d = static_cast<Eigen::Index>(r.integer("d"));
    p.kappa = r.scalar("kappa");
    p.noise_sigma = r.scalar("noise_sigma");
    p.f_star = r.scalar("f_star");
    p.b = r.vector("b");
    p.x_star = r.vector("x_star");
    p.eigenvalues = r.vector("eigenvalues");
    p.h = r.matrix("h");
    r.expect("end");
    if (p.b.size() != d || p.x_star.size() != d || p.h.rows() != d || p.h.cols() != d)
        throw Error(ErrorCode::Io, "problem dump: inconsistent quadratic dimensions");
    return p;
}

LogisticProblem load_logistic(std::istream& in) {
    Reader r(in);
    r.expect("ska-problem");
    r.expect("1");
    r.expect("family");
    r.expect("logistic");
    LogisticProblem p;
    const auto n = static_cast<Eigen::Index>(r.integer("n"));
    const auto d = static_cast<Eigen::Index>(r.integer("d"));
    p.kappa = r.scalar("kappa");
    p.lambda_reg = r.scalar("lambda_reg");
    p.label_noise = r.scalar("label_noise");
    p.y = r.vector("y");
    p.w_star = r.vector("w_star");
    p.feature_scales = r.vector("feature_scales");
    p.x = r.matrix("x");
    r.expect("end");
    if (p.x.rows() != n || p.x.cols() != d || p.y.size() != n || p.w_star.size() != d)
        throw Error(ErrorCode::Io, "problem dump: inconsistent logistic dimensions");
    return p;
}

}  // namespace ska::problems
