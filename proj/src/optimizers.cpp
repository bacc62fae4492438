#include "ska/optimizers.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "ska/error.hpp"

namespace ska::opt {

std::string_view to_string(OptimizerKind kind) noexcept {
    switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Nesterov: return "nesterov";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::Ska: return "ska";
    }
    return "unknown";
}

std::string_view to_string(Family family) noexcept {
    return family == Family::Quadratic ? "quadratic" : "logistic";
}

void OptConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::Config, "OptConfig: " + what); };
    if (!(eta > 0.0) || !std::isfinite(eta)) fail("eta must be > 0");
    if (!(beta >= 0.0 && beta < 1.0)) fail("beta must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
    if (!(eps_adam >= 0.0)) fail("eps_adam must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (s < 1) fail("s must be >= 1");
    if (m_sweeps < 1) fail("m_sweeps must be >= 1");
    if (!(gram_reg >= 0.0)) fail("gram_reg must be >= 0");
    if (!(delta_perturb > 0.0)) fail("delta_perturb must be > 0");
    if (!(cheb.b > cheb.a)) fail("cheb.b must exceed cheb.a");
}

const std::vector<std::string>& optimizer_names() {
    static const std::vector<std::string> names = {
        "sgd",       "nesterov",      "jacobi-nesterov",        "adam",
        "ska-basic", "ska-chebyshev", "ska-chebyshev-nesterov", "ska-ultimate",
    };
    return names;
}

OptConfig named_optimizer(std::string_view name, Family family) {
    const bool quad = family == Family::Quadratic;
    OptConfig c;
    c.batch_size = quad ? 64 : 128;
    if (name == "sgd" || name == "nesterov" || name == "jacobi-nesterov") {
        c.kind = name == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Nesterov;
        c.use_jacobi = name == "jacobi-nesterov";
        c.eta = 0.1;
        c.eta_per_lipschitz = quad && !c.use_jacobi;
        return c;
    }
    if (name == "adam") {
        c.kind = OptimizerKind::Adam;
        c.eta = 0.001;
        c.beta = 0.9;
        c.beta2 = 0.999;
        c.eps_adam = 1e-8;
        return c;
    }
    c.kind = OptimizerKind::Ska;
    c.eta = 0.1;
    c.batch_size = quad ? 32 : 64;
    c.s = 16;
    c.m_sweeps = 2;
    c.gram_reg = 1e-4;
    c.cheb = {0.01, 10.0};
    c.beta = 0.9;
    if (name == "ska-basic") {
        c.basis_kind = krylov::BasisKind::Monomial;
        c.basis_source = krylov::BasisSource::History;
    } else if (name == "ska-chebyshev" || name == "ska-chebyshev-nesterov" || name == "ska-ultimate") {
        c.basis_kind = krylov::BasisKind::Chebyshev;
        c.basis_source = quad ? krylov::BasisSource::History : krylov::BasisSource::Perturbation;
        c.use_nesterov = name != "ska-chebyshev";
        c.use_jacobi = name == "ska-ultimate";
    } else {
        throw Error(ErrorCode::Config, "unknown optimizer '" + std::string(name) + "'");
    }
    c.eta_per_lipschitz = quad && !c.use_jacobi;
    return c;
}

// ---------------------------------------------------------------- objectives

namespace {

class NoiseStream final : public BatchStream {
public:
    NoiseStream(Eigen::Index dim, double sigma, std::uint64_t seed) : dim_(dim), sigma_(sigma), rng_(seed) {}
    Batch next() override {
        Batch b;
        if (sigma_ > 0.0) b.noise = sigma_ * gaussian_vector(dim_, rng_);
        return b;
    }

private:
    Eigen::Index dim_;
    double sigma_;
    RandomSource rng_;
};

class SamplerStream final : public BatchStream {
public:
    SamplerStream(std::size_t n, std::size_t batch, std::uint64_t seed) : sampler_(n, batch, seed) {}
    Batch next() override { return Batch{sampler_.next_batch(), {}}; }

private:
    problems::MiniBatchSampler sampler_;
};

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

QuadraticObjective::QuadraticObjective(std::shared_ptr<const problems::QuadraticProblem> p) : p_(std::move(p)) {
    if (!p_) throw Error(ErrorCode::InvalidArgument, "QuadraticObjective: null problem");
}

std::unique_ptr<BatchStream> QuadraticObjective::batches(int, std::uint64_t seed) const {
    return std::make_unique<NoiseStream>(p_->dim(), p_->noise_sigma, seed);
}

Vector QuadraticObjective::gradient(const Vector& w, const Batch& batch) const {
    Vector g = problems::quad_exact_gradient(*p_, w);
    if (batch.noise.size() > 0) {
        if (batch.noise.size() != g.size()) throw Error(ErrorCode::DimMismatch, "QuadraticObjective: noise length");
        g += batch.noise;
    }
    return g;
}

Vector QuadraticObjective::full_gradient(const Vector& w) const { return problems::quad_exact_gradient(*p_, w); }
double QuadraticObjective::loss(const Vector& w) const { return problems::quad_objective(*p_, w); }
double QuadraticObjective::err_norm(const Vector& w) const { return (w - p_->x_star).norm(); }
double QuadraticObjective::obj_gap(const Vector& w) const { return problems::quad_gap(*p_, w); }
Vector QuadraticObjective::jacobi() const { return problems::jacobi_preconditioner(*p_); }
double QuadraticObjective::lipschitz() const { return p_->lipschitz(); }

Vector QuadraticObjective::initial_point(RandomSource& rng) const {
    Vector u = gaussian_vector(p_->dim(), rng);
    return p_->x_star + u / u.norm();
}

LogisticObjective::LogisticObjective(std::shared_ptr<const problems::LogisticProblem> p) : p_(std::move(p)) {
    if (!p_) throw Error(ErrorCode::InvalidArgument, "LogisticObjective: null problem");
    jacobi_ = problems::jacobi_preconditioner(*p_);
    // Largest eigenvalue of X^T X by power iteration.
    Vector v = Vector::Constant(p_->dim(), 1.0 / std::sqrt(static_cast<double>(p_->dim())));
    double top = 0.0;
    for (int k = 0; k < 100; ++k) {
        Vector xv = p_->x.transpose() * (p_->x * v);
        top = xv.norm();
        if (!(top > 0.0)) break;
        v = xv / top;
    }
    lipschitz_ = top / (4.0 * static_cast<double>(p_->samples())) + p_->lambda_reg;
}

std::unique_ptr<BatchStream> LogisticObjective::batches(int batch_size, std::uint64_t seed) const {
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "LogisticObjective: batch_size must be >= 1");
    return std::make_unique<SamplerStream>(static_cast<std::size_t>(p_->samples()),
                                           static_cast<std::size_t>(batch_size), seed);
}

Vector LogisticObjective::gradient(const Vector& w, const Batch& batch) const {
    return problems::logistic_minibatch_gradient(*p_, w, batch.indices);
}

Vector LogisticObjective::full_gradient(const Vector& w) const {
    std::vector<std::size_t> all(static_cast<std::size_t>(p_->samples()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return problems::logistic_minibatch_gradient(*p_, w, all);
}

double LogisticObjective::loss(const Vector& w) const { return problems::logistic_loss(*p_, w); }
double LogisticObjective::err_norm(const Vector&) const { return nan(); }
double LogisticObjective::obj_gap(const Vector&) const { return nan(); }
Vector LogisticObjective::jacobi() const { return jacobi_; }
double LogisticObjective::lipschitz() const { return lipschitz_; }
Vector LogisticObjective::initial_point(RandomSource&) const { return Vector::Zero(p_->dim()); }

// --------------------------------------------------------------------- steps

OptimizerState init_state(const Objective& obj, const OptConfig& cfg, const Vector& w0) {
    if (w0.size() != obj.dim()) throw Error(ErrorCode::DimMismatch, "init_state: w0 has the wrong length");
    OptimizerState st;
    st.w = w0;
    st.v = Vector::Zero(w0.size());
    if (cfg.kind == OptimizerKind::Adam) {
        st.adam_m = Vector::Zero(w0.size());
        st.adam_v = Vector::Zero(w0.size());
    }
    if (cfg.kind == OptimizerKind::Ska && cfg.basis_source == krylov::BasisSource::History)
        st.buf.emplace(w0.size(), cfg.s);
    if (cfg.use_jacobi) st.d_inv = obj.jacobi();
    return st;
}

OptConfig resolve_step_size(const OptConfig& cfg, const Objective& obj, double eta_multiplier) {
    if (!(eta_multiplier > 0.0)) throw Error(ErrorCode::Config, "eta_multiplier must be > 0");
    OptConfig out = cfg;
    out.eta = cfg.eta * eta_multiplier;
    if (cfg.eta_per_lipschitz) {
        out.eta /= obj.lipschitz();
        out.eta_per_lipschitz = false;
    }
    return out;
}

namespace {

Vector checked_gradient(const Objective& obj, const Vector& w, const Batch& batch) {
    Vector g = obj.gradient(w, batch);
    if (!g.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "gradient has non-finite entries");
    return g;
}

void scale_in_place(Vector& g, const OptimizerState& st) {
    if (st.d_inv) g.array() *= st.d_inv->array();
}

}  // namespace

void sgd_step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg) {
    Vector g = checked_gradient(obj, st.w, batch);
    scale_in_place(g, st);
    st.w -= cfg.eta * g;
    ++st.t;
}

void nesterov_step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg) {
    Vector g = checked_gradient(obj, st.w + cfg.beta * st.v, batch);
    scale_in_place(g, st);
    st.v = cfg.beta * st.v - cfg.eta * g;
    st.w += st.v;
    ++st.t;
}

void adam_step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg) {
    const Vector g = checked_gradient(obj, st.w, batch);
    ++st.t;
    st.adam_m = cfg.beta * st.adam_m + (1.0 - cfg.beta) * g;
    st.adam_v = cfg.beta2 * st.adam_v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double t = static_cast<double>(st.t);
    const double c1 = 1.0 - std::pow(cfg.beta, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    const Eigen::ArrayXd m_hat = st.adam_m.array() / c1;
    const Eigen::ArrayXd v_hat = st.adam_v.array() / c2;
    st.w.array() -= cfg.eta * m_hat / (v_hat.sqrt() + cfg.eps_adam);
}

gram::GramSolveResult ska_step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg,
                               RandomSource* fallback) {
    const bool ahead = cfg.use_nesterov && cfg.lookahead;
    const Vector point = ahead ? Vector(st.w + cfg.beta * st.v) : st.w;
    Vector g = checked_gradient(obj, point, batch);
    scale_in_place(g, st);

    Matrix cols;
    if (cfg.basis_source == krylov::BasisSource::History) {
        if (!st.buf) st.buf.emplace(st.w.size(), cfg.s);
        st.buf->push(g);
        cols = st.buf->columns();
    } else {
        auto oracle = [&](const Vector& x) { return obj.gradient(x, batch); };
        cols = krylov::perturbation_columns(oracle, point, g, cfg.s, cfg.delta_perturb, st.d_inv);
    }

    krylov::KrylovBasis basis;
    if (cfg.basis_kind == krylov::BasisKind::Chebyshev) {
        const int s_eff = static_cast<int>(std::min<Eigen::Index>(cols.cols(), cols.rows()));
        basis = krylov::chebyshev_basis(cols, s_eff, cfg.cheb, fallback);
    } else {
        basis = krylov::monomial_basis(cols, fallback);
    }

    gram::GramSolveResult res = gram::streaming_gauss_seidel(basis.z, g, {cfg.gram_reg, cfg.m_sweeps, cfg.sweep_mode});
    const Vector pg = basis.z * res.alpha;
    if (cfg.use_nesterov) {
        st.v = cfg.beta * st.v - cfg.eta * pg;
        st.w += st.v;
    } else {
        st.w -= cfg.eta * pg;
    }
    ++st.t;
    return res;
}

void step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg, RandomSource* fallback) {
    switch (cfg.kind) {
    case OptimizerKind::Sgd: sgd_step(st, obj, batch, cfg); return;
    case OptimizerKind::Nesterov: nesterov_step(st, obj, batch, cfg); return;
    case OptimizerKind::Adam: adam_step(st, obj, batch, cfg); return;
    case OptimizerKind::Ska: ska_step(st, obj, batch, cfg, fallback); return;
    }
}

// ----------------------------------------------------------------------- run

TrialRecord run(const Objective& obj, const OptConfig& cfg_in, const RunOptions& opts) {
    if (opts.iterations < 1) throw Error(ErrorCode::InvalidArgument, "run: iterations must be >= 1");
    if (opts.checkpoint_every < 1) throw Error(ErrorCode::InvalidArgument, "run: checkpoint_every must be >= 1");
    cfg_in.validate();
    const OptConfig cfg = resolve_step_size(cfg_in, obj);

    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    auto elapsed = [&] {
        return std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - start).count();
    };

    TrialRecord rec;
    rec.optimizer = opts.name.empty() ? std::string(to_string(cfg.kind)) : opts.name;
    rec.seed = opts.seed;

    RandomSource init_rng(opts.init_seed ? *opts.init_seed : mix_seed(opts.seed, {2}));
    RandomSource fallback(mix_seed(opts.seed, {1}));
    auto stream = obj.batches(cfg.batch_size, opts.seed);
    OptimizerState st = init_state(obj, cfg, obj.initial_point(init_rng));

    auto record = [&](std::int64_t iter) {
        StepRecord r;
        r.iter = iter;
        r.loss = obj.loss(st.w);
        r.grad_norm = obj.full_gradient(st.w).norm();
        r.err_norm = obj.err_norm(st.w);
        r.obj_gap = obj.obj_gap(st.w);
        r.wall_ns = opts.record_wall_time ? elapsed() : 0;
        rec.steps.push_back(r);
        if (!std::isfinite(r.loss) || !std::isfinite(r.grad_norm) || r.loss > kDivergenceLoss) {
            rec.diverged = true;
            rec.diagnostic = "loss " + std::to_string(r.loss) + " at iteration " + std::to_string(iter);
        }
    };

    if (opts.record_initial) record(0);
    for (int k = 1; k <= opts.iterations && !rec.diverged; ++k) {
        try {
            step(st, obj, stream->next(), cfg, &fallback);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NonFiniteGradient) throw;
            rec.diverged = true;
            rec.diagnostic = std::string(e.what()) + " at iteration " + std::to_string(k);
            break;
        }
        if (!st.w.allFinite()) {
            rec.diverged = true;
            rec.diagnostic = "non-finite iterate at iteration " + std::to_string(k);
            break;
        }
        if (k % opts.checkpoint_every == 0 || k == opts.iterations) record(k);
    }
    rec.total_wall_ns = opts.record_wall_time ? elapsed() : 0;
    return rec;
}

}  // namespace ska::opt
