#pragma once

// Step rules and the trial loop for SGD, Nesterov, Adam and SKA-SGD.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ska/gram_solver.hpp"
#include "ska/krylov_basis.hpp"
#include "ska/numerics.hpp"
#include "ska/problems.hpp"

namespace ska::opt {

enum class OptimizerKind { Sgd, Nesterov, Adam, Ska };
enum class Family { Quadratic, Logistic };

std::string_view to_string(OptimizerKind kind) noexcept;
std::string_view to_string(Family family) noexcept;

struct OptConfig {
    OptimizerKind kind = OptimizerKind::Sgd;
    double eta = 0.1;
    // When set, the step size used is eta / L with L the objective's
    // Lipschitz constant of the gradient.
    bool eta_per_lipschitz = false;
    double beta = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    int batch_size = 64;

    int s = 16;
    int m_sweeps = 2;
    double gram_reg = 1e-4;
    krylov::ChebyshevParams cheb;
    krylov::BasisSource basis_source = krylov::BasisSource::History;
    krylov::BasisKind basis_kind = krylov::BasisKind::Chebyshev;
    gram::SweepMode sweep_mode = gram::SweepMode::GaussSeidel;
    double delta_perturb = krylov::kDefaultPerturbation;

    bool use_nesterov = false;  // Ska only: momentum on the projected gradient
    bool use_jacobi = false;    // Sgd, Nesterov, Ska
    bool lookahead = false;     // Ska with use_nesterov: gradient taken at w + beta v

    void validate() const;
};

/// Optimizer names accepted by named_optimizer.
const std::vector<std::string>& optimizer_names();

/// Defaults per family:
///   sgd                      eta 0.1, batch 64 / 128
///   nesterov                 as sgd with beta 0.9
///   jacobi-nesterov          nesterov with Jacobi scaling
///   adam                     eta 1e-3, betas 0.9 / 0.999, eps 1e-8
///   ska-basic                history buffer, monomial basis
///   ska-chebyshev            Chebyshev basis
///   ska-chebyshev-nesterov   plus momentum on the projected gradient
///   ska-ultimate             plus Jacobi scaling
/// SKA variants use eta 0.1, batch 32 / 64, s 16, m 2, gram_reg 1e-4,
/// [a, b] = [0.01, 10], beta 0.9. On quadratics, step sizes of methods without
/// Jacobi or Adam scaling are in units of 1/L. On logistic problems the
/// Chebyshev variants take columns from gradient perturbation.
OptConfig named_optimizer(std::string_view name, Family family);

/// One draw of the stochastic gradient oracle: mini-batch indices for
/// logistic problems, an additive noise vector for quadratics.
struct Batch {
    std::vector<std::size_t> indices;
    Vector noise;
};

class BatchStream {
public:
    virtual ~BatchStream() = default;
    virtual Batch next() = 0;
};

class Objective {
public:
    virtual ~Objective() = default;

    [[nodiscard]] virtual Family family() const = 0;
    [[nodiscard]] virtual Eigen::Index dim() const = 0;
    [[nodiscard]] virtual std::unique_ptr<BatchStream> batches(int batch_size, std::uint64_t seed) const = 0;
    /// Deterministic given (w, batch).
    [[nodiscard]] virtual Vector gradient(const Vector& w, const Batch& batch) const = 0;
    [[nodiscard]] virtual Vector full_gradient(const Vector& w) const = 0;
    [[nodiscard]] virtual double loss(const Vector& w) const = 0;
    /// ||w - w*||, NaN when the optimum is unknown.
    [[nodiscard]] virtual double err_norm(const Vector& w) const = 0;
    /// f(w) - f*, NaN when f* is unknown.
    [[nodiscard]] virtual double obj_gap(const Vector& w) const = 0;
    [[nodiscard]] virtual Vector jacobi() const = 0;
    [[nodiscard]] virtual double lipschitz() const = 0;
    [[nodiscard]] virtual Vector initial_point(RandomSource& rng) const = 0;
};

class QuadraticObjective final : public Objective {
public:
    explicit QuadraticObjective(std::shared_ptr<const problems::QuadraticProblem> p);

    [[nodiscard]] Family family() const override { return Family::Quadratic; }
    [[nodiscard]] Eigen::Index dim() const override { return p_->dim(); }
    /// Batch size is ignored; each batch carries N(0, sigma^2 I) noise.
    [[nodiscard]] std::unique_ptr<BatchStream> batches(int batch_size, std::uint64_t seed) const override;
    [[nodiscard]] Vector gradient(const Vector& w, const Batch& batch) const override;
    [[nodiscard]] Vector full_gradient(const Vector& w) const override;
    [[nodiscard]] double loss(const Vector& w) const override;
    [[nodiscard]] double err_norm(const Vector& w) const override;
    [[nodiscard]] double obj_gap(const Vector& w) const override;
    [[nodiscard]] Vector jacobi() const override;
    [[nodiscard]] double lipschitz() const override;
    /// x* + u / ||u||, u standard normal.
    [[nodiscard]] Vector initial_point(RandomSource& rng) const override;

    [[nodiscard]] const problems::QuadraticProblem& problem() const { return *p_; }

private:
    std::shared_ptr<const problems::QuadraticProblem> p_;
};

class LogisticObjective final : public Objective {
public:
    explicit LogisticObjective(std::shared_ptr<const problems::LogisticProblem> p);

    [[nodiscard]] Family family() const override { return Family::Logistic; }
    [[nodiscard]] Eigen::Index dim() const override { return p_->dim(); }
    [[nodiscard]] std::unique_ptr<BatchStream> batches(int batch_size, std::uint64_t seed) const override;
    [[nodiscard]] Vector gradient(const Vector& w, const Batch& batch) const override;
    [[nodiscard]] Vector full_gradient(const Vector& w) const override;
    [[nodiscard]] double loss(const Vector& w) const override;
    [[nodiscard]] double err_norm(const Vector& w) const override;
    [[nodiscard]] double obj_gap(const Vector& w) const override;
    [[nodiscard]] Vector jacobi() const override;
    /// ||X||_2^2 / (4n) + lambda
    [[nodiscard]] double lipschitz() const override;
    /// Zero.
    [[nodiscard]] Vector initial_point(RandomSource& rng) const override;

    [[nodiscard]] const problems::LogisticProblem& problem() const { return *p_; }

private:
    std::shared_ptr<const problems::LogisticProblem> p_;
    Vector jacobi_;
    double lipschitz_ = 0.0;
};

struct OptimizerState {
    Vector w;
    Vector v;       // velocity
    Vector adam_m;
    Vector adam_v;
    std::int64_t t = 0;
    std::optional<krylov::GradientBuffer> buf;
    std::optional<Vector> d_inv;
};

/// Zeroed state at w0; allocates the history buffer and Jacobi scaling as cfg needs.
OptimizerState init_state(const Objective& obj, const OptConfig& cfg, const Vector& w0);

/// Returns cfg with eta converted to an absolute step size.
OptConfig resolve_step_size(const OptConfig& cfg, const Objective& obj, double eta_multiplier = 1.0);

// The step functions read cfg.eta as an absolute step size. Each throws
// NonFiniteGradient if the oracle returns a non-finite value.

/// w <- w - eta (D) g
void sgd_step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg);
/// v <- beta v - eta (D) grad(w + beta v); w <- w + v
void nesterov_step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg);
/// Bias-corrected Adam.
void adam_step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg);
/// g (Jacobi-scaled if set) -> columns -> basis Z -> alpha from the streaming
/// solve of (Z^T Z + lambda I) alpha = Z^T g -> pg = Z alpha -> update.
/// fallback supplies replacement columns when a basis column vanishes.
gram::GramSolveResult ska_step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg,
                               RandomSource* fallback = nullptr);

/// Dispatches on cfg.kind.
void step(OptimizerState& st, const Objective& obj, const Batch& batch, const OptConfig& cfg,
          RandomSource* fallback = nullptr);

struct StepRecord {
    std::int64_t iter = 0;
    double loss = 0.0;
    double grad_norm = 0.0;  // full-gradient norm
    double err_norm = 0.0;
    double obj_gap = 0.0;
    std::int64_t wall_ns = 0;  // elapsed since the trial started; 0 unless timing is on
};

struct TrialRecord {
    std::string optimizer;
    std::uint64_t seed = 0;
    std::vector<StepRecord> steps;
    bool diverged = false;
    std::string diagnostic;
    std::int64_t total_wall_ns = 0;
};

inline constexpr double kDivergenceLoss = 1e12;

struct RunOptions {
    int iterations = 500;
    int checkpoint_every = 10;
    bool record_initial = true;     // adds a record at iteration 0
    bool record_wall_time = false;  // off keeps outputs byte-reproducible
    std::uint64_t seed = 0;         // batch stream and fallback stream
    std::optional<std::uint64_t> init_seed;  // starting point; defaults to a mix of seed
    std::string name;
};

/// Runs T steps, recording at every checkpoint_every-th iteration and at T.
/// A non-finite value or a loss above 1e12 stops the trial and marks it
/// diverged; records collected so far are kept.
TrialRecord run(const Objective& obj, const OptConfig& cfg, const RunOptions& opts);

}  // namespace ska::opt
