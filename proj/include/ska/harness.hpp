#pragma once

// Multi-seed experiment runner: config parsing, presets, trial execution,
// aggregation, CSV output and SVG plots.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ska/optimizers.hpp"

namespace ska::harness {

enum class Spectrum { LogSpaced, Clustered };

struct ProblemSpec {
    opt::Family family = opt::Family::Quadratic;
    Spectrum spectrum = Spectrum::LogSpaced;  // quadratics only
    std::vector<int> dims{100};
    std::vector<double> kappas{1e4};          // ignored for clustered spectra
    double noise_sigma = 1.0;                 // quadratics
    int samples = 5000;                       // logistic
    std::optional<double> label_noise;        // logistic; default 0.1 std of margins
    double lambda_scale = problems::kDefaultLambdaScale;
};

struct OptimizerEntry {
    std::string name;  // label in outputs
    opt::OptConfig cfg;
};

struct ExperimentConfig {
    std::string name = "experiment";
    ProblemSpec problem;
    std::vector<OptimizerEntry> optimizers;
    int iterations = 500;
    int checkpoint_every = 10;
    int n_trials = 5;
    std::uint64_t master_seed = 1;
    std::filesystem::path output_dir = "out";
    double eta_multiplier = 1.0;
    bool record_initial = true;
    bool record_wall_time = false;
    std::optional<int> window_start;  // late-stage window for the summary std column
    int jobs = 0;                     // 0 = hardware concurrency

    void validate() const;
};

/// Keys (all optional except problem and optimizers):
///   name, iterations, checkpoint_every, trials, seed, output, eta_multiplier,
///   record_initial, record_wall_time, window_start, jobs
///   problem: family (quadratic|logistic), spectrum (logspace|clustered), d (int
///            or list), kappa (number or list), noise_sigma, samples,
///            label_noise, lambda_scale
///   optimizers: list of names, or objects {name, base, overrides}; overrides
///            accept the OptConfig fields by name plus cheb_a, cheb_b.
/// Unknown keys raise Config errors.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

const std::vector<std::string>& preset_names();
/// JSON text of a shipped preset; throws Config for unknown names.
std::string_view preset_json(std::string_view name);
ExperimentConfig preset(std::string_view name);

/// One (d, kappa) combination.
struct Variant {
    int d = 0;
    double kappa = 1.0;
    std::string label;  // e.g. d100-k1e+08
};

std::vector<Variant> expand_variants(const ProblemSpec& spec);

struct ProblemInstance {
    std::shared_ptr<const opt::Objective> objective;
    std::uint64_t seed = 0;  // seed that produced it after any retries
};

/// Problem seed = mix(master, {variant, trial}); generation failures on
/// degenerate draws are retried with mix(seed, {attempt}) up to 5 times.
ProblemInstance make_problem(const ExperimentConfig& cfg, std::size_t variant, std::size_t trial);

/// Seed for the batch stream of one run: mix(master, {variant, optimizer, trial}).
std::uint64_t run_seed(const ExperimentConfig& cfg, std::size_t variant, std::size_t optimizer, std::size_t trial);

/// Runs one cell from scratch. The starting point is seeded from the problem
/// seed, so every optimizer of a trial starts at the same point.
opt::TrialRecord run_trial(const ExperimentConfig& cfg, std::size_t variant, std::size_t optimizer,
                           std::size_t trial);

// ---------------------------------------------------------------- statistics

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population (divide by n)
    double min = 0.0;
    double max = 0.0;
    std::size_t n = 0;
};

/// Two-pass mean and population std; NaNs for an empty sample.
MeanStd describe(const std::vector<double>& xs);

/// Smallest checkpoint iteration whose loss drop reaches 95% of the total drop.
/// Returns the last iteration when the trace makes no progress. Needs two records.
std::int64_t iterations_to_95(const std::vector<opt::StepRecord>& trace);

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> m = {"loss", "grad_norm", "err_norm", "obj_gap"};
    return m;
}
double metric_value(const opt::StepRecord& r, std::string_view metric);

struct Series {
    std::string optimizer;
    std::string metric;
    std::vector<std::int64_t> iters;
    std::vector<MeanStd> stats;
};

struct OptimizerSummary {
    std::string optimizer;
    std::string final_metric;
    int n_trials = 0;
    int diverged = 0;
    MeanStd final_value;
    MeanStd iters_to_95;
    double window_std = 0.0;   // mean over window checkpoints of the trial std
    double window_mean = 0.0;  // mean over window checkpoints of the trial mean
};

struct CellAggregate {
    std::string experiment;
    std::vector<Series> series;
    std::vector<OptimizerSummary> summary;
};

/// trials[o][t]; statistics cover non-diverged trials only.
CellAggregate aggregate(const std::string& experiment, const std::vector<std::string>& optimizers,
                        const std::vector<std::vector<opt::TrialRecord>>& trials, opt::Family family,
                        std::optional<int> window_start);

// -------------------------------------------------------------------- output

/// Shortest representation that parses back to the same double; "nan",
/// "inf", "-inf" for non-finite values.
std::string format_double(double x);
/// RFC 4180 quoting when the field has a comma, quote, CR or LF.
std::string csv_field(std::string_view s);

inline constexpr std::string_view kTrialCsvHeader =
    "experiment,optimizer,seed,iter,loss,grad_norm,err_norm,obj_gap,wall_ns";

void write_trial_csv(std::ostream& out, const std::string& experiment, const std::vector<opt::TrialRecord>& records);
void write_trial_csv(const std::filesystem::path& path, const std::string& experiment,
                     const std::vector<opt::TrialRecord>& records);
void write_aggregate_csv(const std::filesystem::path& path, const CellAggregate& agg);
void write_summary_csv(const std::filesystem::path& path, const CellAggregate& agg);

/// Log-scale y mapping: value hi maps to pixel top, lo to pixel bottom.
struct LogAxis {
    double lo = 1e-3;
    double hi = 1.0;
    double top = 0.0;
    double bottom = 100.0;

    [[nodiscard]] double pixel(double value) const;
};

/// Writes path (SVG) and path with extension .dat (columns: iter, then
/// mean and std per optimizer). Non-positive and NaN means are left out of
/// the polylines; band edges are clamped to the axis range.
void emit_plot(const CellAggregate& agg, std::string_view metric, const std::filesystem::path& path);

// ----------------------------------------------------------------------- run

struct ExperimentResult {
    std::vector<Variant> variants;
    std::vector<CellAggregate> cells;                               // per variant
    std::vector<std::vector<std::vector<opt::TrialRecord>>> trials;  // [variant][optimizer][trial]
};

/// Runs every (variant, optimizer, trial), merging by index. When write is
/// set, each variant's files go to output_dir/<label>/ once its trials finish:
/// trials/<optimizer>-t<k>.csv, aggregate.csv, summary.csv, <metric>.svg/.dat.
/// Progress lines go to log when non-null.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write = true, std::ostream* log = nullptr);

/// Runs fn(i) for i in [0, n) on up to jobs threads; rethrows the first exception.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ska::harness
