#include "ska/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ska/error.hpp"

namespace ska::harness {

using json = nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::Config, what); }

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            config_error("unknown key '" + key + "' in " + where);
    }
}

template <class T>
T get_as(const json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        config_error("key '" + key + "' has the wrong type");
    }
}

double get_number(const json& j, const std::string& key) {
    if (!j.is_number()) config_error("key '" + key + "' must be a number");
    return j.get<double>();
}

int get_int(const json& j, const std::string& key) {
    if (!j.is_number_integer()) config_error("key '" + key + "' must be an integer");
    return j.get<int>();
}

bool get_bool(const json& j, const std::string& key) {
    if (!j.is_boolean()) config_error("key '" + key + "' must be a boolean");
    return j.get<bool>();
}

std::string get_string(const json& j, const std::string& key) {
    if (!j.is_string()) config_error("key '" + key + "' must be a string");
    return j.get<std::string>();
}

template <class T, class F>
std::vector<T> scalar_or_list(const json& j, const std::string& key, F one) {
    std::vector<T> out;
    if (j.is_array()) {
        for (const auto& e : j) out.push_back(one(e, key));
    } else {
        out.push_back(one(j, key));
    }
    if (out.empty()) config_error("key '" + key + "' must not be empty");
    return out;
}

void apply_overrides(opt::OptConfig& c, const json& ov, const std::string& where) {
    if (!ov.is_object()) config_error("overrides of " + where + " must be an object");
    for (const auto& [key, v] : ov.items()) {
        if (key == "eta") c.eta = get_number(v, key);
        else if (key == "eta_per_lipschitz") c.eta_per_lipschitz = get_bool(v, key);
        else if (key == "beta") c.beta = get_number(v, key);
        else if (key == "beta2") c.beta2 = get_number(v, key);
        else if (key == "eps_adam") c.eps_adam = get_number(v, key);
        else if (key == "batch_size") c.batch_size = get_int(v, key);
        else if (key == "s") c.s = get_int(v, key);
        else if (key == "m_sweeps") c.m_sweeps = get_int(v, key);
        else if (key == "gram_reg") c.gram_reg = get_number(v, key);
        else if (key == "cheb_a") c.cheb.a = get_number(v, key);
        else if (key == "cheb_b") c.cheb.b = get_number(v, key);
        else if (key == "delta_perturb") c.delta_perturb = get_number(v, key);
        else if (key == "use_nesterov") c.use_nesterov = get_bool(v, key);
        else if (key == "use_jacobi") c.use_jacobi = get_bool(v, key);
        else if (key == "lookahead") c.lookahead = get_bool(v, key);
        else if (key == "basis_source") {
            const std::string s = get_string(v, key);
            if (s == "history") c.basis_source = krylov::BasisSource::History;
            else if (s == "perturbation") c.basis_source = krylov::BasisSource::Perturbation;
            else config_error("basis_source must be history or perturbation");
        } else if (key == "basis_kind") {
            const std::string s = get_string(v, key);
            if (s == "monomial") c.basis_kind = krylov::BasisKind::Monomial;
            else if (s == "chebyshev") c.basis_kind = krylov::BasisKind::Chebyshev;
            else config_error("basis_kind must be monomial or chebyshev");
        } else if (key == "sweep_mode") {
            const std::string s = get_string(v, key);
            if (s == "gauss-seidel") c.sweep_mode = gram::SweepMode::GaussSeidel;
            else if (s == "verbatim") c.sweep_mode = gram::SweepMode::Verbatim;
            else config_error("sweep_mode must be gauss-seidel or verbatim");
        } else {
            config_error("unknown key '" + key + "' in overrides of " + where);
        }
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    if (n_trials < 1) config_error("trials must be >= 1");
    if (iterations < 1) config_error("iterations must be >= 1");
    if (checkpoint_every < 1) config_error("checkpoint_every must be >= 1");
    if (!(eta_multiplier > 0.0)) config_error("eta_multiplier must be > 0");
    if (jobs < 0) config_error("jobs must be >= 0");
    if (problem.dims.empty()) config_error("problem.d must not be empty");
    for (int d : problem.dims)
        if (d < 2) config_error("problem.d entries must be >= 2");
    if (problem.kappas.empty()) config_error("problem.kappa must not be empty");
    for (double k : problem.kappas)
        if (!(k >= 1.0)) config_error("problem.kappa entries must be >= 1");
    if (!(problem.noise_sigma >= 0.0)) config_error("problem.noise_sigma must be >= 0");
    if (problem.family == opt::Family::Logistic && problem.samples < 2) config_error("problem.samples must be >= 2");
    if (optimizers.empty()) config_error("optimizers must not be empty");
    std::set<std::string> seen;
    for (const auto& o : optimizers) {
        if (o.name.empty()) config_error("optimizer names must not be empty");
        if (!seen.insert(o.name).second) config_error("duplicate optimizer name '" + o.name + "'");
        o.cfg.validate();
    }
}

ExperimentConfig parse_config(std::string_view text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        config_error(std::string("invalid JSON: ") + e.what());
    }
    if (!root.is_object()) config_error("config must be a JSON object");
    reject_unknown(root,
                   {"name", "problem", "optimizers", "iterations", "checkpoint_every", "trials", "seed", "output",
                    "eta_multiplier", "record_initial", "record_wall_time", "window_start", "jobs"},
                   "config");
    if (!root.contains("problem")) config_error("missing key 'problem'");
    if (!root.contains("optimizers")) config_error("missing key 'optimizers'");

    ExperimentConfig cfg;
    if (root.contains("name")) cfg.name = get_string(root["name"], "name");
    if (root.contains("iterations")) cfg.iterations = get_int(root["iterations"], "iterations");
    if (root.contains("checkpoint_every")) cfg.checkpoint_every = get_int(root["checkpoint_every"], "checkpoint_every");
    if (root.contains("trials")) cfg.n_trials = get_int(root["trials"], "trials");
    if (root.contains("seed")) {
        if (!root["seed"].is_number_unsigned()) config_error("key 'seed' must be a non-negative integer");
        cfg.master_seed = root["seed"].get<std::uint64_t>();
    }
    if (root.contains("output")) cfg.output_dir = get_string(root["output"], "output");
    if (root.contains("eta_multiplier")) cfg.eta_multiplier = get_number(root["eta_multiplier"], "eta_multiplier");
    if (root.contains("record_initial")) cfg.record_initial = get_bool(root["record_initial"], "record_initial");
    if (root.contains("record_wall_time"))
        cfg.record_wall_time = get_bool(root["record_wall_time"], "record_wall_time");
    if (root.contains("window_start")) cfg.window_start = get_int(root["window_start"], "window_start");
    if (root.contains("jobs")) cfg.jobs = get_int(root["jobs"], "jobs");

    const json& pj = root["problem"];
    if (!pj.is_object()) config_error("'problem' must be an object");
    reject_unknown(pj,
                   {"family", "spectrum", "d", "kappa", "noise_sigma", "samples", "label_noise", "lambda_scale"},
                   "problem");
    ProblemSpec& p = cfg.problem;
    if (pj.contains("family")) {
        const std::string f = get_string(pj["family"], "family");
        if (f == "quadratic") p.family = opt::Family::Quadratic;
        else if (f == "logistic") p.family = opt::Family::Logistic;
        else config_error("problem.family must be quadratic or logistic");
    }
    if (pj.contains("spectrum")) {
        const std::string s = get_string(pj["spectrum"], "spectrum");
        if (s == "logspace") p.spectrum = Spectrum::LogSpaced;
        else if (s == "clustered") p.spectrum = Spectrum::Clustered;
        else config_error("problem.spectrum must be logspace or clustered");
    }
    if (pj.contains("d")) p.dims = scalar_or_list<int>(pj["d"], "d", get_int);
    if (pj.contains("kappa")) p.kappas = scalar_or_list<double>(pj["kappa"], "kappa", get_number);
    if (pj.contains("noise_sigma")) p.noise_sigma = get_number(pj["noise_sigma"], "noise_sigma");
    if (pj.contains("samples")) p.samples = get_int(pj["samples"], "samples");
    if (pj.contains("label_noise")) p.label_noise = get_number(pj["label_noise"], "label_noise");
    if (pj.contains("lambda_scale")) p.lambda_scale = get_number(pj["lambda_scale"], "lambda_scale");

    const json& oj = root["optimizers"];
    if (!oj.is_array()) config_error("'optimizers' must be a list");
    for (const auto& e : oj) {
        OptimizerEntry entry;
        if (e.is_string()) {
            entry.name = e.get<std::string>();
            entry.cfg = opt::named_optimizer(entry.name, p.family);
        } else if (e.is_object()) {
            reject_unknown(e, {"name", "base", "overrides"}, "optimizer entry");
            if (!e.contains("name")) config_error("optimizer entry without 'name'");
            entry.name = get_string(e["name"], "name");
            const std::string base = e.contains("base") ? get_string(e["base"], "base") : entry.name;
            entry.cfg = opt::named_optimizer(base, p.family);
            if (e.contains("overrides")) apply_overrides(entry.cfg, e["overrides"], entry.name);
        } else {
            config_error("optimizer entries must be names or objects");
        }
        cfg.optimizers.push_back(std::move(entry));
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ------------------------------------------------------------------- presets

namespace {

struct PresetText {
    std::string_view name;
    std::string_view json;
};

constexpr PresetText kPresets[] = {
    {"quadratic-k1e4", R"({
  "name": "quadratic-k1e4",
  "problem": {"family": "quadratic", "spectrum": "logspace", "d": 500, "kappa": 1e4, "noise_sigma": 1.0},
  "optimizers": ["sgd", "adam", "ska-basic", "ska-ultimate"],
  "iterations": 500,
  "checkpoint_every": 10,
  "trials": 5,
  "seed": 1,
  "output": "out/quadratic-k1e4"
}
)"},
    {"quadratic-k1e8-ultimate", R"({
  "name": "quadratic-k1e8-ultimate",
  "problem": {"family": "quadratic", "spectrum": "logspace", "d": 100, "kappa": 1e8, "noise_sigma": 1.0},
  "optimizers": ["sgd", "ska-basic", "ska-chebyshev-nesterov", "jacobi-nesterov", "ska-ultimate"],
  "iterations": 500,
  "checkpoint_every": 10,
  "trials": 5,
  "seed": 1,
  "output": "out/quadratic-k1e8-ultimate"
}
)"},
    {"krylov-dim-ablation", R"({
  "name": "krylov-dim-ablation",
  "problem": {"family": "quadratic", "spectrum": "logspace", "d": 100, "kappa": [1e5, 1e8], "noise_sigma": 1.0},
  "optimizers": [
    "sgd",
    {"name": "ska-s2", "base": "ska-ultimate", "overrides": {"s": 2}},
    {"name": "ska-s4", "base": "ska-ultimate", "overrides": {"s": 4}},
    {"name": "ska-s8", "base": "ska-ultimate", "overrides": {"s": 8}}
  ],
  "iterations": 500,
  "checkpoint_every": 10,
  "trials": 5,
  "seed": 1,
  "output": "out/krylov-dim-ablation"
}
)"},
    {"logistic-sweep", R"({
  "name": "logistic-sweep",
  "problem": {"family": "logistic", "d": [50, 100, 250, 500], "kappa": [10, 100, 1000, 10000], "samples": 5000},
  "optimizers": ["sgd", "ska-ultimate"],
  "iterations": 200,
  "checkpoint_every": 10,
  "trials": 10,
  "seed": 1,
  "output": "out/logistic-sweep"
}
)"},
    {"late-stage-clustered", R"({
  "name": "late-stage-clustered",
  "problem": {"family": "quadratic", "spectrum": "clustered", "d": 100, "noise_sigma": 0.5},
  "optimizers": ["sgd", "ska-basic"],
  "iterations": 2000,
  "checkpoint_every": 10,
  "trials": 10,
  "seed": 1,
  "window_start": 1800,
  "output": "out/late-stage-clustered"
}
)"},
};

}  // namespace

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& p : kPresets) v.emplace_back(p.name);
        return v;
    }();
    return names;
}

std::string_view preset_json(std::string_view name) {
    for (const auto& p : kPresets)
        if (p.name == name) return p.json;
    config_error("unknown preset '" + std::string(name) + "'");
}

ExperimentConfig preset(std::string_view name) { return parse_config(preset_json(name)); }

// ------------------------------------------------------------------ variants

std::vector<Variant> expand_variants(const ProblemSpec& spec) {
    std::vector<Variant> out;
    const bool clustered = spec.family == opt::Family::Quadratic && spec.spectrum == Spectrum::Clustered;
    for (int d : spec.dims) {
        if (clustered) {
            out.push_back({d, 10.0, "d" + std::to_string(d) + "-clustered"});
            continue;
        }
        for (double k : spec.kappas) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%g", k);
            out.push_back({d, k, "d" + std::to_string(d) + "-k" + buf});
        }
    }
    return out;
}

ProblemInstance make_problem(const ExperimentConfig& cfg, std::size_t variant, std::size_t trial) {
    const auto variants = expand_variants(cfg.problem);
    if (variant >= variants.size()) throw Error(ErrorCode::IndexOutOfRange, "make_problem: variant index");
    const Variant& v = variants[variant];
    const ProblemSpec& p = cfg.problem;
    const std::uint64_t base = mix_seed(cfg.master_seed, {variant, trial});

    constexpr int kAttempts = 5;
    for (int attempt = 0;; ++attempt) {
        const std::uint64_t seed = attempt == 0 ? base : mix_seed(base, {static_cast<std::uint64_t>(attempt)});
        RandomSource rng(seed);
        try {
            ProblemInstance inst;
            inst.seed = seed;
            if (p.family == opt::Family::Quadratic) {
                auto q = std::make_shared<problems::QuadraticProblem>(
                    p.spectrum == Spectrum::Clustered ? problems::gen_clustered(v.d, p.noise_sigma, rng)
                                                      : problems::gen_quadratic(v.d, v.kappa, p.noise_sigma, rng));
                inst.objective = std::make_shared<opt::QuadraticObjective>(std::move(q));
            } else {
                auto l = std::make_shared<problems::LogisticProblem>(
                    problems::gen_logistic(p.samples, v.d, v.kappa, p.label_noise, p.lambda_scale, rng));
                inst.objective = std::make_shared<opt::LogisticObjective>(std::move(l));
            }
            return inst;
        } catch (const Error& e) {
            const bool retry = e.code() == ErrorCode::DegenerateLabels || e.code() == ErrorCode::RankDeficient ||
                               e.code() == ErrorCode::NotSPD;
            if (!retry || attempt + 1 >= kAttempts) throw;
        }
    }
}

std::uint64_t run_seed(const ExperimentConfig& cfg, std::size_t variant, std::size_t optimizer, std::size_t trial) {
    return mix_seed(cfg.master_seed, {variant, optimizer, trial});
}

namespace {

opt::TrialRecord run_on(const ExperimentConfig& cfg, const ProblemInstance& inst, std::size_t variant,
                        std::size_t optimizer, std::size_t trial) {
    const OptimizerEntry& entry = cfg.optimizers.at(optimizer);
    opt::OptConfig oc = entry.cfg;
    oc.eta *= cfg.eta_multiplier;
    opt::RunOptions ro;
    ro.iterations = cfg.iterations;
    ro.checkpoint_every = cfg.checkpoint_every;
    ro.record_initial = cfg.record_initial;
    ro.record_wall_time = cfg.record_wall_time;
    ro.seed = run_seed(cfg, variant, optimizer, trial);
    ro.init_seed = mix_seed(inst.seed, {0x1417});
    ro.name = entry.name;
    return opt::run(*inst.objective, oc, ro);
}

}  // namespace

opt::TrialRecord run_trial(const ExperimentConfig& cfg, std::size_t variant, std::size_t optimizer,
                           std::size_t trial) {
    return run_on(cfg, make_problem(cfg, variant, trial), variant, optimizer, trial);
}

// ---------------------------------------------------------------- statistics

MeanStd describe(const std::vector<double>& xs) {
    MeanStd r;
    r.n = xs.size();
    if (xs.empty()) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        r.mean = r.std = r.min = r.max = nan;
        return r;
    }
    double sum = 0.0;
    r.min = xs.front();
    r.max = xs.front();
    for (double x : xs) {
        sum += x;
        r.min = std::min(r.min, x);
        r.max = std::max(r.max, x);
    }
    r.mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size()));
    return r;
}

std::int64_t iterations_to_95(const std::vector<opt::StepRecord>& trace) {
    if (trace.size() < 2) throw Error(ErrorCode::InvalidArgument, "iterations_to_95: need at least two records");
    const double f0 = trace.front().loss;
    const double total = f0 - trace.back().loss;
    if (!(total > 0.0)) return trace.back().iter;
    for (const auto& r : trace)
        if (f0 - r.loss >= 0.95 * total) return r.iter;
    return trace.back().iter;
}

double metric_value(const opt::StepRecord& r, std::string_view metric) {
    if (metric == "loss") return r.loss;
    if (metric == "grad_norm") return r.grad_norm;
    if (metric == "err_norm") return r.err_norm;
    if (metric == "obj_gap") return r.obj_gap;
    throw Error(ErrorCode::InvalidArgument, "unknown metric '" + std::string(metric) + "'");
}

namespace {

std::vector<std::string> metrics_for(opt::Family family) {
    if (family == opt::Family::Logistic) return {"loss", "grad_norm"};
    return metric_names();
}

}  // namespace

CellAggregate aggregate(const std::string& experiment, const std::vector<std::string>& optimizers,
                        const std::vector<std::vector<opt::TrialRecord>>& trials, opt::Family family,
                        std::optional<int> window_start) {
    if (optimizers.size() != trials.size()) throw Error(ErrorCode::DimMismatch, "aggregate: optimizer count");
    CellAggregate agg;
    agg.experiment = experiment;
    const std::string final_metric = family == opt::Family::Quadratic ? "obj_gap" : "loss";

    for (std::size_t o = 0; o < optimizers.size(); ++o) {
        std::vector<const opt::TrialRecord*> ok;
        int diverged = 0;
        for (const auto& t : trials[o]) {
            if (t.diverged) ++diverged;
            else ok.push_back(&t);
        }

        // Checkpoints shared by every surviving trial.
        std::vector<std::int64_t> iters;
        if (!ok.empty()) {
            for (const auto& r : ok.front()->steps) iters.push_back(r.iter);
            for (const auto* t : ok) {
                std::vector<std::int64_t> mine;
                for (const auto& r : t->steps) mine.push_back(r.iter);
                std::vector<std::int64_t> common;
                std::set_intersection(iters.begin(), iters.end(), mine.begin(), mine.end(),
                                      std::back_inserter(common));
                iters = std::move(common);
            }
        }

        auto value_at = [](const opt::TrialRecord& t, std::int64_t iter, std::string_view metric) {
            auto it = std::lower_bound(t.steps.begin(), t.steps.end(), iter,
                                       [](const opt::StepRecord& r, std::int64_t i) { return r.iter < i; });
            return metric_value(*it, metric);
        };

        for (const auto& metric : metrics_for(family)) {
            Series s;
            s.optimizer = optimizers[o];
            s.metric = metric;
            s.iters = iters;
            for (std::int64_t it : iters) {
                std::vector<double> xs;
                for (const auto* t : ok) xs.push_back(value_at(*t, it, metric));
                s.stats.push_back(describe(xs));
            }
            agg.series.push_back(std::move(s));
        }

        OptimizerSummary sum;
        sum.optimizer = optimizers[o];
        sum.final_metric = final_metric;
        sum.n_trials = static_cast<int>(ok.size());
        sum.diverged = diverged;
        std::vector<double> finals;
        std::vector<double> i95;
        for (const auto* t : ok) {
            if (t->steps.empty()) continue;
            finals.push_back(metric_value(t->steps.back(), final_metric));
            if (t->steps.size() >= 2) i95.push_back(static_cast<double>(iterations_to_95(t->steps)));
        }
        sum.final_value = describe(finals);
        sum.iters_to_95 = describe(i95);
        if (window_start) {
            std::vector<double> stds;
            std::vector<double> means;
            for (std::int64_t it : iters) {
                if (it < *window_start) continue;
                std::vector<double> xs;
                for (const auto* t : ok) xs.push_back(value_at(*t, it, final_metric));
                const MeanStd ms = describe(xs);
                stds.push_back(ms.std);
                means.push_back(ms.mean);
            }
            sum.window_std = describe(stds).mean;
            sum.window_mean = describe(means).mean;
        } else {
            sum.window_std = sum.window_mean = std::numeric_limits<double>::quiet_NaN();
        }
        agg.summary.push_back(sum);
    }
    return agg;
}

// -------------------------------------------------------------------- output

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
    out.close();
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace

void write_trial_csv(std::ostream& out, const std::string& experiment, const std::vector<opt::TrialRecord>& records) {
    out << kTrialCsvHeader << '\n';
    for (const auto& t : records) {
        for (const auto& r : t.steps) {
            out << csv_field(experiment) << ',' << csv_field(t.optimizer) << ',' << t.seed << ',' << r.iter << ','
                << format_double(r.loss) << ',' << format_double(r.grad_norm) << ',' << format_double(r.err_norm)
                << ',' << format_double(r.obj_gap) << ',' << r.wall_ns << '\n';
        }
    }
}

void write_trial_csv(const std::filesystem::path& path, const std::string& experiment,
                     const std::vector<opt::TrialRecord>& records) {
    auto out = open_out(path);
    write_trial_csv(out, experiment, records);
    close_out(out, path);
}

void write_aggregate_csv(const std::filesystem::path& path, const CellAggregate& agg) {
    auto out = open_out(path);
    out << "# std is the population standard deviation (divide by n) over non-diverged trials\n";
    out << "experiment,optimizer,iter,metric,mean,std,min,max,n\n";
    for (const auto& s : agg.series) {
        for (std::size_t k = 0; k < s.iters.size(); ++k) {
            const MeanStd& m = s.stats[k];
            out << csv_field(agg.experiment) << ',' << csv_field(s.optimizer) << ',' << s.iters[k] << ','
                << s.metric << ',' << format_double(m.mean) << ',' << format_double(m.std) << ','
                << format_double(m.min) << ',' << format_double(m.max) << ',' << m.n << '\n';
        }
    }
    close_out(out, path);
}

void write_summary_csv(const std::filesystem::path& path, const CellAggregate& agg) {
    auto out = open_out(path);
    out << "# std is the population standard deviation (divide by n) over non-diverged trials\n";
    out << "experiment,optimizer,final_metric,n,diverged,final_mean,final_std,iters_to_95_mean,iters_to_95_std,"
           "window_std,window_mean\n";
    for (const auto& s : agg.summary) {
        out << csv_field(agg.experiment) << ',' << csv_field(s.optimizer) << ',' << s.final_metric << ','
            << s.n_trials << ',' << s.diverged << ',' << format_double(s.final_value.mean) << ','
            << format_double(s.final_value.std) << ',' << format_double(s.iters_to_95.mean) << ','
            << format_double(s.iters_to_95.std) << ',' << format_double(s.window_std) << ','
            << format_double(s.window_mean) << '\n';
    }
    close_out(out, path);
}

// --------------------------------------------------------------------- plots

double LogAxis::pixel(double value) const {
    const double a = std::log10(lo);
    const double b = std::log10(hi);
    return top + (b - std::log10(value)) / (b - a) * (bottom - top);
}

namespace {

constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

}  // namespace

void emit_plot(const CellAggregate& agg, std::string_view metric, const std::filesystem::path& path) {
    std::vector<const Series*> series;
    for (const auto& s : agg.series)
        if (s.metric == metric) series.push_back(&s);

    // Data sidecar on the union of checkpoints.
    std::set<std::int64_t> all_iters;
    for (const auto* s : series) all_iters.insert(s->iters.begin(), s->iters.end());
    {
        std::filesystem::path dat = path;
        dat.replace_extension(".dat");
        auto out = open_out(dat);
        out << "# iter";
        for (const auto* s : series) out << ' ' << s->optimizer << "_mean " << s->optimizer << "_std";
        out << '\n';
        for (std::int64_t it : all_iters) {
            out << it;
            for (const auto* s : series) {
                auto pos = std::find(s->iters.begin(), s->iters.end(), it);
                if (pos == s->iters.end()) {
                    out << " nan nan";
                } else {
                    const MeanStd& m = s->stats[static_cast<std::size_t>(pos - s->iters.begin())];
                    out << ' ' << format_double(m.mean) << ' ' << format_double(m.std);
                }
            }
            out << '\n';
        }
        close_out(out, dat);
    }

    constexpr double width = 760, height = 440;
    constexpr double left = 80, right = 560, top = 30, bottom = 380;

    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    std::int64_t x0 = all_iters.empty() ? 0 : *all_iters.begin();
    std::int64_t x1 = all_iters.empty() ? 1 : *all_iters.rbegin();
    if (x1 == x0) x1 = x0 + 1;
    for (const auto* s : series) {
        for (const auto& m : s->stats) {
            if (!(m.mean > 0.0) || !std::isfinite(m.mean)) continue;
            lo = std::min(lo, m.mean - m.std > 0.0 ? m.mean - m.std : m.mean);
            hi = std::max(hi, m.mean + m.std);
        }
    }
    if (!(hi > 0.0)) {
        lo = 0.1;
        hi = 1.0;
    }
    LogAxis axis{std::pow(10.0, std::floor(std::log10(lo))), std::pow(10.0, std::ceil(std::log10(hi))), top, bottom};
    if (axis.hi <= axis.lo) axis.hi = axis.lo * 10.0;
    auto xpix = [&](std::int64_t it) {
        return left + static_cast<double>(it - x0) / static_cast<double>(x1 - x0) * (right - left);
    };
    auto clamp = [&](double v) { return std::clamp(v, axis.lo, axis.hi); };

    auto out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << px((left + right) / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">"
        << xml_escape(agg.experiment) << ": " << xml_escape(metric) << "</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
        << "\" stroke=\"black\"/>\n";
    for (double dec = axis.lo; dec <= axis.hi * 1.000001; dec *= 10.0) {
        const double y = axis.pixel(dec);
        char label[32];
        std::snprintf(label, sizeof label, "1e%d", static_cast<int>(std::lround(std::log10(dec))));
        out << "<line x1=\"" << px(left - 5) << "\" y1=\"" << px(y) << "\" x2=\"" << px(left) << "\" y2=\"" << px(y)
            << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << px(left - 8) << "\" y=\"" << px(y + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
            << label << "</text>\n";
    }
    for (int k = 0; k <= 4; ++k) {
        const std::int64_t it = x0 + (x1 - x0) * k / 4;
        out << "<text x=\"" << px(xpix(it)) << "\" y=\"" << px(bottom + 16)
            << "\" text-anchor=\"middle\" font-size=\"11\">" << it << "</text>\n";
    }
    out << "<text x=\"" << px((left + right) / 2) << "\" y=\"" << px(bottom + 36)
        << "\" text-anchor=\"middle\" font-size=\"12\">iteration</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const Series& s = *series[k];
        const char* color = kColors[k % std::size(kColors)];
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < s.iters.size(); ++i)
            if (s.stats[i].mean > 0.0 && std::isfinite(s.stats[i].mean)) idx.push_back(i);
        if (idx.empty()) continue;

        out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
        for (std::size_t i : idx) {
            const MeanStd& m = s.stats[i];
            out << px(xpix(s.iters[i])) << ',' << px(axis.pixel(clamp(m.mean + m.std))) << ' ';
        }
        for (auto it = idx.rbegin(); it != idx.rend(); ++it) {
            const MeanStd& m = s.stats[*it];
            const double lower = m.mean - m.std > 0.0 ? m.mean - m.std : axis.lo;
            out << px(xpix(s.iters[*it])) << ',' << px(axis.pixel(clamp(lower))) << (it + 1 == idx.rend() ? "" : " ");
        }
        out << "\"/>\n";

        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const std::size_t i = idx[j];
            out << px(xpix(s.iters[i])) << ',' << px(axis.pixel(clamp(s.stats[i].mean)))
                << (j + 1 == idx.size() ? "" : " ");
        }
        out << "\"/>\n";

        const double ly = top + 14.0 + 18.0 * static_cast<double>(k);
        out << "<line x1=\"" << px(right + 20) << "\" y1=\"" << px(ly - 4) << "\" x2=\"" << px(right + 44)
            << "\" y2=\"" << px(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << px(right + 50) << "\" y=\"" << px(ly) << "\" font-size=\"12\">"
            << xml_escape(s.optimizer) << "</text>\n";
    }
    out << "</svg>\n";
    close_out(out, path);
}

// ----------------------------------------------------------------------- run

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    std::size_t workers = jobs > 0 ? static_cast<std::size_t>(jobs) : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first) first = std::current_exception();
                    next.store(n);
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write, std::ostream* log) {
    cfg.validate();
    ExperimentResult res;
    res.variants = expand_variants(cfg.problem);
    const std::size_t n_opt = cfg.optimizers.size();
    const std::size_t n_trial = static_cast<std::size_t>(cfg.n_trials);
    std::vector<std::string> names;
    for (const auto& o : cfg.optimizers) names.push_back(o.name);

    for (std::size_t v = 0; v < res.variants.size(); ++v) {
        const Variant& var = res.variants[v];
        const std::string experiment = cfg.name + "/" + var.label;
        if (log) *log << "[" << experiment << "] " << n_trial << " trials x " << n_opt << " optimizers\n";

        std::vector<ProblemInstance> problems(n_trial);
        parallel_for(n_trial, cfg.jobs, [&](std::size_t t) {
            try {
                problems[t] = make_problem(cfg, v, t);
            } catch (const Error& e) {
                throw Error(e.code(), experiment + " trial " + std::to_string(t) + ": " + e.what());
            }
        });

        std::vector<std::vector<opt::TrialRecord>> trials(n_opt, std::vector<opt::TrialRecord>(n_trial));
        parallel_for(n_opt * n_trial, cfg.jobs, [&](std::size_t k) {
            const std::size_t o = k / n_trial;
            const std::size_t t = k % n_trial;
            try {
                trials[o][t] = run_on(cfg, problems[t], v, o, t);
            } catch (const Error& e) {
                throw Error(e.code(), experiment + " optimizer " + names[o] + " trial " + std::to_string(t) + ": " +
                                          e.what());
            }
        });
        problems.clear();

        CellAggregate agg = aggregate(experiment, names, trials, cfg.problem.family, cfg.window_start);
        if (write) {
            const std::filesystem::path dir = cfg.output_dir / var.label;
            for (std::size_t o = 0; o < n_opt; ++o)
                for (std::size_t t = 0; t < n_trial; ++t)
                    write_trial_csv(dir / "trials" / (names[o] + "-t" + std::to_string(t) + ".csv"), experiment,
                                    {trials[o][t]});
            write_aggregate_csv(dir / "aggregate.csv", agg);
            write_summary_csv(dir / "summary.csv", agg);
            for (const auto& metric : metrics_for(cfg.problem.family)) {
                if (metric == "loss" && cfg.problem.family == opt::Family::Quadratic) continue;
                emit_plot(agg, metric, dir / (metric + ".svg"));
            }
        }
        if (log) {
            for (const auto& s : agg.summary)
                *log << "  " << s.optimizer << ": final " << s.final_metric << " " << format_double(s.final_value.mean)
                     << " (std " << format_double(s.final_value.std) << ", diverged " << s.diverged << ")\n";
        }
        res.cells.push_back(std::move(agg));
        res.trials.push_back(std::move(trials));
    }
    return res;
}

}  // namespace ska::harness
