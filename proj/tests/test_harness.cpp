#include <doctest.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "ska/error.hpp"
#include "ska/harness.hpp"

using namespace ska;
using namespace ska::harness;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSmall = R"({
  "name": "small",
  "problem": {"family": "quadratic", "d": 12, "kappa": 100, "noise_sigma": 0.5},
  "optimizers": ["sgd", "ska-ultimate"],
  "iterations": 40,
  "checkpoint_every": 10,
  "trials": 3,
  "seed": 9,
  "jobs": 1
})";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("ska-harness-" + tag);
    fs::remove_all(dir);
    return dir;
}

opt::StepRecord rec(std::int64_t iter, double loss) {
    opt::StepRecord r;
    r.iter = iter;
    r.loss = loss;
    r.obj_gap = loss;
    r.grad_norm = loss;
    r.err_norm = loss;
    return r;
}

opt::TrialRecord trial(const std::vector<double>& losses, bool diverged = false) {
    opt::TrialRecord t;
    for (std::size_t i = 0; i < losses.size(); ++i) t.steps.push_back(rec(static_cast<std::int64_t>(10 * i), losses[i]));
    t.diverged = diverged;
    return t;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("describe uses the population std") {
    const MeanStd one = describe({3.0});
    CHECK(one.mean == 3.0);
    CHECK(one.std == 0.0);
    const MeanStd m = describe({1.0, 2.0, 3.0, 4.0});
    CHECK(m.mean == 2.5);
    CHECK(m.std == doctest::Approx(std::sqrt(1.25)));
    CHECK(m.min == 1.0);
    CHECK(m.max == 4.0);
    CHECK(std::isnan(describe({}).mean));

    RandomSource rng(3);
    std::vector<double> xs;
    for (int i = 0; i < 1000; ++i) xs.push_back(1e6 + rng.normal());
    const auto ref = oracle::two_pass(xs);
    const MeanStd d = describe(xs);
    CHECK(d.mean == doctest::Approx(ref.mean).epsilon(1e-14));
    CHECK(d.std == doctest::Approx(ref.std).epsilon(1e-9));
}

TEST_CASE("iterations to 95 percent of the loss drop") {
    CHECK(iterations_to_95(trial({1.0, 0.5, 0.04, 0.0}).steps) == 20);
    CHECK(iterations_to_95(trial({1.0, 0.05, 0.0}).steps) == 10);
    CHECK(iterations_to_95(trial({1.0, 1.0, 1.0}).steps) == 20);
    CHECK(iterations_to_95(trial({1.0, 2.0}).steps) == 10);
    CHECK_THROWS_AS(iterations_to_95(trial({1.0}).steps), Error);
}

TEST_CASE("aggregation skips diverged trials") {
    const std::vector<std::vector<opt::TrialRecord>> trials = {
        {trial({4.0, 2.0, 1.0}), trial({6.0, 4.0, 3.0}), trial({1.0, 1e13}, true)},
    };
    const auto agg = aggregate("x", {"sgd"}, trials, opt::Family::Quadratic, 10);
    REQUIRE(agg.summary.size() == 1);
    const auto& s = agg.summary[0];
    CHECK(s.n_trials == 2);
    CHECK(s.diverged == 1);
    CHECK(s.final_metric == "obj_gap");
    CHECK(s.final_value.mean == 2.0);
    CHECK(s.final_value.std == 1.0);
    CHECK(s.window_std == doctest::Approx(1.0));
    CHECK(s.window_mean == doctest::Approx(2.5));
    CHECK(agg.series.size() == metric_names().size());
    CHECK(agg.series[0].iters.size() == 3);

    const auto one = aggregate("x", {"sgd"}, {{trial({4.0, 2.0})}}, opt::Family::Logistic, std::nullopt);
    CHECK(one.summary[0].final_value.std == 0.0);
    CHECK(one.summary[0].final_metric == "loss");
    CHECK(std::isnan(one.summary[0].window_std));
    CHECK(one.series.size() == 2);
}

TEST_CASE("aggregation matches a long-double reference on real runs") {
    ExperimentConfig cfg = parse_config(kSmall);
    const auto res = run_experiment(cfg, false);
    REQUIRE(res.cells.size() == 1);
    for (std::size_t o = 0; o < cfg.optimizers.size(); ++o) {
        std::vector<double> finals;
        for (const auto& t : res.trials[0][o]) finals.push_back(t.steps.back().obj_gap);
        const auto ref = oracle::two_pass(finals);
        CHECK(res.cells[0].summary[o].final_value.mean == doctest::Approx(ref.mean).epsilon(1e-12));
        CHECK(res.cells[0].summary[o].final_value.std == doctest::Approx(ref.std).epsilon(1e-9));
    }
}

TEST_CASE("double formatting round-trips") {
    for (double x : {0.1, 1.0 / 3.0, 1e-300, 123456789.0, -2.5e17, 0.0}) {
        const std::string s = format_double(x);
        double back = 0.0;
        std::from_chars(s.data(), s.data() + s.size(), back);
        CHECK(back == x);
    }
    CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
    CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("csv quoting") {
    CHECK(csv_field("plain") == "plain");
    CHECK(csv_field("a,b") == "\"a,b\"");
    CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_field("two\nlines") == "\"two\nlines\"");
    CHECK(csv_field("") == "");
}

TEST_CASE("trial csv layout") {
    std::ostringstream empty;
    write_trial_csv(empty, "e", {});
    CHECK(empty.str() == std::string(kTrialCsvHeader) + "\n");

    opt::TrialRecord t = trial({0.5, 0.25});
    t.optimizer = "ska,odd";
    t.seed = 42;
    std::ostringstream out;
    write_trial_csv(out, "exp", {t});
    const auto ls = lines(out.str());
    REQUIRE(ls.size() == 3);
    CHECK(ls[0] == kTrialCsvHeader);
    CHECK(ls[1] == "exp,\"ska,odd\",42,0,0.5,0.5,0.5,0.5,0");
    CHECK(ls[2] == "exp,\"ska,odd\",42,10,0.25,0.25,0.25,0.25,0");
}

TEST_CASE("log axis mapping") {
    const LogAxis ax{1e-3, 1e1, 10.0, 410.0};
    CHECK(ax.pixel(1e1) == doctest::Approx(10.0));
    CHECK(ax.pixel(1e-3) == doctest::Approx(410.0));
    CHECK(ax.pixel(1e-1) == doctest::Approx(210.0));
}

TEST_CASE("plots carry one polyline and one band per series") {
    const fs::path dir = scratch_dir("plot");
    const std::vector<std::vector<opt::TrialRecord>> trials = {
        {trial({1.0, 0.5, 0.25}), trial({1.0, 0.5, 0.25})},
        {trial({1.0, 0.1, 0.01}), trial({2.0, 0.2, 0.02})},
        {trial({1.0, 0.3, 0.09}), trial({1.0, 0.3, 0.09})},
    };
    const auto agg = aggregate("p", {"a", "b", "c"}, trials, opt::Family::Quadratic, std::nullopt);
    emit_plot(agg, "obj_gap", dir / "obj_gap.svg");
    const std::string svg = slurp(dir / "obj_gap.svg");
    const auto count = [&](const std::string& tag) {
        std::size_t n = 0;
        for (auto pos = svg.find(tag); pos != std::string::npos; pos = svg.find(tag, pos + 1)) ++n;
        return n;
    };
    CHECK(count("<polyline") == 3);
    CHECK(count("<polygon") == 3);
    CHECK(svg.find("<svg") == 0);
    CHECK(fs::exists(dir / "obj_gap.dat"));

    // Series "a" has zero spread, so its band's upper and lower edges coincide.
    const std::regex poly("<polygon[^>]*points=\"([^\"]*)\"");
    std::smatch m;
    REQUIRE(std::regex_search(svg, m, poly));
    std::vector<std::string> pts;
    std::istringstream in(m[1].str());
    for (std::string p; in >> p;) pts.push_back(p);
    REQUIRE(pts.size() == 6);
    for (std::size_t i = 0; i < 3; ++i) CHECK(pts[i] == pts[5 - i]);
    fs::remove_all(dir);
}

TEST_CASE("trials are isolated by seed") {
    ExperimentConfig a = parse_config(kSmall);
    ExperimentConfig b = a;
    b.optimizers.push_back(OptimizerEntry{"adam", opt::named_optimizer("adam", opt::Family::Quadratic)});
    const auto ta = run_trial(a, 0, 1, 2);
    const auto tb = run_trial(b, 0, 1, 2);
    REQUIRE(ta.steps.size() == tb.steps.size());
    for (std::size_t i = 0; i < ta.steps.size(); ++i) CHECK(ta.steps[i].loss == tb.steps[i].loss);
    CHECK(run_seed(a, 0, 0, 0) != run_seed(a, 0, 0, 1));
    CHECK(run_seed(a, 0, 0, 0) != run_seed(a, 0, 1, 0));
    CHECK(make_problem(a, 0, 1).seed == make_problem(b, 0, 1).seed);

    // Every optimizer of a trial starts from the same point.
    const auto t0 = run_trial(a, 0, 0, 1);
    const auto t1 = run_trial(a, 0, 1, 1);
    CHECK(t0.steps.front().loss == t1.steps.front().loss);
}

TEST_CASE("outputs are byte-identical across runs and thread counts") {
    ExperimentConfig cfg = parse_config(kSmall);
    const fs::path d1 = scratch_dir("rep1");
    const fs::path d2 = scratch_dir("rep2");
    cfg.output_dir = d1;
    cfg.jobs = 1;
    const auto r1 = run_experiment(cfg);
    cfg.output_dir = d2;
    cfg.jobs = 4;
    run_experiment(cfg);
    const fs::path cell = r1.variants[0].label;
    for (const char* f : {"aggregate.csv", "summary.csv", "obj_gap.svg", "obj_gap.dat", "trials/sgd-t0.csv",
                          "trials/ska-ultimate-t2.csv"}) {
        INFO(f);
        REQUIRE(fs::exists(d1 / cell / f));
        CHECK(slurp(d1 / cell / f) == slurp(d2 / cell / f));
    }
    const std::string agg = slurp(d1 / cell / "aggregate.csv");
    CHECK(agg.rfind("# std is the population standard deviation", 0) == 0);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("variant labels") {
    ProblemSpec p;
    p.dims = {50, 100};
    p.kappas = {10, 1e8};
    const auto v = expand_variants(p);
    REQUIRE(v.size() == 4);
    CHECK(v[0].label == "d50-k10");
    CHECK(v[3].label == "d100-k1e+08");
    p.spectrum = Spectrum::Clustered;
    const auto c = expand_variants(p);
    REQUIRE(c.size() == 2);
    CHECK(c[0].label == "d50-clustered");
}

TEST_CASE("config parsing") {
    const auto cfg = parse_config(kSmall);
    CHECK(cfg.name == "small");
    CHECK(cfg.iterations == 40);
    CHECK(cfg.n_trials == 3);
    CHECK(cfg.master_seed == 9);
    REQUIRE(cfg.optimizers.size() == 2);
    CHECK(cfg.optimizers[1].cfg.use_jacobi);

    const auto over = parse_config(R"({"problem": {"family": "logistic", "d": 20, "kappa": 10, "samples": 100},
        "optimizers": [{"name": "s4", "base": "ska-ultimate", "overrides": {"s": 4, "cheb_a": 0.1}}]})");
    CHECK(over.optimizers[0].name == "s4");
    CHECK(over.optimizers[0].cfg.s == 4);
    CHECK(over.optimizers[0].cfg.cheb.a == 0.1);
    CHECK(over.problem.family == opt::Family::Logistic);

    const auto config_code = [](const char* text) {
        try {
            (void)parse_config(text);
        } catch (const Error& e) {
            return e.code() == ErrorCode::Config;
        }
        return false;
    };
    CHECK(config_code(R"({"problem": {"d": 10}, "optimizers": ["sgd"], "iterations": 10, "bogus": 1})"));
    CHECK(config_code(R"({"problem": {"d": 10, "colour": "red"}, "optimizers": ["sgd"]})"));
    CHECK(config_code(R"({"problem": {"d": 10}, "optimizers": ["nope"]})"));
    CHECK(config_code(R"({"problem": {"d": 10}, "optimizers": ["sgd"], "trials": 0})"));
    CHECK(config_code(R"({"problem": {"d": 10}, "optimizers": [{"name": "x", "base": "sgd", "overrides": {"zeta": 1}}]})"));
    CHECK(config_code("{not json"));
}

TEST_CASE("shipped presets parse and match the preset files") {
    CHECK(preset_names().size() == 5);
    for (const auto& name : preset_names()) {
        INFO(name);
        const ExperimentConfig cfg = preset(name);
        CHECK(cfg.name == name);
        CHECK_NOTHROW(cfg.validate());
        const fs::path file = fs::path(SKA_SOURCE_DIR) / "presets" / (name + ".json");
        REQUIRE(fs::exists(file));
        CHECK(slurp(file) == std::string(preset_json(name)));
    }
    CHECK_THROWS_AS(preset("missing"), Error);
    CHECK(preset("late-stage-clustered").window_start == 1800);
}

TEST_CASE("parallel_for covers every index and rethrows") {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
    CHECK_THROWS(parallel_for(10, 3, [](std::size_t i) {
        if (i == 7) throw std::runtime_error("x");
    }));
}
