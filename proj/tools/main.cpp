#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ska/error.hpp"
#include "ska/harness.hpp"
#include "ska/verify.hpp"

namespace {

struct Overrides {
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;
    std::optional<int> jobs;
    std::optional<double> eta_multiplier;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--seed", o.seed, "Master seed");
    cmd->add_option("--trials", o.trials, "Number of trials")->check(CLI::PositiveNumber);
    cmd->add_option("--jobs", o.jobs, "Worker threads (default: logical cores)")->check(CLI::PositiveNumber);
    cmd->add_option("--eta-multiplier", o.eta_multiplier, "Scale every optimizer's step size")
        ->check(CLI::PositiveNumber);
}

void apply(ska::harness::ExperimentConfig& cfg, const Overrides& o) {
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (o.seed) cfg.master_seed = *o.seed;
    if (o.trials) cfg.n_trials = *o.trials;
    if (o.jobs) cfg.jobs = *o.jobs;
    if (o.eta_multiplier) cfg.eta_multiplier = *o.eta_multiplier;
}

int run_config(ska::harness::ExperimentConfig cfg, const Overrides& o) {
    apply(cfg, o);
    ska::harness::run_experiment(cfg, true, &std::cout);
    std::cout << "wrote " << cfg.output_dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SKA-SGD experiments and numerical checks"};
    app.require_subcommand(1);

    Overrides run_o;
    std::string config_path;
    auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
    run->add_option("config,--config", config_path, "Config file");
    add_overrides(run, run_o);

    Overrides preset_o;
    std::string preset_name;
    auto* preset = app.add_subcommand("preset", "Run a shipped preset");
    preset->add_option("name", preset_name, "Preset name")->required();
    add_overrides(preset, preset_o);

    std::uint64_t verify_seed = 7;
    auto* verify = app.add_subcommand("verify", "Run the numerical property suite");
    verify->add_option("--seed", verify_seed, "Seed for the random instances");

    auto* list = app.add_subcommand("list-presets", "Print the shipped preset names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*list) {
            for (const auto& n : ska::harness::preset_names()) std::cout << n << "\n";
            return 0;
        }
        if (*verify) {
            bool all = true;
            for (const auto& r : ska::verify::run_all(verify_seed)) {
                std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
                all = all && r.passed;
            }
            return all ? 0 : 1;
        }
        if (*preset) {
            auto cfg = ska::harness::preset(preset_name);
            return run_config(std::move(cfg), preset_o);
        }
        if (*run) {
            if (config_path.empty()) {
                std::cerr << "run: a config file is required\n" << run->help();
                return 2;
            }
            return run_config(ska::harness::load_config(config_path), run_o);
        }
    } catch (const ska::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
