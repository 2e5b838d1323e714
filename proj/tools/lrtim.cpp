// lrtim: command-line driver for the experiment harness and circuit tools.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrtim/circuit.hpp"
#include "lrtim/harness.hpp"
#include "lrtim/quench.hpp"
#include "lrtim/spectra.hpp"

namespace {

struct RunFlags {
    std::string config;
    std::string out;
    int workers = 0;
    std::vector<std::string> overrides;
    bool quiet = false;
};

void add_run_flags(CLI::App* sub, RunFlags& f, bool config_required) {
    auto* opt = sub->add_option("-c,--config", f.config, "JSON config file (or a previous run's manifest.json)");
    if (config_required) opt->required()->check(CLI::ExistingFile);
    else opt->check(CLI::ExistingFile);
    sub->add_option("-o,--out", f.out, "Run directory (default <output>/<name>)");
    sub->add_option("-w,--workers", f.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--override", f.overrides, "Dotted key=value applied after loading, e.g. quench.g0=4")->take_all();
    sub->add_flag("-q,--quiet", f.quiet, "Do not print job status lines");
}

int execute(const RunFlags& f, const std::optional<std::string>& kind) {
    lrtim::ExperimentConfig config;
    if (f.config.empty()) {
        config = lrtim::ExperimentConfig::defaults_for(*kind);
    } else {
        config = lrtim::ExperimentConfig::load(f.config);
        if (kind && config.kind() != *kind) config.apply_override("kind=\"" + *kind + "\"");
    }
    for (const auto& o : f.overrides) config.apply_override(o);
    if (f.workers > 0) config.apply_override("workers=" + std::to_string(f.workers));

    std::optional<std::filesystem::path> out;
    if (!f.out.empty()) out = f.out;
    const auto manifest = lrtim::run(config, out, f.quiet ? nullptr : &std::cerr);
    const std::filesystem::path dir = out ? *out : std::filesystem::path(config.get<std::string>("output")) / config.name();
    std::cout << lrtim::report(dir).table;
    return manifest.ok() ? 0 : 1;
}

lrtim::StateVector initial_for(const lrtim::CouplingMatrix& j, double g0, const std::string& initial) {
    if (lrtim::initial_state_from_string(initial) == lrtim::InitialState::polarized)
        return lrtim::to_frame(lrtim::StateVector::all_down(j.sites()), lrtim::Frame::x);
    lrtim::Hamiltonian h(j, lrtim::Sector::even, lrtim::Frame::x);
    return lrtim::ground_state(h, g0).state;
}

lrtim::CircuitPlan load_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw lrtim::ConfigError("cannot open plan '" + path + "'");
    return lrtim::circuit_plan_from_json(nlohmann::json::parse(in));
}

lrtim::CouplingMatrix plan_couplings(const lrtim::CircuitPlan& plan) {
    if (std::isnan(plan.alpha) || std::isnan(plan.j0))
        throw lrtim::ConfigError("plan has no alpha/J0; it was compiled from an explicit coupling matrix");
    return lrtim::build_couplings({plan.sites, plan.j0, plan.alpha, lrtim::CouplingMode::algebraic});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Long-range transverse-field Ising toolkit"};
    app.set_version_flag("--version", std::string(LRTIM_VERSION));
    app.require_subcommand(1);

    RunFlags flags;
    std::optional<std::string> kind;
    for (const auto& k : lrtim::experiment_kinds()) {
        auto* sub = app.add_subcommand(k, "Run a " + k + " experiment");
        add_run_flags(sub, flags, false);
        sub->callback([&kind, k] { kind = k; });
    }
    auto* run_cmd = app.add_subcommand("run", "Run the experiment described by a config file");
    add_run_flags(run_cmd, flags, true);

    std::string report_dir;
    auto* report_cmd = app.add_subcommand("report", "Summarize a finished run directory");
    report_cmd->add_option("dir", report_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

    struct {
        int sites = 8;
        double alpha = 2.0, j0 = 1.0, g0 = 5.0, tau_q = 5.0, dt = 0.05;
        std::string output = "plan.json";
    } comp;
    auto* compile_cmd = app.add_subcommand("compile", "Compile a linear ramp into a Trotterized circuit plan");
    compile_cmd->add_option("-N,--sites", comp.sites, "Number of ions")->check(CLI::Range(2, 64));
    compile_cmd->add_option("--alpha", comp.alpha, "Power-law exponent")->check(CLI::NonNegativeNumber);
    compile_cmd->add_option("--j0", comp.j0, "Coupling strength (<0 ferro)");
    compile_cmd->add_option("--g0", comp.g0, "Initial field");
    compile_cmd->add_option("--tau-q", comp.tau_q, "Ramp time")->check(CLI::PositiveNumber);
    compile_cmd->add_option("--dt", comp.dt, "Trotter step")->check(CLI::PositiveNumber);
    compile_cmd->add_option("-o,--output", comp.output, "Plan JSON file");

    struct {
        std::string plan;
        std::string initial = "ground_state";
        double g0 = 5.0;
        std::string output;
    } sim;
    auto* simulate_cmd = app.add_subcommand("simulate", "Apply a circuit plan to the initial state");
    auto* verify_cmd = app.add_subcommand("verify", "Compare a circuit plan with the exact ramp");
    for (auto* sub : {simulate_cmd, verify_cmd}) {
        sub->add_option("plan", sim.plan, "Plan JSON file")->required()->check(CLI::ExistingFile);
        sub->add_option("--initial", sim.initial, "ground_state or polarized");
        sub->add_option("--g0", sim.g0, "Initial field of the ramp");
    }
    simulate_cmd->add_option("-o,--output", sim.output, "Write the final state as a binary checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (kind) return execute(flags, kind);
        if (run_cmd->parsed()) return execute(flags, std::nullopt);
        if (report_cmd->parsed()) {
            std::cout << lrtim::report(report_dir).table;
            return 0;
        }
        if (compile_cmd->parsed()) {
            const auto plan = lrtim::compile_evolution(lrtim::CouplingSpec{comp.sites, comp.j0, comp.alpha}, comp.g0,
                                                       comp.tau_q, comp.dt);
            std::ofstream out(comp.output);
            if (!out) throw lrtim::ConfigError("cannot write '" + comp.output + "'");
            out << lrtim::to_json(plan).dump(1) << "\n";
            std::cout << "N=" << plan.sites << " terms=" << plan.terms << " steps=" << plan.steps
                      << " depth=" << plan.max_depth() << " -> " << comp.output << "\n";
            for (const auto& w : plan.warnings) std::cerr << "warning: " << w << "\n";
            return 0;
        }
        const auto plan = load_plan(sim.plan);
        const auto j = plan_couplings(plan);
        const auto psi0 = initial_for(j, sim.g0, sim.initial);
        if (simulate_cmd->parsed()) {
            const auto psi = lrtim::simulate_plan(plan, psi0);
            std::cout << "norm " << psi.norm() << "\n";
            if (!sim.output.empty()) lrtim::write_checkpoint(sim.output, psi);
            return 0;
        }
        const double tau_q = plan.dt * static_cast<double>(plan.steps);
        const double g0 = sim.g0;
        const auto exact = lrtim::exact_evolution(j, [g0, tau_q](double t) { return g0 * (1.0 - t / tau_q); }, tau_q, psi0);
        const auto v = lrtim::verify(plan, psi0, exact);
        nlohmann::json r{{"dt", plan.dt}, {"steps", plan.steps}, {"deficit", v.deficit}, {"norm_error", v.norm_error}};
        std::cout << r.dump(2) << "\n";
        return 0;
    } catch (const lrtim::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const lrtim::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
