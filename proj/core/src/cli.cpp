/// @file cli.cpp
/// @brief Command-line driver wiring configuration, solver, diagnostics, and
///        writers together behind four subcommands.

#include "implicitflow/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "CLI11.hpp"

#include "implicitflow/config.hpp"
#include "implicitflow/diagnostics.hpp"
#include "implicitflow/vtk_io.hpp"

namespace implicitflow {
namespace {

std::string fmt17(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

/// Open a file for writing inside directory (created on demand); throws
/// std::runtime_error naming the path on failure.
std::ofstream open_output(const std::string& directory, const std::string& name, std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(directory, ec);
    if (ec) throw std::runtime_error("cannot create output directory '" + directory + "'");
    path = (std::filesystem::path(directory) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    return out;
}

void warn_if_outside_admissible_range(const ProblemSetup& setup, std::ostream& err) {
    if (setup.admissibility_warning)
        err << "warning: exponent q is at or below 2d/(d+2); the energy bounds carry no "
               "compactness and convergence claims are void\n";
}

int do_run(const std::string& config_path, std::ostream& out, std::ostream& err) {
    const RunConfig config = parse_config_file(config_path);
    Instance instance = instantiate(config);
    warn_if_outside_admissible_range(instance.setup, err);

    const SimulationResult run = run_simulation(instance.setup, instance.solver);
    const double wall = std::accumulate(run.steps.begin(), run.steps.end(), 0.0,
                                        [](double sum, const StepStats& s) { return sum + s.wall_seconds; });
    err << "solver wall time " << wall << " s\n";
    if (!run.completed) {
        err << "solver failure at step " << run.failed_step << ": " << run.failure_message << "\n";
        return kExitSolver;
    }

    const RunReport report = energy_audit(run, instance.setup);
    const std::vector<double> proxy = weak_residual_proxy(run, instance.setup);

    std::string report_path;
    {
        std::ofstream file = open_output(config.output.directory, "report.csv", report_path);
        write_run_report_csv(file, run, report);
        if (!file.flush()) throw std::runtime_error("write failed for '" + report_path + "'");
    }
    std::string summary_path;
    {
        std::ofstream file = open_output(config.output.directory, "summary.csv", summary_path);
        write_run_summary_csv(file, report, proxy);
        if (!file.flush()) throw std::runtime_error("write failed for '" + summary_path + "'");
    }
    std::vector<std::string> field_paths;
    if (config.output.stride >= 1)
        field_paths = write_fields(run, instance.setup, config.output.directory, config.output.stride);

    out << "completed " << run.grid.l << " steps, T = " << fmt17(run.grid.T) << ", delta = "
        << fmt17(run.grid.delta) << "\n";
    out << "max squared kinetic norm = " << fmt17(report.apriori.max_kinetic_sq) << "\n";
    out << "apriori total = " << fmt17(report.apriori.total()) << "\n";
    out << "duality margin = " << fmt17(report.duality_margin) << "\n";
    out << "wrote " << report_path << "\n";
    out << "wrote " << summary_path << "\n";
    out << "wrote " << field_paths.size() << " field files\n";
    return kExitOk;
}

int do_converge(const std::string& config_path, const std::string& axis_word,
                const std::vector<double>& levels, std::ostream& out, std::ostream& err) {
    SweepAxis axis = SweepAxis::k;
    if (axis_word == "k") axis = SweepAxis::k;
    else if (axis_word == "ln") axis = SweepAxis::ln;
    else if (axis_word == "m") axis = SweepAxis::m;
    else {
        err << "unknown axis '" << axis_word << "' (expected k, ln, or m)\n";
        return kExitUsage;
    }

    const RunConfig config = parse_config_file(config_path);
    if (config.domain.mesh != "builtin")
        throw ConfigError({"[domain] convergence sweeps refine the builtin mesh; mesh files are "
                           "not sweepable"});

    SweepConfig sweep;
    sweep.element = config.domain.element;
    sweep.base_divisions = config.domain.divisions;
    sweep.base_refinements = config.domain.refinements;
    sweep.final_time = config.time.final_time;
    sweep.base_l = config.time.steps;
    sweep.model = build_model(config.model);
    sweep.mode = config.model.approx;
    sweep.base_k = config.model.k;
    sweep.base_m = config.m;
    sweep.forcing = builtin_forcing(config.forcing, sweep.model);
    sweep.initial = builtin_initial(config.initial);
    if (config.forcing == "manufactured_newtonian") sweep.reference = manufactured_velocity();
    sweep.quad_points = config.quad_points;
    sweep.solver = config.solver;

    const SweepTable table = convergence_sweep(sweep, axis, levels);

    std::string sweep_path;
    {
        std::ofstream file = open_output(config.output.directory, "sweep.csv", sweep_path);
        write_sweep_csv(file, table);
        if (!file.flush()) throw std::runtime_error("write failed for '" + sweep_path + "'");
    }

    bool all_completed = true;
    for (const SweepRow& row : table.rows) {
        out << "axis " << axis_word << " level " << fmt17(row.parameter)
            << (row.completed ? " completed" : " FAILED") << ", diff = " << fmt17(row.diff_norm);
        if (row.manufactured_error >= 0) out << ", error = " << fmt17(row.manufactured_error);
        out << "\n";
        if (!row.completed) {
            all_completed = false;
            err << "level " << fmt17(row.parameter) << " failed: " << row.message << "\n";
        }
    }
    out << "wrote " << sweep_path << "\n";
    return all_completed ? kExitOk : kExitSolver;
}

int do_check_model(const std::string& config_path, int samples, unsigned seed, std::ostream& out,
                   std::ostream& err) {
    const RunConfig config = parse_config_file(config_path);
    const GraphApprox approx =
        make_approx(build_model(config.model), config.model.approx, config.model.k);
    const BatteryReport battery = check_assumption_battery(approx, samples, seed);

    out << "samples = " << battery.sample_count << "\n";
    out << "monotonicity violations = " << battery.monotonicity_violations << "\n";
    out << "max monotonicity violation = " << fmt17(battery.max_monotonicity_violation) << "\n";
    out << "min coercivity margin = " << fmt17(battery.min_coercivity_margin) << "\n";
    out << "min graph-limit margin = " << fmt17(battery.min_graph_limit_margin) << " (floor "
        << fmt17(battery.graph_limit_floor) << ")\n";

    const bool healthy = battery.monotonicity_violations == 0 &&
                         battery.min_coercivity_margin >= -1e-10 &&
                         battery.min_graph_limit_margin >= battery.graph_limit_floor - 1e-10;
    if (!healthy) err << "model checks failed\n";
    return healthy ? kExitOk : kExitSolver;
}

int do_mesh_info(const std::string& mesh_path, std::ostream& out) {
    const Triangulation mesh = read_mesh_file(mesh_path);
    char line[96];
    std::snprintf(line, sizeof(line), "cells %zu, h %.5f, shape %.5f", mesh.cells.size(),
                  mesh.mesh_size(), shape_regularity(mesh));
    out << "vertices " << mesh.vertices.size() << "\n";
    out << line << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Fully discrete solver for implicitly constituted incompressible flow"};
    app.name("implicitflow");
    app.require_subcommand(1);

    std::string run_config;
    CLI::App* run_cmd = app.add_subcommand("run", "Simulate a configuration; write CSV reports and "
                                                  "VTK field dumps into its output directory");
    run_cmd->add_option("config", run_config, "configuration file")->required();

    std::string sweep_config;
    std::string axis_word;
    std::vector<double> levels;
    CLI::App* converge_cmd =
        app.add_subcommand("converge", "Run a convergence sweep along one limit axis");
    converge_cmd->add_option("config", sweep_config, "configuration file")->required();
    converge_cmd->add_option("--axis", axis_word, "sweep axis: k, ln, or m")->required();
    converge_cmd->add_option("--levels", levels, "axis levels, in increasing order")
        ->required()
        ->expected(-1);

    std::string check_config;
    int samples = 1000;
    unsigned seed = 1;
    CLI::App* check_cmd = app.add_subcommand(
        "check-model", "Sample monotonicity/coercivity/graph-limit margins of the configured model");
    check_cmd->add_option("config", check_config, "configuration file")->required();
    check_cmd->add_option("--samples", samples, "tensor pairs to sample")->check(CLI::PositiveNumber);
    check_cmd->add_option("--seed", seed, "sampling seed");

    std::string mesh_path;
    CLI::App* mesh_cmd = app.add_subcommand("mesh-info", "Print mesh counts, size, and shape regularity");
    mesh_cmd->add_option("meshfile", mesh_path, "mesh file")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::Success&) {
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (run_cmd->parsed()) return do_run(run_config, out, err);
        if (converge_cmd->parsed()) return do_converge(sweep_config, axis_word, levels, out, err);
        if (check_cmd->parsed()) return do_check_model(check_config, samples, seed, out, err);
        return do_mesh_info(mesh_path, out);
    } catch (const ConfigError& e) {
        err << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::runtime_error& e) {
        err << "I/O error: " << e.what() << "\n";
        return kExitIo;
    }
}

}  // namespace implicitflow
