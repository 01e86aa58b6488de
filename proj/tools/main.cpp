// phdamp command line: build, solve, analyze, plotdata.

#include "phdamp/error.hpp"
#include "phdamp/scenario.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace phdamp;

namespace {

const char* kind_name(int code) {
    switch (code) {
        case 2: return "config";
        case 3: return "solver";
        case 4: return "invariant";
    }
    return "internal";
}

int report_error(int code, const std::string& verb, const std::string& message, const std::string& out_dir) {
    nlohmann::ordered_json rec;
    rec["error"] = {{"kind", kind_name(code)}, {"exit_code", code}, {"verb", verb}, {"message", message}};
    std::cerr << rec.dump() << std::endl;
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        std::ofstream os(fs::path(out_dir) / "error.json");
        if (os) os << rec.dump(2) << '\n';
    }
    return code;
}

void write_matrix(const fs::path& path, const Eigen::MatrixXd& A, const std::string& comment) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path.string());
    write_triplets(os, A, comment);
}

void run_build(const std::string& config, int generate, const std::string& out) {
    StructureSpec spec;
    if (generate > 0) {
        FrameParameters p = default_frame_parameters();
        p.storeys = generate;
        spec = generate_frame(p);
    } else {
        spec = load_structure_spec(config);
    }
    const SecondOrderModel mo = assemble(spec);
    const PHSystem sys = to_port_hamiltonian(mo);
    fs::create_directories(out);
    {
        std::ofstream os(fs::path(out) / "structure.cfg");
        os << format_structure_spec(spec);
    }
    write_matrix(fs::path(out) / "M.txt", Eigen::MatrixXd(mo.M), "mass matrix M [kg]");
    write_matrix(fs::path(out) / "K.txt", Eigen::MatrixXd(mo.K), "stiffness matrix K [N/m]");
    write_matrix(fs::path(out) / "D.txt", Eigen::MatrixXd(mo.D), "damping matrix D");
    write_matrix(fs::path(out) / "F.txt", Eigen::MatrixXd(mo.F), "actuator map F");
    export_system(sys, out);

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(mo.K), Eigen::MatrixXd(mo.M),
                                                                 Eigen::EigenvaluesOnly);
    std::ofstream os(fs::path(out) / "model.txt");
    os << "[model]\nnodes = " << spec.nodes.size() << "\nelements = " << spec.elements.size()
       << "\nactuators = " << spec.actuators.size() << "\ndofs = " << mo.n_dof() << "\nstates = " << sys.n()
       << "\ninputs = " << sys.m() << "\nspectral_abscissa = " << sys.spectral_abscissa() << "\nfrequencies_hz =";
    const auto& ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(ev.size(), 10); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.6g", std::sqrt(std::max(ev[i], 0.0)) / (2.0 * M_PI));
        os << buf;
    }
    os << '\n';
    std::cout << "states " << sys.n() << ", inputs " << sys.m() << " -> " << out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Energy-optimal damping of port-Hamiltonian frame structures"};
    app.require_subcommand(1);

    std::string config, out;
    int jobs = 1, generate = 0;
    std::vector<double> horizons;
    int fine_grid = 0;
    double tol = 0.0;

    auto* build = app.add_subcommand("build", "assemble a structure and export its matrices");
    build->add_option("--config", config, "structure file");
    build->add_option("--generate", generate, "generate the default frame with this many storeys instead");
    build->add_option("--out", out, "output directory")->required();

    auto* solve = app.add_subcommand("solve", "run a scenario");
    solve->add_option("--config", config, "scenario file")->required()->check(CLI::ExistingFile);
    solve->add_option("--out", out, "run directory")->required();
    solve->add_option("--jobs", jobs, "parallel cost entries")->check(CLI::PositiveNumber);
    solve->add_option("--horizons", horizons, "turnpike sweep, multiples of T")->delimiter(',');
    solve->add_option("--fine-grid", fine_grid, "intervals of the fine replay grid")->check(CLI::PositiveNumber);
    solve->add_option("--tol", tol, "KKT certificate tolerance (default 1e-6)")->check(CLI::PositiveNumber);

    auto* analyze = app.add_subcommand("analyze", "recompute switching functions, arcs and residuals of a run");
    analyze->add_option("--out", out, "run directory")->required()->check(CLI::ExistingDirectory);
    analyze->add_option("--tol", tol, "relative switching threshold (default 1e-4)")->check(CLI::PositiveNumber);

    auto* plot = app.add_subcommand("plotdata", "write figure CSVs of a run");
    plot->add_option("--out", out, "run directory")->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error(2, "", e.what(), "");
    }

    const std::string verb = app.get_subcommands().front()->get_name();
    if (verb == "solve" || verb == "build") {
        std::error_code ec;
        fs::remove(fs::path(out) / "error.json", ec);
    }
    try {
        if (verb == "build") {
            if (config.empty() == (generate <= 0)) throw ConfigError("build: give exactly one of --config, --generate");
            run_build(config, generate, out);
        } else if (verb == "solve") {
            const ScenarioConfig cfg = load_scenario(config);
            RunOptions opt;
            opt.jobs = jobs;
            opt.horizons = horizons;
            if (fine_grid > 0) opt.fine_intervals = fine_grid;
            if (tol > 0) opt.solver.kkt_tolerance = tol;
            opt.log = [](const std::string& msg) { std::cerr << msg << std::endl; };
            const RunReport rep = run_scenario(cfg, out, opt);
            std::cout << comparison_text(rep.table);
        } else if (verb == "analyze") {
            for (const auto& f : analyze_run(out, tol > 0 ? tol : 1e-4)) std::cout << f << '\n';
        } else {
            for (const auto& f : emit_plot_data(out)) std::cout << f << '\n';
        }
    } catch (const Error& e) {
        return report_error(e.exit_code(), verb, e.what(), verb == "solve" || verb == "build" ? out : "");
    } catch (const fs::filesystem_error& e) {
        return report_error(2, verb, e.what(), "");
    } catch (const std::exception& e) {
        return report_error(4, verb, e.what(), "");
    }
    return 0;
}
