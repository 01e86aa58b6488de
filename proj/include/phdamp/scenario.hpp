#pragma once

// Scenario files, model construction, scenario runs and run-directory
// artifacts (see scenarios/README.md for the file format).

#include "phdamp/analysis.hpp"
#include "phdamp/ocp.hpp"
#include "phdamp/structure.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace phdamp {

enum class WeightKind { FullHamiltonian, UpmostLevel, MatrixFile };

enum class X0Kind { StaticDeflection, Modal, File };

struct X0Recipe {
    X0Kind kind = X0Kind::StaticDeflection;
    double energy = 13906.0;  ///< target H(x0) [J]; ignored for files
    int mode = 1;             ///< 1-based, ascending frequency
    double amplitude = 0.0;   ///< modal displacement amplitude; 0 scales to `energy`
    std::string file;
};

enum class EntryKind { Uncontrolled, Quadratic, SuppliedEnergy };

struct CostEntry {
    EntryKind kind = EntryKind::SuppliedEnergy;
    double mu = 0.0;

    /// Directory and file stem: uncontrolled, quadratic_mu_1e-06, supplied_energy.
    std::string slug() const;
    RowKind row_kind() const;
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::string base_dir = ".";  ///< relative paths resolve against this

    std::string structure_file;             ///< empty: generate
    std::optional<FrameParameters> frame;   ///< generator parameters

    WeightKind weight = WeightKind::FullHamiltonian;
    std::string weight_file;

    std::vector<CostEntry> costs;  ///< uncontrolled, quadratic (decreasing mu), supplied energy

    double T = 1.0;
    int N = 300;
    int N_fine = 3000;
    double u_max = 1e5;  ///< [N]
    X0Recipe x0;
    std::vector<double> horizons;  ///< turnpike sweep, multiples of T

    /// Throws ConfigError.
    void validate() const;
};

ScenarioConfig parse_scenario(std::string_view text, const std::string& origin = "<string>",
                              const std::string& base_dir = ".");
ScenarioConfig load_scenario(const std::string& path);
std::string format_scenario(const ScenarioConfig& cfg);

struct ScenarioModel {
    StructureSpec structure;
    std::shared_ptr<const PHSystem> sys;
    MatrixXd W;
    VectorXd x0;
    std::vector<int> upmost_lateral;  ///< state indices of upmost-node ux displacements
};

ScenarioModel build_model(const ScenarioConfig& cfg);

/// Q with rows and columns outside the upmost-level displacement and momentum
/// indices zeroed.
MatrixXd upmost_level_weight(const PHSystem& sys, const StructureSpec& structure);

/// Throws ConfigError / InvariantError; result has H(x0) > 0.
VectorXd initial_state(const PHSystem& sys, const X0Recipe& recipe, const std::string& base_dir = ".");

OCPSpec make_ocp(const ScenarioModel& model, const CostEntry& entry, const TimeGrid& grid, double u_max);

struct EntryResult {
    CostEntry entry;
    OCPSpec spec;
    OCPSolution solution;
    Trajectory fine;
    EnergyLedger fine_ledger;
};

/// Solves on the coarse grid and replays the controls on the fine grid.
/// Throws InvariantError if either ledger fails the balance identity.
EntryResult run_entry(const ScenarioModel& model, const ScenarioConfig& cfg, const CostEntry& entry,
                      const OCPSolverSettings& settings = {});

struct EntryAnalysis {
    MatrixXd s;
    ArcPartition arcs;
    PontryaginResidual residual;
    std::optional<SingularArcCheck> singular;  ///< supplied energy with singular arcs
    std::string singular_note;
    int last_saturated = -1;  ///< last interval with a channel on the box, -1 if none
    double sign_mismatch = 0.0;  ///< max |s| where a saturated channel has sign(u) == sign(s)
};

EntryAnalysis analyze_entry(const OCPSpec& spec, const Trajectory& traj, const MatrixXd& interval_adjoints,
                            double tau_rel = 1e-4);

struct RunOptions {
    int jobs = 1;
    std::vector<double> horizons;  ///< overrides the config when non-empty
    std::optional<int> fine_intervals;
    OCPSolverSettings solver;
    std::function<void(const std::string&)> log;
};

struct RunReport {
    std::vector<ComparisonRow> table;
    std::vector<std::string> entries;  ///< slugs in table order
    std::vector<std::string> files;    ///< written paths relative to the run directory, sorted
};

/// Writes scenario.cfg, structure.cfg, W.txt, x0.txt, summary.txt,
/// comparison.{csv,txt} and per entry <slug>/{trajectory,adjoint,fine,
/// switching,arcs}.csv and <slug>/analysis.txt; turnpike/<slug>.{csv,txt}
/// when horizons are given.
RunReport run_scenario(const ScenarioConfig& cfg, const std::string& out_dir, const RunOptions& options = {});

/// Recomputes <slug>/switching.csv, arcs.csv and analysis.txt from a run directory.
std::vector<std::string> analyze_run(const std::string& run_dir, double tau_rel = 1e-4);

/// Writes plot/{withdrawn,hamiltonian,displacement}.csv and
/// plot/controls_<slug>.csv from the fine-grid replays of a run directory.
std::vector<std::string> emit_plot_data(const std::string& run_dir);

}  // namespace phdamp
