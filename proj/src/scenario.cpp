#include "phdamp/scenario.hpp"

#include "phdamp/config_text.hpp"
#include "phdamp/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace phdamp {

namespace fs = std::filesystem;

namespace {

/// Shortest round-trip representation.
std::string num(double v) {
    char buf[40];
    for (int p = 1; p <= 17; ++p) {
        std::snprintf(buf, sizeof buf, "%.*g", p, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string resolve(const std::string& base, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base) / path).lexically_normal().string();
}

const char* weight_name(WeightKind k) {
    switch (k) {
        case WeightKind::FullHamiltonian: return "full-hamiltonian";
        case WeightKind::UpmostLevel: return "upmost-level";
        case WeightKind::MatrixFile: return "matrix";
    }
    return "";
}

const char* x0_name(X0Kind k) {
    switch (k) {
        case X0Kind::StaticDeflection: return "static-deflection";
        case X0Kind::Modal: return "modal";
        case X0Kind::File: return "file";
    }
    return "";
}

void check_keys(const ConfigDocument& doc, const ConfigSection& sec, std::initializer_list<const char*> allowed) {
    for (const auto& e : sec.entries) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || e.key == a;
        if (!ok) throw ConfigError(doc.where(e.line) + ": unknown key '" + e.key + "' in [" + sec.name + "]");
    }
}

std::string field(const ConfigDocument& doc, const ConfigSection& sec, const ConfigEntry& e) {
    return doc.where(e.line) + ": " + sec.name + "." + e.key;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw ConfigError("cannot write " + tmp.string());
        os << content;
        if (!os) throw ConfigError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

struct Csv {
    std::vector<std::string> header;
    MatrixXd rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

Csv read_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("missing artifact " + path.string());
    Csv csv;
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(path.string() + ": empty file");
    for (const auto& h : split_list(line)) csv.header.push_back(h);
    std::vector<std::vector<double>> data;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        std::vector<double> row;
        for (const auto& tok : split_list(line)) row.push_back(parse_double(tok, path.string()));
        if (row.size() != csv.header.size()) throw ConfigError(path.string() + ": ragged row");
        data.push_back(std::move(row));
    }
    csv.rows.resize(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(csv.header.size()));
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t j = 0; j < data[i].size(); ++j)
            csv.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data[i][j];
    return csv;
}

std::string matrix_csv(const std::string& tcol, const VectorXd& t, const std::string& prefix, const MatrixXd& cols,
                       int precision) {
    std::ostringstream os;
    os << tcol;
    for (Eigen::Index i = 0; i < cols.rows(); ++i) os << ',' << prefix << i + 1;
    os << '\n';
    char buf[48];
    for (Eigen::Index k = 0; k < cols.cols(); ++k) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, t[k]);
        os << buf;
        for (Eigen::Index i = 0; i < cols.rows(); ++i) {
            std::snprintf(buf, sizeof buf, ",%.*g", precision, cols(i, k));
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

VectorXd midpoint_times(const TimeGrid& g) {
    VectorXd t(g.N);
    for (int k = 0; k < g.N; ++k) t[k] = (k + 0.5) * g.h();
    return t;
}

template <class Fn>
void parallel_for(int count, int jobs, Fn fn) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    };
    const int threads = std::max(1, std::min(jobs, count));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

void check_ledger(const EnergyLedger& L, const std::string& what) {
    if (L.balance_residual > 1e-8 * std::max(L.initial, 1e-300) && L.balance_residual > 1e-300) {
        std::ostringstream os;
        os << what << ": energy balance residual " << L.balance_residual << " J exceeds 1e-8 of the initial energy "
           << L.initial << " J";
        throw InvariantError(os.str());
    }
}

std::string ledger_records(const std::string& prefix, const EnergyLedger& L) {
    std::ostringstream os;
    os << prefix << "withdrawn = " << num(L.withdrawn) << '\n'
       << prefix << "dissipated = " << num(L.dissipated) << '\n'
       << prefix << "remaining = " << num(L.remaining) << '\n'
       << prefix << "initial = " << num(L.initial) << '\n'
       << prefix << "balance_residual = " << num(L.balance_residual) << '\n';
    return os.str();
}

const char* arc_name(ArcKind k) {
    switch (k) {
        case ArcKind::Singular: return "singular";
        case ArcKind::Bang: return "bang";
        case ArcKind::Transition: return "transition";
    }
    return "";
}

struct EntryFiles {
    std::map<std::string, std::string> content;  ///< relative path -> text
};

void add_analysis_files(EntryFiles& out, const std::string& slug, const OCPSpec& spec, const Trajectory& traj,
                        const EntryAnalysis& a) {
    const TimeGrid& g = traj.grid;
    out.content[slug + "/switching.csv"] = matrix_csv("t_mid", midpoint_times(g), "s_", a.s, 17);

    std::ostringstream arcs;
    arcs << "channel,begin,end,t_begin,t_end,kind\n";
    for (const Arc& arc : a.arcs.arcs)
        arcs << arc.channel + 1 << ',' << arc.begin << ',' << arc.end << ',' << num(g.t(arc.begin)) << ','
             << num(g.t(arc.end)) << ',' << arc_name(arc.kind) << '\n';
    out.content[slug + "/arcs.csv"] = arcs.str();

    int singular = 0, bang = 0, transition = 0;
    for (const Arc& arc : a.arcs.arcs)
        (arc.kind == ArcKind::Singular ? singular : arc.kind == ArcKind::Bang ? bang : transition)++;
    std::ostringstream os;
    os << "[analysis]\n"
       << "cost = " << spec.cost.label() << '\n'
       << "tau_s = " << num(a.arcs.tau_s) << '\n'
       << "tau_len = " << a.arcs.tau_len << '\n'
       << "arcs.singular = " << singular << '\n'
       << "arcs.bang = " << bang << '\n'
       << "arcs.transition = " << transition << '\n'
       << "last_saturated_interval = " << a.last_saturated << '\n'
       << "sign_mismatch = " << num(a.sign_mismatch) << '\n'
       << "pontryagin.state_max = " << num(a.residual.state_max) << '\n'
       << "pontryagin.state_l2 = " << num(a.residual.state_l2) << '\n'
       << "pontryagin.adjoint_max = " << num(a.residual.adjoint_max) << '\n'
       << "pontryagin.adjoint_l2 = " << num(a.residual.adjoint_l2) << '\n'
       << "pontryagin.argmin_max = " << num(a.residual.argmin_max) << '\n'
       << "pontryagin.argmin_l2 = " << num(a.residual.argmin_l2) << '\n';
    if (a.singular) {
        os << "singular.points = " << a.singular->points << '\n'
           << "singular.scale = " << num(a.singular->scale) << '\n'
           << "singular.proof_error = " << num(a.singular->proof_error) << '\n'
           << "singular.printed_error = " << num(a.singular->printed_error) << '\n'
           << "singular.theorem_error = " << num(a.singular->theorem_error) << '\n';
    }
    if (!a.singular_note.empty()) os << "singular.note = " << a.singular_note << '\n';
    out.content[slug + "/analysis.txt"] = os.str();
}

Trajectory fine_replay(const PHSystem& sys, const VectorXd& x0, const MatrixXd& controls, const TimeGrid& coarse,
                       int n_fine) {
    const TimeGrid fine(coarse.T, n_fine);
    return simulate(sys, x0, resample_controls(controls, coarse, fine), fine);
}

struct LoadedEntry {
    CostEntry entry;
    Trajectory traj;
    MatrixXd interval_adjoints;
};

LoadedEntry load_entry(const fs::path& dir, const ScenarioConfig& cfg, const ScenarioModel& model,
                       const CostEntry& entry) {
    const int n = model.sys->n();
    const int m = model.sys->m();
    const TimeGrid grid(cfg.T, cfg.N);
    const Csv tr = read_csv(dir / entry.slug() / "trajectory.csv");
    if (tr.rows.rows() != grid.N + 1) throw ConfigError("trajectory.csv of " + entry.slug() + " has the wrong length");
    LoadedEntry out;
    out.entry = entry;
    out.traj.grid = grid;
    out.traj.states.resize(n, grid.N + 1);
    out.traj.controls.resize(m, grid.N);
    for (int i = 0; i < n; ++i) {
        const int c = tr.column("x_" + std::to_string(i + 1));
        if (c < 0) throw ConfigError("trajectory.csv of " + entry.slug() + " lacks state columns");
        out.traj.states.row(i) = tr.rows.col(c).transpose();
    }
    for (int i = 0; i < m; ++i) {
        const int c = tr.column("u_" + std::to_string(i + 1));
        if (c < 0) throw ConfigError("trajectory.csv of " + entry.slug() + " lacks control columns");
        out.traj.controls.row(i) = tr.rows.col(c).head(grid.N).transpose();
    }
    const Csv adj = read_csv(dir / entry.slug() / "adjoint.csv");
    if (adj.rows.rows() != grid.N || adj.rows.cols() != n + 1)
        throw ConfigError("adjoint.csv of " + entry.slug() + " has the wrong shape");
    out.interval_adjoints = adj.rows.rightCols(n).transpose();
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

std::string CostEntry::slug() const {
    switch (kind) {
        case EntryKind::Uncontrolled: return "uncontrolled";
        case EntryKind::SuppliedEnergy: return "supplied_energy";
        case EntryKind::Quadratic: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "quadratic_mu_%g", mu);
            return buf;
        }
    }
    return "";
}

RowKind CostEntry::row_kind() const {
    switch (kind) {
        case EntryKind::Uncontrolled: return RowKind::Uncontrolled;
        case EntryKind::Quadratic: return RowKind::Quadratic;
        case EntryKind::SuppliedEnergy: return RowKind::SuppliedEnergy;
    }
    return RowKind::Uncontrolled;
}

void ScenarioConfig::validate() const {
    if (structure_file.empty() && !frame) throw ConfigError("scenario: no structure source");
    if (weight == WeightKind::MatrixFile && weight_file.empty()) throw ConfigError("scenario: weight.file missing");
    if (costs.empty()) throw ConfigError("scenario: no cost entries");
    std::set<std::string> slugs;
    for (const auto& c : costs) {
        if (c.kind == EntryKind::Quadratic && !(c.mu > 0)) throw ConfigError("scenario: mu must be positive");
        if (!slugs.insert(c.slug()).second) throw ConfigError("scenario: duplicate cost entry " + c.slug());
    }
    if (!(T > 0) || !std::isfinite(T)) throw ConfigError("scenario: T must be positive");
    if (N < 1) throw ConfigError("scenario: N must be at least 1");
    if (N_fine < N) throw ConfigError("scenario: N_fine must be at least N");
    if (!(u_max > 0) || !std::isfinite(u_max)) throw ConfigError("scenario: u_max must be positive");
    if (x0.kind == X0Kind::File && x0.file.empty()) throw ConfigError("scenario: x0.file missing");
    if (x0.kind != X0Kind::File && !(x0.energy > 0) && !(x0.kind == X0Kind::Modal && x0.amplitude > 0))
        throw ConfigError("scenario: x0.energy must be positive");
    if (x0.kind == X0Kind::Modal && x0.mode < 1) throw ConfigError("scenario: x0.mode is 1-based");
    for (double f : horizons)
        if (!(f > 0)) throw ConfigError("scenario: turnpike horizons must be positive");
}

ScenarioConfig parse_scenario(std::string_view text, const std::string& origin, const std::string& base_dir) {
    const ConfigDocument doc = ConfigDocument::parse(text, origin);
    ScenarioConfig cfg;
    cfg.base_dir = base_dir;
    static const char* known[] = {"scenario", "structure", "weight", "costs", "grid", "box", "x0", "turnpike"};
    for (const auto& sec : doc.sections())
        if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return sec.name == k; }) ==
            std::end(known))
            throw ConfigError(doc.where(sec.line) + ": unknown section [" + sec.name + "]");

    if (const auto* sec = doc.find("scenario")) {
        check_keys(doc, *sec, {"name"});
        if (const auto* e = sec->find("name")) cfg.name = e->value;
    }

    {
        const auto& sec = doc.require("structure");
        check_keys(doc, sec, {"file", "storeys", "bay_width", "storey_height", "layout", "alpha1", "alpha2"});
        if (const auto* e = sec.find("file")) {
            if (sec.entries.size() != 1)
                throw ConfigError(doc.where(e->line) + ": structure.file excludes generator parameters");
            cfg.structure_file = e->value;
        } else {
            FrameParameters p = default_frame_parameters();
            for (const auto& e : sec.entries) {
                const std::string f = field(doc, sec, e);
                if (e.key == "storeys") p.storeys = static_cast<int>(parse_int(e.value, f));
                else if (e.key == "bay_width") p.bay_width = parse_double(e.value, f);
                else if (e.key == "storey_height") p.storey_height = parse_double(e.value, f);
                else if (e.key == "alpha1") p.damping.alpha_mass = parse_double(e.value, f);
                else if (e.key == "alpha2") p.damping.alpha_stiffness = parse_double(e.value, f);
                else if (e.key == "layout") {
                    if (e.value == "three-storey") p.layout = ActuatorLayout::ThreeStorey;
                    else if (e.value == "none") p.layout = ActuatorLayout::None;
                    else throw ConfigError(f + ": expected three-storey or none");
                }
            }
            cfg.frame = p;
        }
    }

    if (const auto* sec = doc.find("weight")) {
        check_keys(doc, *sec, {"kind", "file"});
        if (const auto* e = sec->find("kind")) {
            if (e->value == "full-hamiltonian") cfg.weight = WeightKind::FullHamiltonian;
            else if (e->value == "upmost-level") cfg.weight = WeightKind::UpmostLevel;
            else if (e->value == "matrix") cfg.weight = WeightKind::MatrixFile;
            else throw ConfigError(field(doc, *sec, *e) + ": expected full-hamiltonian, upmost-level or matrix");
        }
        if (const auto* e = sec->find("file")) cfg.weight_file = e->value;
    }

    {
        const auto& sec = doc.require("costs");
        check_keys(doc, sec, {"uncontrolled", "quadratic", "supplied_energy"});
        bool unc = false, se = false;
        std::vector<double> mus;
        for (const auto& e : sec.entries) {
            const std::string f = field(doc, sec, e);
            if (e.key == "uncontrolled") unc = parse_bool(e.value, f);
            else if (e.key == "supplied_energy") se = parse_bool(e.value, f);
            else
                for (const auto& tok : split_list(e.value)) mus.push_back(parse_double(tok, f));
        }
        std::sort(mus.begin(), mus.end(), std::greater<>());
        if (unc) cfg.costs.push_back({EntryKind::Uncontrolled, 0.0});
        for (double mu : mus) cfg.costs.push_back({EntryKind::Quadratic, mu});
        if (se) cfg.costs.push_back({EntryKind::SuppliedEnergy, 0.0});
    }

    if (const auto* sec = doc.find("grid")) {
        check_keys(doc, *sec, {"T", "N", "N_fine"});
        for (const auto& e : sec->entries) {
            const std::string f = field(doc, *sec, e);
            if (e.key == "T") cfg.T = parse_double(e.value, f);
            else if (e.key == "N") cfg.N = static_cast<int>(parse_int(e.value, f));
            else cfg.N_fine = static_cast<int>(parse_int(e.value, f));
        }
    }

    if (const auto* sec = doc.find("box")) {
        check_keys(doc, *sec, {"u_max"});
        if (const auto* e = sec->find("u_max")) cfg.u_max = parse_force(e->value, field(doc, *sec, *e));
    }

    if (const auto* sec = doc.find("x0")) {
        check_keys(doc, *sec, {"recipe", "energy", "mode", "amplitude", "file"});
        for (const auto& e : sec->entries) {
            const std::string f = field(doc, *sec, e);
            if (e.key == "recipe") {
                if (e.value == "static-deflection") cfg.x0.kind = X0Kind::StaticDeflection;
                else if (e.value == "modal") cfg.x0.kind = X0Kind::Modal;
                else if (e.value == "file") cfg.x0.kind = X0Kind::File;
                else throw ConfigError(f + ": expected static-deflection, modal or file");
            } else if (e.key == "energy") cfg.x0.energy = parse_double(e.value, f);
            else if (e.key == "mode") cfg.x0.mode = static_cast<int>(parse_int(e.value, f));
            else if (e.key == "amplitude") cfg.x0.amplitude = parse_double(e.value, f);
            else cfg.x0.file = e.value;
        }
    }

    if (const auto* sec = doc.find("turnpike")) {
        check_keys(doc, *sec, {"horizons"});
        if (const auto* e = sec->find("horizons"))
            for (const auto& tok : split_list(e->value)) cfg.horizons.push_back(parse_double(tok, field(doc, *sec, *e)));
    }

    cfg.validate();
    return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
    const std::string base = fs::path(path).parent_path().string();
    return parse_scenario(read_text_file(path), path, base.empty() ? "." : base);
}

std::string format_scenario(const ScenarioConfig& cfg) {
    std::ostringstream os;
    os << "[scenario]\nname = " << cfg.name << "\n\n[structure]\n";
    if (!cfg.structure_file.empty()) {
        os << "file = " << cfg.structure_file << '\n';
    } else {
        const FrameParameters& p = *cfg.frame;
        os << "storeys = " << p.storeys << "\nbay_width = " << num(p.bay_width)
           << "\nstorey_height = " << num(p.storey_height)
           << "\nlayout = " << (p.layout == ActuatorLayout::None ? "none" : "three-storey")
           << "\nalpha1 = " << num(p.damping.alpha_mass) << "\nalpha2 = " << num(p.damping.alpha_stiffness) << '\n';
    }
    os << "\n[weight]\nkind = " << weight_name(cfg.weight) << '\n';
    if (cfg.weight == WeightKind::MatrixFile) os << "file = " << cfg.weight_file << '\n';
    os << "\n[costs]\n";
    std::string mus;
    bool unc = false, se = false;
    for (const auto& c : cfg.costs) {
        if (c.kind == EntryKind::Uncontrolled) unc = true;
        else if (c.kind == EntryKind::SuppliedEnergy) se = true;
        else mus += (mus.empty() ? "" : ", ") + num(c.mu);
    }
    os << "uncontrolled = " << (unc ? "yes" : "no") << '\n';
    if (!mus.empty()) os << "quadratic = " << mus << '\n';
    os << "supplied_energy = " << (se ? "yes" : "no") << '\n';
    os << "\n[grid]\nT = " << num(cfg.T) << "\nN = " << cfg.N << "\nN_fine = " << cfg.N_fine << '\n';
    os << "\n[box]\nu_max = " << num(cfg.u_max) << '\n';
    os << "\n[x0]\nrecipe = " << x0_name(cfg.x0.kind) << '\n';
    if (cfg.x0.kind == X0Kind::File) os << "file = " << cfg.x0.file << '\n';
    else os << "energy = " << num(cfg.x0.energy) << '\n';
    if (cfg.x0.kind == X0Kind::Modal) os << "mode = " << cfg.x0.mode << "\namplitude = " << num(cfg.x0.amplitude) << '\n';
    if (!cfg.horizons.empty()) {
        os << "\n[turnpike]\nhorizons = ";
        for (std::size_t i = 0; i < cfg.horizons.size(); ++i) os << (i ? ", " : "") << num(cfg.horizons[i]);
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

MatrixXd upmost_level_weight(const PHSystem& sys, const StructureSpec& structure) {
    if (!sys.origin()) throw ConfigError("upmost-level weight needs a structural model");
    const SecondOrderModel& mo = *sys.origin();
    const int nd = mo.n_dof();
    const std::vector<int> top = structure.upmost_nodes();
    VectorXd mask = VectorXd::Zero(sys.n());
    for (int i = 0; i < nd; ++i)
        if (std::find(top.begin(), top.end(), mo.dof_labels[i].node_id) != top.end()) mask[i] = mask[nd + i] = 1.0;
    if (mask.sum() == 0) throw InvariantError("upmost-level weight: no free DOFs on the upmost level");
    return mask.asDiagonal() * sys.Q() * mask.asDiagonal();
}

VectorXd initial_state(const PHSystem& sys, const X0Recipe& recipe, const std::string& base_dir) {
    VectorXd x0 = VectorXd::Zero(sys.n());
    if (recipe.kind == X0Kind::File) {
        const std::string path = resolve(base_dir, recipe.file);
        std::ifstream is(path);
        if (!is) throw ConfigError("x0: cannot read " + path);
        const MatrixXd v = read_triplets(is);
        if (v.rows() != sys.n() || v.cols() != 1)
            throw ConfigError("x0: " + path + " must hold an n x 1 vector (n = " + std::to_string(sys.n()) + ")");
        x0 = v.col(0);
    } else {
        if (!sys.origin()) throw ConfigError("x0: static-deflection and modal recipes need a structural model");
        const SecondOrderModel& mo = *sys.origin();
        const int nd = mo.n_dof();
        VectorXd q;
        if (recipe.kind == X0Kind::StaticDeflection) {
            VectorXd f = VectorXd::Zero(nd);
            for (int i = 0; i < nd; ++i)
                if (mo.dof_labels[i].axis == UX) f[i] = 1.0;
            Eigen::SimplicialLDLT<SparseMatrix> ldlt(mo.K);
            if (ldlt.info() != Eigen::Success) throw InvariantError("x0: stiffness factorization failed");
            q = ldlt.solve(f);
        } else {
            if (recipe.mode > nd) throw ConfigError("x0: mode index exceeds the number of DOFs");
            Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(MatrixXd(mo.K), MatrixXd(mo.M));
            if (es.info() != Eigen::Success) throw InvariantError("x0: modal analysis failed");
            q = es.eigenvectors().col(recipe.mode - 1);
            const Eigen::Index imax = [&] {
                Eigen::Index i = 0;
                q.cwiseAbs().maxCoeff(&i);
                return i;
            }();
            q /= q[imax];  // deterministic sign and unit peak
        }
        x0.tail(nd) = q;
        if (recipe.kind == X0Kind::Modal && recipe.amplitude > 0) {
            x0 *= recipe.amplitude;
        } else {
            const double H = hamiltonian(sys, x0);
            if (!(H > 0)) throw InvariantError("x0: recipe yields zero energy");
            x0 *= std::sqrt(recipe.energy / H);
        }
    }
    if (!(hamiltonian(sys, x0) > 0)) throw InvariantError("x0: initial energy must be positive");
    return x0;
}

ScenarioModel build_model(const ScenarioConfig& cfg) {
    cfg.validate();
    ScenarioModel model;
    model.structure = cfg.structure_file.empty() ? generate_frame(*cfg.frame)
                                                 : load_structure_spec(resolve(cfg.base_dir, cfg.structure_file));
    const SecondOrderModel mo = assemble(model.structure);
    if (mo.n_inputs() == 0) throw ConfigError("scenario: the structure has no actuators");
    model.sys = std::make_shared<const PHSystem>(to_port_hamiltonian(mo));
    const PHSystem& sys = *model.sys;

    switch (cfg.weight) {
        case WeightKind::FullHamiltonian: model.W = sys.Q(); break;
        case WeightKind::UpmostLevel: model.W = upmost_level_weight(sys, model.structure); break;
        case WeightKind::MatrixFile: {
            const std::string path = resolve(cfg.base_dir, cfg.weight_file);
            std::ifstream is(path);
            if (!is) throw ConfigError("weight: cannot read " + path);
            model.W = read_triplets(is);
            if (model.W.rows() != sys.n() || model.W.cols() != sys.n())
                throw ConfigError("weight: " + path + " must be n x n (n = " + std::to_string(sys.n()) + ")");
            break;
        }
    }
    model.x0 = initial_state(sys, cfg.x0, cfg.base_dir);

    const int nd = mo.n_dof();
    for (int id : model.structure.upmost_nodes())
        if (const auto idx = mo.dof_index(id, UX)) model.upmost_lateral.push_back(nd + *idx);
    return model;
}

OCPSpec make_ocp(const ScenarioModel& model, const CostEntry& entry, const TimeGrid& grid, double u_max) {
    OCPSpec spec;
    spec.sys = model.sys;
    spec.W = model.W;
    spec.x0 = model.x0;
    spec.grid = grid;
    const int m = model.sys->m();
    switch (entry.kind) {
        case EntryKind::Uncontrolled:
            spec.cost = CostSpec::supplied_energy();
            spec.box = ControlBox::symmetric(m, 0.0);
            break;
        case EntryKind::Quadratic:
            spec.cost = CostSpec::quadratic(entry.mu);
            spec.box = ControlBox::symmetric(m, u_max);
            break;
        case EntryKind::SuppliedEnergy:
            spec.cost = CostSpec::supplied_energy();
            spec.box = ControlBox::symmetric(m, u_max);
            break;
    }
    spec.validate();
    return spec;
}

EntryResult run_entry(const ScenarioModel& model, const ScenarioConfig& cfg, const CostEntry& entry,
                      const OCPSolverSettings& settings) {
    EntryResult r;
    r.entry = entry;
    r.spec = make_ocp(model, entry, TimeGrid(cfg.T, cfg.N), cfg.u_max);
    r.solution = solve_ocp(r.spec, settings);
    check_ledger(r.solution.ledger, entry.slug() + " (coarse grid)");
    r.fine = fine_replay(*model.sys, model.x0, r.solution.trajectory.controls, r.spec.grid, cfg.N_fine);
    r.fine_ledger = energy_audit(*model.sys, r.fine);
    check_ledger(r.fine_ledger, entry.slug() + " (fine replay)");
    return r;
}

EntryAnalysis analyze_entry(const OCPSpec& spec, const Trajectory& traj, const MatrixXd& interval_adjoints,
                            double tau_rel) {
    const PHSystem& sys = *spec.sys;
    const int m = sys.m();
    const int N = traj.grid.N;
    EntryAnalysis a;
    if (spec.cost.kind == CostKind::SuppliedEnergy) {
        a.s = switching_function(sys, traj, interval_adjoints);
    } else {
        a.s = sys.B().transpose() * interval_adjoints + 2.0 * spec.cost.mu * traj.controls;
    }
    a.arcs = classify_arcs(a.s, tau_rel);
    a.residual = pontryagin_residual(spec, traj, interval_adjoints);

    if (!spec.box.degenerate()) {
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < m; ++i) {
                const double u = traj.controls(i, k);
                const double lo = spec.box.lower[i], hi = spec.box.upper[i];
                const bool at_hi = std::abs(u - hi) <= 1e-9 * std::max(1.0, std::abs(hi));
                const bool at_lo = std::abs(u - lo) <= 1e-9 * std::max(1.0, std::abs(lo));
                if (!at_hi && !at_lo) continue;
                a.last_saturated = k;
                const double s = a.s(i, k);
                if (std::abs(s) > a.arcs.tau_s && ((at_hi && s > 0) || (at_lo && s < 0)))
                    a.sign_mismatch = std::max(a.sign_mismatch, std::abs(s));
            }
    }

    if (spec.cost.kind == CostKind::SuppliedEnergy && !spec.box.degenerate()) {
        bool any = false;
        for (const Arc& arc : a.arcs.arcs) any = any || arc.kind == ArcKind::Singular;
        if (any) {
            try {
                a.singular = check_singular_arcs(spec, traj, interval_adjoints, a.arcs);
            } catch (const InvariantError& e) {
                a.singular_note = e.what();
            }
        } else {
            a.singular_note = "no singular arcs";
        }
    }
    return a;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

RunReport run_scenario(const ScenarioConfig& cfg_in, const std::string& out_dir, const RunOptions& opt) {
    ScenarioConfig cfg = cfg_in;
    if (!opt.horizons.empty()) cfg.horizons = opt.horizons;
    if (opt.fine_intervals) cfg.N_fine = *opt.fine_intervals;
    cfg.validate();
    if (!cfg.horizons.empty() && cfg.horizons.size() < 3)
        throw ConfigError("turnpike sweep needs at least three horizons");
    auto log = [&](const std::string& msg) {
        if (opt.log) opt.log(msg);
    };

    const ScenarioModel model = build_model(cfg);
    const PHSystem& sys = *model.sys;
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    std::map<std::string, std::string> files;

    // Self-contained copy of the inputs.
    ScenarioConfig resolved = cfg;
    resolved.base_dir = ".";
    resolved.structure_file = "structure.cfg";
    resolved.frame.reset();
    resolved.weight = WeightKind::MatrixFile;
    resolved.weight_file = "W.txt";
    resolved.x0 = X0Recipe{X0Kind::File, 0.0, 1, 0.0, "x0.txt"};
    files["structure.cfg"] = format_structure_spec(model.structure);
    {
        std::ostringstream os;
        write_triplets(os, model.W, std::string("state weight W, ") + weight_name(cfg.weight));
        files["W.txt"] = os.str();
    }
    {
        std::ostringstream os;
        write_triplets(os, model.x0, std::string("initial state, ") + x0_name(cfg.x0.kind));
        files["x0.txt"] = os.str();
    }
    files["scenario.cfg"] = "# resolved copy of " + cfg.name + "\n" + format_scenario(resolved);

    log("model: n = " + std::to_string(sys.n()) + ", m = " + std::to_string(sys.m()) +
        ", H(x0) = " + num(hamiltonian(sys, model.x0)) + " J");

    const int count = static_cast<int>(cfg.costs.size());
    std::vector<EntryResult> results(static_cast<std::size_t>(count));
    std::vector<EntryFiles> entry_files(static_cast<std::size_t>(count));
    std::vector<double> seconds(static_cast<std::size_t>(count));
    std::mutex log_mutex;
    parallel_for(count, opt.jobs, [&](int i) {
        const CostEntry& entry = cfg.costs[static_cast<std::size_t>(i)];
        {
            std::lock_guard<std::mutex> lock(log_mutex);
            log("solving " + entry.slug());
        }
        EntryResult r = run_entry(model, cfg, entry, opt.solver);
        const std::string slug = entry.slug();
        EntryFiles& ef = entry_files[static_cast<std::size_t>(i)];
        TrajectoryCsvOptions full;
        full.precision = 17;
        std::ostringstream tr;
        write_trajectory_csv(tr, sys, r.solution.trajectory, full);
        ef.content[slug + "/trajectory.csv"] = tr.str();
        ef.content[slug + "/adjoint.csv"] =
            matrix_csv("t_mid", midpoint_times(r.spec.grid), "lambda_", r.solution.interval_adjoints, 17);
        TrajectoryCsvOptions sub;
        sub.state_columns = model.upmost_lateral;
        sub.write_all_states = false;
        std::ostringstream fine;
        write_trajectory_csv(fine, sys, r.fine, sub);
        ef.content[slug + "/fine.csv"] = fine.str();
        const EntryAnalysis a = analyze_entry(r.spec, r.solution.trajectory, r.solution.interval_adjoints);
        add_analysis_files(ef, slug, r.spec, r.solution.trajectory, a);
        for (const auto& [path, text] : ef.content) write_file_atomic(dir / path, text);
        seconds[static_cast<std::size_t>(i)] = r.solution.solve_seconds;
        {
            std::lock_guard<std::mutex> lock(log_mutex);
            log(slug + ": " + r.solution.status + ", withdrawn " + num(r.fine_ledger.withdrawn) + " J");
        }
        results[static_cast<std::size_t>(i)] = std::move(r);
    });

    RunReport report;
    std::ostringstream summary, timing;
    summary << "# scenario " << cfg.name << "\n";
    std::vector<ComparisonRow> rows;
    for (int i = 0; i < count; ++i) {
        const EntryResult& r = results[static_cast<std::size_t>(i)];
        const OCPSolution& s = r.solution;
        summary << "\n[" << r.entry.slug() << "]\n"
                << "cost = " << (r.entry.kind == EntryKind::Uncontrolled ? "uncontrolled" : r.spec.cost.label())
                << "\nstatus = " << s.status << "\nT = " << num(r.spec.grid.T) << "\nN = " << r.spec.grid.N
                << "\nN_fine = " << r.fine.grid.N << "\nobjective = " << num(s.objective)
                << "\ndirect_objective = " << num(s.direct_objective) << '\n'
                << ledger_records("", s.ledger) << ledger_records("fine.", r.fine_ledger)
                << "kkt.stationarity = " << num(s.kkt.stationarity) << "\nkkt.primal = " << num(s.kkt.primal)
                << "\nkkt.complementarity = " << num(s.kkt.complementarity)
                << "\nkkt.bound_violation = " << num(s.kkt.bound_violation)
                << "\ndynamics_residual = " << num(s.dynamics_residual) << "\nbox_violation = " << num(s.box_violation)
                << "\niterations = " << s.iterations << "\nfactorizations = " << s.factorizations << '\n';
        timing << r.entry.slug() << " = " << seconds[static_cast<std::size_t>(i)] << '\n';
        rows.push_back({r.entry.row_kind(), r.entry.mu, r.fine_ledger, r.spec.grid});
        report.entries.push_back(r.entry.slug());
    }
    report.table = compare_costs(rows);
    files["summary.txt"] = summary.str();
    files["comparison.csv"] = comparison_csv(report.table);
    files["comparison.txt"] = comparison_text(report.table);

    if (!cfg.horizons.empty()) {
        std::vector<double> factors = cfg.horizons;
        std::sort(factors.begin(), factors.end());
        std::vector<const CostEntry*> swept;
        for (const auto& c : cfg.costs)
            if (c.kind != EntryKind::Uncontrolled) swept.push_back(&c);
        const int nf = static_cast<int>(factors.size());
        std::vector<Trajectory> trajs(swept.size() * factors.size());
        parallel_for(static_cast<int>(trajs.size()), opt.jobs, [&](int t) {
            const CostEntry& entry = *swept[static_cast<std::size_t>(t / nf)];
            const double f = factors[static_cast<std::size_t>(t % nf)];
            const int N = std::max(1, static_cast<int>(std::lround(f * cfg.N)));
            {
                std::lock_guard<std::mutex> lock(log_mutex);
                log("turnpike " + entry.slug() + ": T = " + num(f * cfg.T) + ", N = " + std::to_string(N));
            }
            const OCPSpec spec = make_ocp(model, entry, TimeGrid(f * cfg.T, N), cfg.u_max);
            trajs[static_cast<std::size_t>(t)] = solve_ocp(spec, opt.solver).trajectory;
        });
        const KernelProjector proj = kernel_projector(sys, model.W);
        for (std::size_t e = 0; e < swept.size(); ++e) {
            const std::vector<Trajectory> group(trajs.begin() + static_cast<long>(e * factors.size()),
                                                trajs.begin() + static_cast<long>((e + 1) * factors.size()));
            const TurnpikeReport rep = turnpike_metrics(group, proj);
            const std::string slug = swept[e]->slug();
            std::ostringstream csv, txt;
            csv << "T,distance_integral,state_integral,control_integral,combined_integral,fit_c,fit_omega\n";
            for (const auto& smp : rep.samples)
                csv << num(smp.T) << ',' << num(smp.distance_integral) << ',' << num(smp.state_integral) << ','
                    << num(smp.control_integral) << ',' << num(smp.combined_integral) << ',' << num(smp.fit_c) << ','
                    << num(smp.fit_omega) << '\n';
            txt << "[turnpike]\ncost = " << slug << "\nkernel_dimension = " << rep.kernel_dimension
                << "\ncombined_variation = " << num(rep.combined_variation)
                << "\ndistance_variation = " << num(rep.distance_variation)
                << "\nplateau_tolerance = " << num(rep.plateau_tolerance)
                << "\nplateau = " << (rep.plateau ? "yes" : "no") << "\nnote = " << rep.note << '\n';
            files["turnpike/" + slug + ".csv"] = csv.str();
            files["turnpike/" + slug + ".txt"] = txt.str();
        }
    }

    for (const auto& [path, text] : files) write_file_atomic(dir / path, text);
    write_file_atomic(dir / "timing.txt", timing.str());
    for (const auto& [path, text] : files) report.files.push_back(path);
    for (const auto& ef : entry_files)
        for (const auto& [path, text] : ef.content) report.files.push_back(path);
    report.files.push_back("timing.txt");
    std::sort(report.files.begin(), report.files.end());
    return report;
}

std::vector<std::string> analyze_run(const std::string& run_dir, double tau_rel) {
    const fs::path dir(run_dir);
    const ScenarioConfig cfg = load_scenario((dir / "scenario.cfg").string());
    const ScenarioModel model = build_model(cfg);
    std::vector<std::string> written;
    for (const auto& entry : cfg.costs) {
        const LoadedEntry le = load_entry(dir, cfg, model, entry);
        const OCPSpec spec = make_ocp(model, entry, le.traj.grid, cfg.u_max);
        const EntryAnalysis a = analyze_entry(spec, le.traj, le.interval_adjoints, tau_rel);
        EntryFiles ef;
        add_analysis_files(ef, entry.slug(), spec, le.traj, a);
        for (const auto& [path, text] : ef.content) {
            write_file_atomic(dir / path, text);
            written.push_back(path);
        }
    }
    return written;
}

std::vector<std::string> emit_plot_data(const std::string& run_dir) {
    const fs::path dir(run_dir);
    const ScenarioConfig cfg = load_scenario((dir / "scenario.cfg").string());
    const ScenarioModel model = build_model(cfg);
    const PHSystem& sys = *model.sys;
    const TimeGrid coarse(cfg.T, cfg.N);
    const TimeGrid fine(cfg.T, cfg.N_fine);

    std::vector<std::string> slugs;
    std::vector<VectorXd> withdrawn, energy, displacement;
    std::map<std::string, std::string> files;
    for (const auto& entry : cfg.costs) {
        const LoadedEntry le = load_entry(dir, cfg, model, entry);
        const Trajectory tr = fine_replay(sys, model.x0, le.traj.controls, coarse, cfg.N_fine);
        slugs.push_back(entry.slug());
        withdrawn.push_back(cumulative_withdrawn(sys, tr));
        VectorXd H(fine.N + 1), d = VectorXd::Zero(fine.N + 1);
        for (int k = 0; k <= fine.N; ++k) {
            H[k] = hamiltonian(sys, tr.states.col(k));
            for (int idx : model.upmost_lateral) d[k] += tr.states(idx, k);
        }
        if (!model.upmost_lateral.empty()) d /= static_cast<double>(model.upmost_lateral.size());
        energy.push_back(H);
        displacement.push_back(d);

        const OCPSpec spec = make_ocp(model, entry, coarse, cfg.u_max);
        std::ostringstream os;
        os << "t";
        for (int i = 0; i < sys.m(); ++i) os << ",u_" << i + 1;
        os << ",u_min,u_max\n";
        char buf[48];
        for (int k = 0; k <= fine.N; ++k) {
            std::snprintf(buf, sizeof buf, "%.12g", fine.t(k));
            os << buf;
            const int uk = std::min(k, fine.N - 1);
            for (int i = 0; i < sys.m(); ++i) {
                std::snprintf(buf, sizeof buf, ",%.12g", tr.controls(i, uk));
                os << buf;
            }
            std::snprintf(buf, sizeof buf, ",%.12g,%.12g\n", spec.box.lower.size() ? spec.box.lower.minCoeff() : 0.0,
                          spec.box.upper.size() ? spec.box.upper.maxCoeff() : 0.0);
            os << buf;
        }
        files["plot/controls_" + entry.slug() + ".csv"] = os.str();
    }

    auto panel = [&](const std::vector<VectorXd>& series) {
        std::ostringstream os;
        os << "t";
        for (const auto& s : slugs) os << ',' << s;
        os << '\n';
        char buf[48];
        for (int k = 0; k <= fine.N; ++k) {
            std::snprintf(buf, sizeof buf, "%.12g", fine.t(k));
            os << buf;
            for (const auto& v : series) {
                std::snprintf(buf, sizeof buf, ",%.12g", v[k]);
                os << buf;
            }
            os << '\n';
        }
        return os.str();
    };
    files["plot/withdrawn.csv"] = panel(withdrawn);
    files["plot/hamiltonian.csv"] = panel(energy);
    files["plot/displacement.csv"] = panel(displacement);

    std::vector<std::string> written;
    for (const auto& [path, text] : files) {
        write_file_atomic(dir / path, text);
        written.push_back(path);
    }
    return written;
}

}  // namespace phdamp
