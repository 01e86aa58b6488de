#include "phdamp/structure.hpp"

#include "phdamp/config_text.hpp"
#include "phdamp/error.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace phdamp {

double Material::effective_shear_modulus() const {
    return shear_modulus > 0.0 ? shear_modulus : youngs_modulus / (2.0 * (1.0 + 0.3));
}

double Material::effective_torsion_constant() const {
    return torsion_constant > 0.0 ? torsion_constant : inertia_y + inertia_z;
}

const Node* StructureSpec::find_node(int id) const {
    for (const auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

std::vector<int> StructureSpec::upmost_nodes(double tol) const {
    std::vector<int> ids;
    if (nodes.empty()) return ids;
    double top = nodes.front().position.z();
    for (const auto& n : nodes) top = std::max(top, n.position.z());
    for (const auto& n : nodes)
        if (n.position.z() >= top - tol) ids.push_back(n.id);
    return ids;
}

std::vector<int> StructureSpec::ground_nodes() const {
    std::vector<int> ids;
    for (const auto& n : nodes)
        if (n.constrained[UX] && n.constrained[UY] && n.constrained[UZ]) ids.push_back(n.id);
    return ids;
}

void validate(const StructureSpec& spec) {
    std::set<int> ids;
    for (const auto& n : spec.nodes) {
        if (!ids.insert(n.id).second)
            throw ConfigError("nodes: duplicate node id " + std::to_string(n.id));
        if (!n.position.allFinite())
            throw ConfigError("nodes: node " + std::to_string(n.id) + " has a non-finite position");
    }
    for (std::size_t i = 0; i < spec.elements.size(); ++i) {
        const auto& e = spec.elements[i];
        const std::string tag = "elements[" + std::to_string(i) + "]";
        const Node* a = spec.find_node(e.node_a);
        const Node* b = spec.find_node(e.node_b);
        if (!a || !b)
            throw ConfigError(tag + ": dangling node reference " +
                              std::to_string(a ? e.node_b : e.node_a));
        if ((b->position - a->position).norm() <= 1e-12)
            throw ConfigError(tag + ": degenerate element (zero length)");
        const auto& m = e.material;
        if (!(m.youngs_modulus > 0) || !(m.density > 0) || !(m.area > 0))
            throw ConfigError(tag + ": material needs positive E, rho and A");
        if (e.kind == ElementKind::Beam && (!(m.inertia_y > 0) || !(m.inertia_z > 0)))
            throw ConfigError(tag + ": beam needs positive Iy and Iz");
    }
    for (std::size_t i = 0; i < spec.actuators.size(); ++i) {
        const auto& act = spec.actuators[i];
        const std::string tag = "actuators[" + std::to_string(i) + "]";
        const Node* a = spec.find_node(act.node_a);
        const Node* b = spec.find_node(act.node_b);
        if (!a || !b)
            throw ConfigError(tag + ": dangling node reference " +
                              std::to_string(a ? act.node_b : act.node_a));
        if (act.node_a == act.node_b) throw ConfigError(tag + ": actuator endpoints coincide");
        if (std::abs(act.direction.norm() - 1.0) > 1e-9)
            throw ConfigError(tag + ": direction must be a unit vector");
    }
    const auto& d = spec.damping;
    if (!(d.alpha_mass >= 0) || !(d.alpha_stiffness >= 0) ||
        (d.alpha_mass == 0 && d.alpha_stiffness == 0))
        throw ConfigError("damping: alpha1, alpha2 must be >= 0 and not both zero");
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

namespace {

Material parse_section_properties(const ConfigEntry& entry, const std::string& field) {
    Material m;
    for (const auto& tok : entry.tokens) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw ConfigError(field + ": expected key=value, got '" + tok + "'");
        const std::string key = tok.substr(0, eq);
        const double v = parse_double(tok.substr(eq + 1), field + "." + key);
        if (key == "E") m.youngs_modulus = v;
        else if (key == "rho") m.density = v;
        else if (key == "A") m.area = v;
        else if (key == "Iy") m.inertia_y = v;
        else if (key == "Iz") m.inertia_z = v;
        else if (key == "J") m.torsion_constant = v;
        else if (key == "G") m.shear_modulus = v;
        else throw ConfigError(field + ": unknown property '" + key + "'");
    }
    return m;
}

std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

StructureSpec parse_structure_spec(std::string_view text, const std::string& origin) {
    const ConfigDocument doc = ConfigDocument::parse(text, origin);
    StructureSpec spec;

    for (const auto& e : doc.require("nodes").entries) {
        const std::string field = doc.where(e.line) + ": nodes." + e.key;
        if (e.tokens.size() != 3 && e.tokens.size() != 4)
            throw ConfigError(field + ": expected 'x y z [mask]'");
        Node n;
        n.id = static_cast<int>(parse_int(e.key, field));
        for (int k = 0; k < 3; ++k) n.position[k] = parse_double(e.tokens[k], field);
        if (e.tokens.size() == 4) {
            const auto& mask = e.tokens[3];
            if (mask.size() != 6 || mask.find_first_not_of("01") != std::string::npos)
                throw ConfigError(field + ": constraint mask must be six 0/1 flags");
            for (int k = 0; k < 6; ++k) n.constrained[k] = mask[k] == '1';
        }
        spec.nodes.push_back(n);
    }

    std::map<std::string, Material> sections;
    if (const auto* sec = doc.find("sections"))
        for (const auto& e : sec->entries)
            sections[e.key] = parse_section_properties(e, doc.where(e.line) + ": sections." + e.key);

    for (const auto& e : doc.require("elements").entries) {
        const std::string field = doc.where(e.line) + ": elements." + e.key;
        if (e.tokens.size() != 4) throw ConfigError(field + ": expected 'kind node_a node_b section'");
        Element el;
        if (e.tokens[0] == "beam") el.kind = ElementKind::Beam;
        else if (e.tokens[0] == "link") el.kind = ElementKind::Link;
        else throw ConfigError(field + ": unknown element kind '" + e.tokens[0] + "'");
        el.node_a = static_cast<int>(parse_int(e.tokens[1], field));
        el.node_b = static_cast<int>(parse_int(e.tokens[2], field));
        const auto it = sections.find(e.tokens[3]);
        if (it == sections.end()) throw ConfigError(field + ": unknown section '" + e.tokens[3] + "'");
        el.material = it->second;
        if (!spec.find_node(el.node_a) || !spec.find_node(el.node_b))
            throw ConfigError(field + ": dangling node reference");
        spec.elements.push_back(el);
    }

    if (const auto* sec = doc.find("actuators")) {
        for (const auto& e : sec->entries) {
            const std::string field = doc.where(e.line) + ": actuators." + e.key;
            if (e.tokens.size() != 2 && e.tokens.size() != 5)
                throw ConfigError(field + ": expected 'node_a node_b [dx dy dz]'");
            Actuator act;
            act.node_a = static_cast<int>(parse_int(e.tokens[0], field));
            act.node_b = static_cast<int>(parse_int(e.tokens[1], field));
            const Node* a = spec.find_node(act.node_a);
            const Node* b = spec.find_node(act.node_b);
            if (!a || !b) throw ConfigError(field + ": dangling node reference");
            if (e.tokens.size() == 5) {
                for (int k = 0; k < 3; ++k) act.direction[k] = parse_double(e.tokens[2 + k], field);
            } else {
                act.direction = b->position - a->position;
            }
            if (act.direction.norm() <= 1e-12) throw ConfigError(field + ": zero actuator direction");
            act.direction.normalize();
            spec.actuators.push_back(act);
        }
    }

    if (const auto* sec = doc.find("damping")) {
        if (const auto* e = sec->find("alpha1"))
            spec.damping.alpha_mass = parse_double(e->value, "damping.alpha1");
        if (const auto* e = sec->find("alpha2"))
            spec.damping.alpha_stiffness = parse_double(e->value, "damping.alpha2");
    }

    validate(spec);
    return spec;
}

StructureSpec load_structure_spec(const std::string& path) {
    return parse_structure_spec(read_text_file(path), path);
}

std::string format_structure_spec(const StructureSpec& spec) {
    std::ostringstream os;
    os << "[nodes]\n# id = x y z mask(ux uy uz rx ry rz)\n";
    for (const auto& n : spec.nodes) {
        os << n.id << " = " << format_number(n.position.x()) << ' ' << format_number(n.position.y())
           << ' ' << format_number(n.position.z()) << ' ';
        for (bool c : n.constrained) os << (c ? '1' : '0');
        os << '\n';
    }
    // One section per distinct material, in order of first use.
    std::vector<Material> mats;
    auto section_of = [&](const Material& m) {
        for (std::size_t i = 0; i < mats.size(); ++i) {
            const auto& o = mats[i];
            if (o.youngs_modulus == m.youngs_modulus && o.density == m.density && o.area == m.area &&
                o.inertia_y == m.inertia_y && o.inertia_z == m.inertia_z &&
                o.torsion_constant == m.torsion_constant && o.shear_modulus == m.shear_modulus)
                return i;
        }
        mats.push_back(m);
        return mats.size() - 1;
    };
    std::vector<std::size_t> elem_sections;
    for (const auto& e : spec.elements) elem_sections.push_back(section_of(e.material));
    os << "\n[sections]\n";
    for (std::size_t i = 0; i < mats.size(); ++i) {
        const auto& m = mats[i];
        os << "s" << i << " = E=" << format_number(m.youngs_modulus) << " rho=" << format_number(m.density)
           << " A=" << format_number(m.area);
        if (m.inertia_y > 0) os << " Iy=" << format_number(m.inertia_y);
        if (m.inertia_z > 0) os << " Iz=" << format_number(m.inertia_z);
        if (m.torsion_constant > 0) os << " J=" << format_number(m.torsion_constant);
        if (m.shear_modulus > 0) os << " G=" << format_number(m.shear_modulus);
        os << '\n';
    }
    os << "\n[elements]\n# id = kind node_a node_b section\n";
    for (std::size_t i = 0; i < spec.elements.size(); ++i) {
        const auto& e = spec.elements[i];
        os << i + 1 << " = " << (e.kind == ElementKind::Beam ? "beam" : "link") << ' ' << e.node_a << ' '
           << e.node_b << " s" << elem_sections[i] << '\n';
    }
    os << "\n[actuators]\n# id = node_a node_b dx dy dz\n";
    for (std::size_t i = 0; i < spec.actuators.size(); ++i) {
        const auto& a = spec.actuators[i];
        os << i + 1 << " = " << a.node_a << ' ' << a.node_b << ' ' << format_number(a.direction.x()) << ' '
           << format_number(a.direction.y()) << ' ' << format_number(a.direction.z()) << '\n';
    }
    os << "\n[damping]\nalpha1 = " << format_number(spec.damping.alpha_mass)
       << "\nalpha2 = " << format_number(spec.damping.alpha_stiffness) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Frame generator
// ---------------------------------------------------------------------------

FrameParameters default_frame_parameters() {
    FrameParameters p;
    p.bay_width = 1.0;
    p.storey_height = 1.7;
    // Square hollow steel column, 120 x 120 x 8 mm.
    p.column.youngs_modulus = 2.1e11;
    p.column.density = 7850.0;
    p.column.area = 3.58e-3;
    p.column.inertia_y = 7.52e-6;
    p.column.inertia_z = 7.52e-6;
    p.column.torsion_constant = 1.2e-5;
    // Round steel link, 60 mm solid bar.
    p.link.youngs_modulus = 2.1e11;
    p.link.density = 7850.0;
    p.link.area = 2.83e-3;
    return p;
}

StructureSpec generate_frame(const FrameParameters& p) {
    if (p.storeys < 1) throw ConfigError("generate_frame: storeys must be >= 1");
    if (!(p.bay_width > 0) || !(p.storey_height > 0))
        throw ConfigError("generate_frame: dimensions must be positive");
    if (p.diagonal_span < 1) throw ConfigError("generate_frame: diagonal_span must be >= 1");
    if (p.layout == ActuatorLayout::ThreeStorey && p.storeys < 3)
        throw ConfigError("generate_frame: three-storey actuator layout needs at least 3 storeys, got " +
                          std::to_string(p.storeys));

    const int span = p.layout == ActuatorLayout::ThreeStorey ? 3 : p.diagonal_span;
    StructureSpec spec;
    spec.damping = p.damping;
    const std::array<Eigen::Vector2d, 4> corners = {
        Eigen::Vector2d(0, 0), Eigen::Vector2d(p.bay_width, 0),
        Eigen::Vector2d(p.bay_width, p.bay_width), Eigen::Vector2d(0, p.bay_width)};
    auto node_id = [](int level, int corner) { return level * 4 + corner + 1; };

    for (int level = 0; level <= p.storeys; ++level) {
        for (int c = 0; c < 4; ++c) {
            Node n;
            n.id = node_id(level, c);
            n.position = {corners[c].x(), corners[c].y(), level * p.storey_height};
            if (level == 0) n.constrained = {true, true, true, false, false, true};
            spec.nodes.push_back(n);
        }
    }
    auto add = [&](ElementKind kind, int a, int b) {
        Element e;
        e.kind = kind;
        e.node_a = a;
        e.node_b = b;
        e.material = kind == ElementKind::Beam ? p.column : p.link;
        spec.elements.push_back(e);
    };
    auto add_actuator = [&](int a, int b) {
        Actuator act;
        act.node_a = a;
        act.node_b = b;
        act.direction = (spec.find_node(b)->position - spec.find_node(a)->position).normalized();
        spec.actuators.push_back(act);
    };

    for (int level = 0; level < p.storeys; ++level)
        for (int c = 0; c < 4; ++c) add(ElementKind::Beam, node_id(level, c), node_id(level + 1, c));
    for (int level = 1; level <= p.storeys; ++level) {
        for (int c = 0; c < 4; ++c) add(ElementKind::Link, node_id(level, c), node_id(level, (c + 1) % 4));
        add(ElementKind::Link, node_id(level, 0), node_id(level, 2));
    }

    // Face diagonals: full blocks of `span` storeys, then single storeys.
    const int blocks = p.storeys / span;
    for (int face = 0; face < 4; ++face) {
        const int c0 = face;
        const int c1 = (face + 1) % 4;
        for (int b = 0; b < blocks; ++b) {
            const int lo = b * span;
            const int hi = lo + span;
            const bool forward = b % 2 == 0;
            const int a = node_id(lo, forward ? c0 : c1);
            const int z = node_id(hi, forward ? c1 : c0);
            add(ElementKind::Link, a, z);
            if (p.layout == ActuatorLayout::ThreeStorey) add_actuator(a, z);
        }
        for (int level = blocks * span; level < p.storeys; ++level) {
            const bool forward = level % 2 == 0;
            add(ElementKind::Link, node_id(level, forward ? c0 : c1), node_id(level + 1, forward ? c1 : c0));
        }
    }
    if (p.layout == ActuatorLayout::ThreeStorey) {
        for (int c = 0; c < 4; ++c)
            for (int b = 0; b < blocks; ++b) add_actuator(node_id(b * span, c), node_id((b + 1) * span, c));
    }
    validate(spec);
    return spec;
}

// ---------------------------------------------------------------------------
// Element matrices
// ---------------------------------------------------------------------------

Eigen::Matrix3d element_frame(const Eigen::Vector3d& pos_a, const Eigen::Vector3d& pos_b) {
    const Eigen::Vector3d d = pos_b - pos_a;
    const double length = d.norm();
    if (!(length > 1e-12)) throw ConfigError("element_matrices: degenerate element (zero length)");
    const Eigen::Vector3d ex = d / length;
    const Eigen::Vector3d ref =
        std::abs(ex.z()) > 0.99 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitZ();
    const Eigen::Vector3d ey = ref.cross(ex).normalized();
    const Eigen::Vector3d ez = ex.cross(ey);
    Eigen::Matrix3d frame;
    frame.row(0) = ex;
    frame.row(1) = ey;
    frame.row(2) = ez;
    return frame;
}

namespace {

Eigen::Matrix<double, 12, 12> beam_local_stiffness(const Material& m, double L) {
    Eigen::Matrix<double, 12, 12> k = Eigen::Matrix<double, 12, 12>::Zero();
    const double E = m.youngs_modulus;
    const double ea = E * m.area / L;
    const double gj = m.effective_shear_modulus() * m.effective_torsion_constant() / L;
    const double L2 = L * L;
    const double L3 = L2 * L;
    const double Iz = m.inertia_z;
    const double Iy = m.inertia_y;

    k(0, 0) = k(6, 6) = ea;
    k(0, 6) = -ea;
    k(3, 3) = k(9, 9) = gj;
    k(3, 9) = -gj;

    // Bending in the local x-y plane: (uy, rz).
    k(1, 1) = k(7, 7) = 12 * E * Iz / L3;
    k(1, 7) = -12 * E * Iz / L3;
    k(1, 5) = k(1, 11) = 6 * E * Iz / L2;
    k(5, 7) = k(7, 11) = -6 * E * Iz / L2;
    k(5, 5) = k(11, 11) = 4 * E * Iz / L;
    k(5, 11) = 2 * E * Iz / L;

    // Bending in the local x-z plane: (uz, ry), rotation sign flipped.
    k(2, 2) = k(8, 8) = 12 * E * Iy / L3;
    k(2, 8) = -12 * E * Iy / L3;
    k(2, 4) = k(2, 10) = -6 * E * Iy / L2;
    k(4, 8) = k(8, 10) = 6 * E * Iy / L2;
    k(4, 4) = k(10, 10) = 4 * E * Iy / L;
    k(4, 10) = 2 * E * Iy / L;

    return k.selfadjointView<Eigen::Upper>();
}

Eigen::Matrix<double, 12, 12> beam_local_mass(const Material& m, double L) {
    Eigen::Matrix<double, 12, 12> mm = Eigen::Matrix<double, 12, 12>::Zero();
    const double rho_a_l = m.density * m.area * L;
    const double rho_ip_l = m.density * (m.inertia_y + m.inertia_z) * L;

    mm(0, 0) = mm(6, 6) = rho_a_l / 3.0;
    mm(0, 6) = rho_a_l / 6.0;
    mm(3, 3) = mm(9, 9) = rho_ip_l / 3.0;
    mm(3, 9) = rho_ip_l / 6.0;

    const double c = rho_a_l / 420.0;
    const double L2 = L * L;
    // x-y plane (uy=1, rz=5, uy=7, rz=11)
    mm(1, 1) = mm(7, 7) = 156 * c;
    mm(1, 7) = 54 * c;
    mm(1, 5) = 22 * L * c;
    mm(1, 11) = -13 * L * c;
    mm(5, 7) = 13 * L * c;
    mm(7, 11) = -22 * L * c;
    mm(5, 5) = mm(11, 11) = 4 * L2 * c;
    mm(5, 11) = -3 * L2 * c;
    // x-z plane (uz=2, ry=4, uz=8, ry=10)
    mm(2, 2) = mm(8, 8) = 156 * c;
    mm(2, 8) = 54 * c;
    mm(2, 4) = -22 * L * c;
    mm(2, 10) = 13 * L * c;
    mm(4, 8) = -13 * L * c;
    mm(8, 10) = 22 * L * c;
    mm(4, 4) = mm(10, 10) = 4 * L2 * c;
    mm(4, 10) = -3 * L2 * c;

    return mm.selfadjointView<Eigen::Upper>();
}

}  // namespace

ElementMatrices element_matrices(const Element& element, const Eigen::Vector3d& pos_a,
                                 const Eigen::Vector3d& pos_b) {
    const Eigen::Matrix3d frame = element_frame(pos_a, pos_b);
    const double L = (pos_b - pos_a).norm();
    const Material& m = element.material;
    ElementMatrices out;

    if (element.kind == ElementKind::Link) {
        out.dofs_per_node = 3;
        const Eigen::Vector3d e = frame.row(0).transpose();
        const Eigen::Matrix3d axial = (m.youngs_modulus * m.area / L) * (e * e.transpose());
        out.stiffness.resize(6, 6);
        out.stiffness << axial, -axial, -axial, axial;
        const double rho_a_l = m.density * m.area * L;
        const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
        out.mass.resize(6, 6);
        out.mass << (rho_a_l / 3.0) * I, (rho_a_l / 6.0) * I, (rho_a_l / 6.0) * I, (rho_a_l / 3.0) * I;
        return out;
    }

    out.dofs_per_node = 6;
    Eigen::Matrix<double, 12, 12> T = Eigen::Matrix<double, 12, 12>::Zero();
    for (int b = 0; b < 4; ++b) T.block<3, 3>(3 * b, 3 * b) = frame;
    out.stiffness = T.transpose() * beam_local_stiffness(m, L) * T;
    out.mass = T.transpose() * beam_local_mass(m, L) * T;
    // Symmetrize away rounding from the similarity transform.
    out.stiffness = 0.5 * (out.stiffness + out.stiffness.transpose()).eval();
    out.mass = 0.5 * (out.mass + out.mass.transpose()).eval();
    return out;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

bool is_positive_definite(const SparseMatrix& A, double rel_pivot_tol) {
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(A);
    if (ldlt.info() != Eigen::Success) return false;
    const Eigen::VectorXd d = ldlt.vectorD();
    const double scale = A.diagonal().cwiseAbs().maxCoeff();
    return d.minCoeff() > rel_pivot_tol * scale;
}

std::optional<int> SecondOrderModel::dof_index(int node_id, int axis) const {
    for (std::size_t i = 0; i < dof_labels.size(); ++i)
        if (dof_labels[i].node_id == node_id && dof_labels[i].axis == axis) return static_cast<int>(i);
    return std::nullopt;
}

namespace {

struct DofMap {
    std::vector<DofLabel> labels;
    std::map<std::pair<int, int>, int> index;  // (node, axis) -> full index
};

DofMap build_dof_map(const StructureSpec& spec) {
    std::set<int> beam_nodes;
    for (const auto& e : spec.elements)
        if (e.kind == ElementKind::Beam) {
            beam_nodes.insert(e.node_a);
            beam_nodes.insert(e.node_b);
        }
    DofMap map;
    for (const auto& n : spec.nodes) {
        const int axes = beam_nodes.count(n.id) ? 6 : 3;
        for (int a = 0; a < axes; ++a) {
            map.index[{n.id, a}] = static_cast<int>(map.labels.size());
            map.labels.push_back({n.id, a});
        }
    }
    return map;
}

}  // namespace

std::vector<DofLabel> full_dof_labels(const StructureSpec& spec) { return build_dof_map(spec).labels; }

SparseMatrix actuator_matrix_full(const StructureSpec& spec) {
    const DofMap map = build_dof_map(spec);
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t j = 0; j < spec.actuators.size(); ++j) {
        const auto& act = spec.actuators[j];
        for (int a = 0; a < 3; ++a) {
            if (act.direction[a] == 0.0) continue;
            trip.emplace_back(map.index.at({act.node_b, a}), static_cast<int>(j), act.direction[a]);
            trip.emplace_back(map.index.at({act.node_a, a}), static_cast<int>(j), -act.direction[a]);
        }
    }
    SparseMatrix F(static_cast<Eigen::Index>(map.labels.size()), static_cast<Eigen::Index>(spec.actuators.size()));
    F.setFromTriplets(trip.begin(), trip.end());
    return F;
}

SecondOrderModel assemble(const StructureSpec& spec) {
    validate(spec);
    const DofMap map = build_dof_map(spec);
    const auto n_full = static_cast<Eigen::Index>(map.labels.size());

    std::vector<Eigen::Triplet<double>> k_trip;
    std::vector<Eigen::Triplet<double>> m_trip;
    for (const auto& e : spec.elements) {
        const Node* a = spec.find_node(e.node_a);
        const Node* b = spec.find_node(e.node_b);
        const ElementMatrices em = element_matrices(e, a->position, b->position);
        const int per = em.dofs_per_node;
        std::vector<int> dofs;
        for (int node : {e.node_a, e.node_b})
            for (int ax = 0; ax < per; ++ax) dofs.push_back(map.index.at({node, ax}));
        for (int i = 0; i < 2 * per; ++i)
            for (int j = 0; j < 2 * per; ++j) {
                if (em.stiffness(i, j) != 0.0) k_trip.emplace_back(dofs[i], dofs[j], em.stiffness(i, j));
                if (em.mass(i, j) != 0.0) m_trip.emplace_back(dofs[i], dofs[j], em.mass(i, j));
            }
    }
    SparseMatrix K_full(n_full, n_full);
    SparseMatrix M_full(n_full, n_full);
    K_full.setFromTriplets(k_trip.begin(), k_trip.end());
    M_full.setFromTriplets(m_trip.begin(), m_trip.end());
    const SparseMatrix F_full = actuator_matrix_full(spec);

    // Keep unconstrained DOFs, in full-numbering order.
    std::vector<int> keep;
    for (std::size_t i = 0; i < map.labels.size(); ++i) {
        const auto& lab = map.labels[i];
        if (!spec.find_node(lab.node_id)->constrained[lab.axis]) keep.push_back(static_cast<int>(i));
    }
    const auto n = static_cast<Eigen::Index>(keep.size());
    if (n == 0) throw InvariantError("assemble: every DOF is constrained");
    std::vector<Eigen::Triplet<double>> sel;
    for (Eigen::Index i = 0; i < n; ++i) sel.emplace_back(keep[i], i, 1.0);
    SparseMatrix S(n_full, n);
    S.setFromTriplets(sel.begin(), sel.end());

    SecondOrderModel model;
    model.M = S.transpose() * M_full * S;
    model.K = S.transpose() * K_full * S;
    model.F = S.transpose() * F_full;
    model.M.makeCompressed();
    model.K.makeCompressed();
    model.F.makeCompressed();
    model.damping = spec.damping;
    model.D = spec.damping.alpha_mass * model.M + spec.damping.alpha_stiffness * model.K;
    model.D.makeCompressed();
    for (int i : keep) model.dof_labels.push_back(map.labels[i]);

    if (!is_positive_definite(model.M))
        throw InvariantError("assemble: mass matrix is not positive definite (DOF without inertia)");
    if (!is_positive_definite(model.K))
        throw InvariantError("assemble: stiffness matrix is singular after constraint elimination "
                             "(under-constrained structure / rigid-body modes)");
    return model;
}

}  // namespace phdamp
