#pragma once

// Frame structures: description, generator, element matrices and assembly of
// the second-order model  M q'' + D q' + K q = F_u u.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace phdamp {

using SparseMatrix = Eigen::SparseMatrix<double>;

enum class ElementKind { Beam, Link };

/// Per-node DOF axes: three translations then three rotations.
enum Axis : int { UX = 0, UY = 1, UZ = 2, RX = 3, RY = 4, RZ = 5 };

struct Material {
    double youngs_modulus = 2.1e11;   // [Pa]
    double density = 7850.0;          // [kg/m^3]
    double area = 0.0;                // [m^2]
    double inertia_y = 0.0;           // [m^4], beams only
    double inertia_z = 0.0;           // [m^4], beams only
    double torsion_constant = 0.0;    // [m^4], beams only; 0 -> inertia_y + inertia_z
    double shear_modulus = 0.0;       // [Pa]; 0 -> E / (2 (1 + 0.3))

    double effective_shear_modulus() const;
    double effective_torsion_constant() const;
};

struct Node {
    int id = 0;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    std::array<bool, 6> constrained{};  ///< indexed by Axis
};

struct Element {
    ElementKind kind = ElementKind::Link;
    int node_a = 0;
    int node_b = 0;
    Material material;
};

/// Actuator acting in parallel to a hosting element: force +u along
/// `direction` on node_b and -u on node_a (positive u = extension).
struct Actuator {
    int node_a = 0;
    int node_b = 0;
    Eigen::Vector3d direction = Eigen::Vector3d::UnitX();
};

struct RayleighDamping {
    double alpha_mass = 0.05;       ///< alpha_1 [1/s]
    double alpha_stiffness = 0.005; ///< alpha_2 [s]
};

struct StructureSpec {
    std::vector<Node> nodes;
    std::vector<Element> elements;
    std::vector<Actuator> actuators;
    RayleighDamping damping;

    const Node* find_node(int id) const;
    /// Node ids sharing the largest vertical coordinate.
    std::vector<int> upmost_nodes(double tol = 1e-9) const;
    std::vector<int> ground_nodes() const;  ///< nodes with all translations constrained
};

/// Throws ConfigError on dangling references, zero-length elements,
/// duplicate node ids, non-positive material data or invalid damping.
void validate(const StructureSpec& spec);

/// Parses the sectioned text format (see frames/README.md).
StructureSpec parse_structure_spec(std::string_view text, const std::string& origin = "<string>");
StructureSpec load_structure_spec(const std::string& path);
std::string format_structure_spec(const StructureSpec& spec);

enum class ActuatorLayout {
    None,
    ThreeStorey,  ///< columns and face diagonals, each spanning three storeys
};

struct FrameParameters {
    int storeys = 6;
    double bay_width = 1.0;       // [m]
    double storey_height = 1.7;   // [m]
    Material column;              ///< beam material/section
    Material link;                ///< link material/section (horizontals, diagonals)
    int diagonal_span = 3;        ///< storeys spanned by a face diagonal
    ActuatorLayout layout = ActuatorLayout::ThreeStorey;
    RayleighDamping damping;
};

/// Default section data for the bundled six-storey stand-in.
FrameParameters default_frame_parameters();

/// Four-column square tower. Node ids: level * 4 + corner + 1, level 0 is the
/// ground. Columns are beams; horizontals, one floor diagonal per level and
/// the face diagonals are links. Face diagonals span `diagonal_span` storeys
/// (alternating direction per block); leftover storeys get single-storey
/// diagonals. Ground nodes keep only the two horizontal-axis rotations.
StructureSpec generate_frame(const FrameParameters& params);

struct ElementMatrices {
    Eigen::MatrixXd stiffness;  ///< global coordinates
    Eigen::MatrixXd mass;       ///< global coordinates, consistent
    int dofs_per_node = 3;      ///< 3 for links (translations), 6 for beams
};

/// 3-D Euler-Bernoulli beam (12 DOFs) or axial link (6 DOFs).
ElementMatrices element_matrices(const Element& element,
                                 const Eigen::Vector3d& pos_a,
                                 const Eigen::Vector3d& pos_b);

/// Rows: local axes (x along the element) expressed in global coordinates.
Eigen::Matrix3d element_frame(const Eigen::Vector3d& pos_a, const Eigen::Vector3d& pos_b);

struct DofLabel {
    int node_id = 0;
    int axis = 0;
    bool rotational() const { return axis >= RX; }
};

struct SecondOrderModel {
    SparseMatrix M;
    SparseMatrix D;
    SparseMatrix K;
    SparseMatrix F;  ///< n_dof x m actuator map
    std::vector<DofLabel> dof_labels;
    RayleighDamping damping;

    int n_dof() const { return static_cast<int>(M.rows()); }
    int n_inputs() const { return static_cast<int>(F.cols()); }
    std::optional<int> dof_index(int node_id, int axis) const;
};

/// Full (unconstrained) DOF numbering of a spec: a node carries rotational
/// DOFs only when a beam is attached to it.
std::vector<DofLabel> full_dof_labels(const StructureSpec& spec);

/// Actuator map over the full DOF numbering, before constraint elimination.
SparseMatrix actuator_matrix_full(const StructureSpec& spec);

/// Symmetric positive-definiteness by LDL^T pivots: every pivot must exceed
/// rel_pivot_tol * max|diag(A)|.
bool is_positive_definite(const SparseMatrix& A, double rel_pivot_tol = 1e-13);

/// Assembles M, K, D = a1 M + a2 K and F_u with constrained DOFs eliminated.
/// Throws InvariantError if M or K is not positive definite.
SecondOrderModel assemble(const StructureSpec& spec);

}  // namespace phdamp
