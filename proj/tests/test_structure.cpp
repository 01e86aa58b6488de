#include "phdamp/error.hpp"
#include "phdamp/structure.hpp"

#include <doctest.h>

#include <array>
#include <cmath>

using namespace phdamp;

namespace {

const char* kSingleLink = R"(
[nodes]
1 = 0 0 0 111111
2 = 2 0 0 011111

[sections]
s = E=3 rho=5 A=0.5

[elements]
1 = link 1 2 s

[damping]
alpha1 = 0.1
alpha2 = 0.01
)";

Material unit_beam() {
    Material m;
    m.youngs_modulus = 2.0;
    m.density = 3.0;
    m.area = 0.7;
    m.inertia_y = 0.11;
    m.inertia_z = 0.23;
    m.torsion_constant = 0.05;
    m.shear_modulus = 0.9;
    return m;
}

// Hermite cubic shape functions and their second derivatives on [0, L].
std::array<double, 4> hermite(double xi, double L) {
    return {1 - 3 * xi * xi + 2 * xi * xi * xi, L * (xi - 2 * xi * xi + xi * xi * xi), 3 * xi * xi - 2 * xi * xi * xi,
            L * (-xi * xi + xi * xi * xi)};
}
std::array<double, 4> hermite_dd(double xi, double L) {
    return {(-6 + 12 * xi) / (L * L), (-4 + 6 * xi) / L, (6 - 12 * xi) / (L * L), (-2 + 6 * xi) / L};
}

}  // namespace

TEST_CASE("minimal structure document") {
    const StructureSpec spec = parse_structure_spec(kSingleLink);
    CHECK(spec.nodes.size() == 2);
    const SecondOrderModel mo = assemble(spec);
    REQUIRE(mo.n_dof() == 1);
    CHECK(mo.dof_labels[0].node_id == 2);
    CHECK(mo.dof_labels[0].axis == UX);
    CHECK(mo.n_inputs() == 0);

    // consistent link mass at the free end rho A L / 3, stiffness EA / L
    const double m = 5 * 0.5 * 2 / 3.0, k = 3 * 0.5 / 2;
    CHECK(mo.M.coeff(0, 0) == doctest::Approx(m).epsilon(1e-14));
    CHECK(mo.K.coeff(0, 0) == doctest::Approx(k).epsilon(1e-14));
    CHECK(mo.D.coeff(0, 0) == doctest::Approx(0.1 * m + 0.01 * k).epsilon(1e-14));
}

TEST_CASE("structure document errors") {
    std::string text = kSingleLink;
    text.replace(text.find("link 1 2"), 8, "link 1 9");
    CHECK_THROWS_AS(parse_structure_spec(text), ConfigError);

    std::string zero = kSingleLink;
    zero.replace(zero.find("2 = 2 0 0"), 9, "2 = 0 0 0");
    CHECK_THROWS_AS(parse_structure_spec(zero), ConfigError);

    std::string bad = kSingleLink;
    bad.replace(bad.find("E=3"), 3, "E=x");
    CHECK_THROWS_WITH_AS(parse_structure_spec(bad), doctest::Contains("sections.s"), ConfigError);
}

TEST_CASE("format and parse round trip") {
    const StructureSpec a = generate_frame(default_frame_parameters());
    const StructureSpec b = parse_structure_spec(format_structure_spec(a));
    REQUIRE(a.nodes.size() == b.nodes.size());
    REQUIRE(a.elements.size() == b.elements.size());
    REQUIRE(a.actuators.size() == b.actuators.size());
    const SecondOrderModel ma = assemble(a), mb = assemble(b);
    CHECK((Eigen::MatrixXd(ma.K) - Eigen::MatrixXd(mb.K)).norm() == 0.0);
    CHECK((Eigen::MatrixXd(ma.M) - Eigen::MatrixXd(mb.M)).norm() == 0.0);
}

TEST_CASE("bundled six-storey frame") {
    const StructureSpec spec = load_structure_spec(PHDAMP_SOURCE_DIR "/frames/six_storey.cfg");
    CHECK(spec.nodes.size() == 28);
    CHECK(spec.ground_nodes().size() == 4);
    CHECK(spec.upmost_nodes().size() == 4);
    const SecondOrderModel mo = assemble(spec);
    CHECK(mo.n_dof() == 152);
    CHECK(is_positive_definite(mo.M));
    CHECK(is_positive_definite(mo.K));
}

TEST_CASE("generated frames") {
    FrameParameters p = default_frame_parameters();
    SUBCASE("six storeys") {
        const SecondOrderModel mo = assemble(generate_frame(p));
        CHECK(mo.n_dof() == 4 * 2 + 24 * 6);
        CHECK(mo.n_inputs() > 0);
    }
    SUBCASE("one storey without actuators") {
        p.storeys = 1;
        p.layout = ActuatorLayout::None;
        const StructureSpec spec = generate_frame(p);
        const SecondOrderModel mo = assemble(spec);
        int free_nodes = 0;
        for (const auto& n : spec.nodes)
            if (!n.constrained[UX]) ++free_nodes;
        CHECK(free_nodes == 4);
        // 4 free nodes x 6 DOFs, plus 2 rotations at each of the 4 ground nodes
        int on_free = 0;
        for (const auto& l : mo.dof_labels)
            if (!spec.find_node(l.node_id)->constrained[UX]) ++on_free;
        CHECK(on_free == 24);
        CHECK(mo.n_dof() == 24 + 8);
        CHECK(mo.n_inputs() == 0);
    }
    SUBCASE("three-storey layout needs three storeys") {
        p.storeys = 2;
        CHECK_THROWS_AS(generate_frame(p), ConfigError);
    }
}

TEST_CASE("axial link element") {
    Element e;
    e.kind = ElementKind::Link;
    e.material.youngs_modulus = 1;
    e.material.density = 1;
    e.material.area = 1;
    const auto x = element_matrices(e, {0, 0, 0}, {1, 0, 0});
    Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(6, 6);
    expect(0, 0) = expect(3, 3) = 1;
    expect(0, 3) = expect(3, 0) = -1;
    CHECK((x.stiffness - expect).norm() < 1e-15);

    const auto y = element_matrices(e, {0, 0, 0}, {0, 1, 0});
    CHECK(y.stiffness(0, 0) == 0.0);
    CHECK(y.stiffness(0, 3) == 0.0);
    CHECK(y.stiffness(1, 1) == doctest::Approx(1.0));
    CHECK(y.stiffness(1, 4) == doctest::Approx(-1.0));

    CHECK_THROWS_AS(element_matrices(e, {1, 1, 1}, {1, 1, 1}), ConfigError);
}

TEST_CASE("beam element against shape-function quadrature") {
    Element e;
    e.kind = ElementKind::Beam;
    e.material = unit_beam();
    const double L = 1.3;
    const auto em = element_matrices(e, {0, 0, 0}, {L, 0, 0});
    REQUIRE(em.stiffness.rows() == 12);

    // 4-point Gauss-Legendre, exact for the degree-6 mass integrands
    const double gx[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
    const double gw[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
    const Material& m = e.material;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(12, 12), Mm = Eigen::MatrixXd::Zero(12, 12);
    // bending plane x-y: (uy, rz) with rz = v'; plane x-z: (uz, ry) with ry = -w'
    const int vy[4] = {1, 5, 7, 11}, vz[4] = {2, 4, 8, 10};
    const double sz[4] = {1, -1, 1, -1};
    for (int q = 0; q < 4; ++q) {
        const double xi = 0.5 * (gx[q] + 1), w = 0.5 * gw[q] * L;
        const auto N = hermite(xi, L), B = hermite_dd(xi, L);
        const double lin[2] = {1 - xi, xi};
        const int ax[2] = {0, 6}, tor[2] = {3, 9};
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                const double da = a == 0 ? -1 / L : 1 / L, db = b == 0 ? -1 / L : 1 / L;
                K(ax[a], ax[b]) += w * m.youngs_modulus * m.area * da * db;
                K(tor[a], tor[b]) += w * m.effective_shear_modulus() * m.effective_torsion_constant() * da * db;
                Mm(ax[a], ax[b]) += w * m.density * m.area * lin[a] * lin[b];
                Mm(tor[a], tor[b]) += w * m.density * (m.inertia_y + m.inertia_z) * lin[a] * lin[b];
            }
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) {
                K(vy[a], vy[b]) += w * m.youngs_modulus * m.inertia_z * B[a] * B[b];
                K(vz[a], vz[b]) += w * m.youngs_modulus * m.inertia_y * sz[a] * sz[b] * B[a] * B[b];
                Mm(vy[a], vy[b]) += w * m.density * m.area * N[a] * N[b];
                Mm(vz[a], vz[b]) += w * m.density * m.area * sz[a] * sz[b] * N[a] * N[b];
            }
    }
    CHECK((em.stiffness - K).cwiseAbs().maxCoeff() < 1e-10 * K.cwiseAbs().maxCoeff());
    CHECK((em.mass - Mm).cwiseAbs().maxCoeff() < 1e-10 * Mm.cwiseAbs().maxCoeff());
}

TEST_CASE("rotated beam keeps its invariants") {
    Element e;
    e.kind = ElementKind::Beam;
    e.material = unit_beam();
    const auto a = element_matrices(e, {0, 0, 0}, {1.3, 0, 0});
    const auto b = element_matrices(e, {0.2, -1, 0.5}, {0.2 + 0.3, -1 + 1.1, 0.5 + 0.4});
    const auto c = element_matrices(e, {0, 0, 0}, {0, 0, 1.3});
    for (const auto* x : {&a, &b, &c}) {
        CHECK((x->stiffness - x->stiffness.transpose()).norm() == 0.0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ek(x->stiffness), em(x->mass);
        CHECK(ek.eigenvalues().minCoeff() > -1e-12 * ek.eigenvalues().maxCoeff());
        CHECK(em.eigenvalues().minCoeff() > 0);
        // six rigid-body modes
        int zero = 0;
        for (int i = 0; i < 12; ++i)
            if (ek.eigenvalues()[i] < 1e-10 * ek.eigenvalues().maxCoeff()) ++zero;
        CHECK(zero == 6);
    }
    // same length, same spectrum
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a.stiffness), ec(c.stiffness);
    CHECK((ea.eigenvalues() - ec.eigenvalues()).norm() < 1e-12 * ea.eigenvalues().norm());
}

TEST_CASE("assembled model identities") {
    const StructureSpec spec = generate_frame(default_frame_parameters());
    const SecondOrderModel a = assemble(spec), b = assemble(spec);
    const auto& d = spec.damping;
    CHECK((Eigen::MatrixXd(a.D) - d.alpha_mass * Eigen::MatrixXd(a.M) - d.alpha_stiffness * Eigen::MatrixXd(a.K))
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK((Eigen::MatrixXd(a.K) - Eigen::MatrixXd(b.K)).norm() == 0.0);
    CHECK((Eigen::MatrixXd(a.M) - Eigen::MatrixXd(b.M)).norm() == 0.0);

    const std::vector<DofLabel> labels = full_dof_labels(spec);
    const Eigen::MatrixXd F = actuator_matrix_full(spec);
    for (int j = 0; j < F.cols(); ++j) {
        for (int axis : {UX, UY, UZ}) {
            double sum = 0;
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (labels[i].axis == axis) sum += F(static_cast<Eigen::Index>(i), j);
            CHECK(std::abs(sum) < 1e-15);
        }
        const auto& act = spec.actuators[static_cast<std::size_t>(j)];
        for (int axis : {UX, UY, UZ}) {
            double at_a = 0, at_b = 0;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i].axis != axis) continue;
                if (labels[i].node_id == act.node_a) at_a = F(static_cast<Eigen::Index>(i), j);
                if (labels[i].node_id == act.node_b) at_b = F(static_cast<Eigen::Index>(i), j);
            }
            CHECK(at_a == -at_b);
        }
    }
}

TEST_CASE("free-floating frame is rejected") {
    StructureSpec spec = generate_frame(default_frame_parameters());
    for (auto& n : spec.nodes) n.constrained.fill(false);
    CHECK_THROWS_AS(assemble(spec), InvariantError);
}
