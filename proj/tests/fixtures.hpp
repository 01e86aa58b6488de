#pragma once

#include "phdamp/ph_system.hpp"
#include "phdamp/structure.hpp"

#include <Eigen/Sparse>

#include <initializer_list>
#include <memory>

namespace fixtures {

inline phdamp::SparseMatrix sparse(int rows, int cols, std::initializer_list<double> values) {
    Eigen::MatrixXd d(rows, cols);
    auto it = values.begin();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) d(i, j) = *it++;
    return d.sparseView();
}

// M = 2, D = 0.1, K = 50, F = 1
inline phdamp::SecondOrderModel one_dof_model(double damping = 0.1) {
    phdamp::SecondOrderModel mo;
    mo.M = sparse(1, 1, {2.0});
    mo.K = sparse(1, 1, {50.0});
    mo.D = sparse(1, 1, {damping});
    mo.F = sparse(1, 1, {1.0});
    return mo;
}

inline std::shared_ptr<phdamp::PHSystem> one_dof(double damping = 0.1) {
    return std::make_shared<phdamp::PHSystem>(phdamp::to_port_hamiltonian(one_dof_model(damping)));
}

// Two coupled masses with Rayleigh damping, 1 or 2 actuators.
inline phdamp::SecondOrderModel two_dof_model(int actuators = 1) {
    phdamp::SecondOrderModel mo;
    mo.M = sparse(2, 2, {2.0, 0.3, 0.3, 1.0});
    mo.K = sparse(2, 2, {50.0, -10.0, -10.0, 30.0});
    mo.D = 0.05 * mo.M + 0.005 * mo.K;
    mo.F = actuators == 1 ? sparse(2, 1, {-1.0, 1.0}) : sparse(2, 2, {-1.0, 0.0, 1.0, 1.0});
    return mo;
}

inline std::shared_ptr<phdamp::PHSystem> two_dof(int actuators = 1) {
    return std::make_shared<phdamp::PHSystem>(phdamp::to_port_hamiltonian(two_dof_model(actuators)));
}

inline Eigen::VectorXd two_dof_x0() { return Eigen::Vector4d(0, 0, 1, -0.5); }

// Free response of m q'' + d q' + k q = 0, q(0) = q0, q'(0) = v0 (underdamped).
struct Oscillator {
    double m, d, k, q0, v0;

    double zeta_omega() const { return d / (2 * m); }
    double omega_d() const { return std::sqrt(k / m - zeta_omega() * zeta_omega()); }
    double q(double t) const {
        const double a = zeta_omega(), w = omega_d();
        return std::exp(-a * t) * (q0 * std::cos(w * t) + (v0 + a * q0) / w * std::sin(w * t));
    }
    double v(double t) const {
        const double a = zeta_omega(), w = omega_d(), b = (v0 + a * q0) / w;
        return std::exp(-a * t) * ((-a * q0 + w * b) * std::cos(w * t) + (-a * b - w * q0) * std::sin(w * t));
    }
    double acc(double t) const { return -(d * v(t) + k * q(t)) / m; }
};

}  // namespace fixtures
