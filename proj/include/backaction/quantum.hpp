#pragma once

// Qubit state representations and the geometry of the control scheme: the target
// state sits on the Bloch sphere, the controller measures a spin component
// perpendicular to the current Bloch vector, and the figure of merit is the
// probability of finding the system outside the target state.

#include <cmath>
#include <complex>
#include <stdexcept>

#include <Eigen/Dense>

namespace backaction {

inline constexpr double eps_num = 1e-9;   // degeneracy guard for angle extraction
inline constexpr double pi = 3.14159265358979323846;

using Matrix2c = Eigen::Matrix2cd;
using complexd = std::complex<double>;

struct BlochVector {
    double x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

// Reduced coordinates of an in-plane state: polar angle delta measured from the
// target axis (+z), signed, in (-pi, pi]; Bloch length a in [0,1].
struct ReducedCoords {
    double delta = 0.0;
    double a = 1.0;
};

inline Matrix2c pauli_x() { Matrix2c m; m << 0, 1, 1, 0; return m; }
inline Matrix2c pauli_y() { Matrix2c m; m << 0, complexd(0, -1), complexd(0, 1), 0; return m; }
inline Matrix2c pauli_z() { Matrix2c m; m << 1, 0, 0, -1; return m; }

inline Matrix2c bloch_to_density(const BlochVector& b) {
    Matrix2c rho;
    rho << 0.5 * (1.0 + b.z), 0.5 * complexd(b.x, -b.y),
           0.5 * complexd(b.x, b.y), 0.5 * (1.0 - b.z);
    return rho;
}

inline BlochVector density_to_bloch(const Matrix2c& rho) {
    BlochVector b;
    b.x = 2.0 * rho(1, 0).real();
    b.y = 2.0 * rho(1, 0).imag();
    b.z = (rho(0, 0) - rho(1, 1)).real();
    return b;
}

// Spin axis measured when the Bloch vector makes angle delta with the target:
// n(delta) = (cos delta, 0, -sin delta). For an in-plane state
// a*(sin delta, 0, cos delta) this is the perpendicular direction, rotated so the
// positive measurement outcome pushes the state toward the target.
inline BlochVector measured_spin_axis(double delta) {
    return {std::cos(delta), 0.0, -std::sin(delta)};
}

// Probability of finding the system in the excited state (antipode of the
// target +z): P_e = (1 - a_z)/2 for the target axis, equivalently
// (1 - a cos delta)/2 for an in-plane state.
inline double error_probability(const BlochVector& b) {
    return 0.5 * (1.0 - b.z);
}

inline double error_probability(const Matrix2c& rho) {
    return rho(1, 1).real();
}

inline double error_probability_reduced(double delta, double a) {
    return 0.5 * (1.0 - a * std::cos(delta));
}

// Extract (delta, a) from a Bloch vector. The angle lives in the xz-plane; when
// the in-plane projection is numerically degenerate the previous angle is kept so
// feedback controllers do not jump on noise.
inline ReducedCoords reduced_coords(const BlochVector& b, double previousDelta = 0.0) {
    ReducedCoords rc;
    rc.a = b.norm();
    if (std::hypot(b.x, b.z) < eps_num)
        rc.delta = previousDelta;
    else
        rc.delta = std::atan2(b.x, b.z);
    return rc;
}

inline BlochVector bloch_from_reduced(double delta, double a) {
    return {a * std::sin(delta), 0.0, a * std::cos(delta)};
}

// sanity helpers used by tests and the verification command
inline double hermiticity_defect(const Matrix2c& rho) {
    return (rho - rho.adjoint()).cwiseAbs().maxCoeff();
}

inline double trace_defect(const Matrix2c& rho) {
    return std::abs(rho.trace() - complexd(1.0, 0.0));
}

inline double min_eigenvalue(const Matrix2c& rho) {
    Eigen::SelfAdjointEigenSolver<Matrix2c> es(rho, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

} // namespace backaction
