#pragma once

#include "emflow/core.hpp"

#include <Eigen/Eigenvalues>

#include <string>

namespace emflow {

/// Eigen-decomposition with ascending eigenvalues; columns of `vectors` are
/// the orthonormal eigenvectors u_k.
template <class Scalar>
struct Spectrum {
    using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    Vector values;
    MatrixType vectors;
};

template <class Scalar>
Spectrum<Scalar> diagonalize(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& h,
                             bool with_vectors = true) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> solver(
        h, with_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    require(solver.info() == Eigen::Success, ErrorKind::numeric, "eigensolver failed");
    Spectrum<Scalar> s;
    s.values = solver.eigenvalues();
    if (with_vectors) s.vectors = solver.eigenvectors();
    return s;
}

inline Vector eigenvalues(const Matrix& h) { return diagonalize<double>(h, false).values; }
inline Vector eigenvalues(const CMatrix& h) { return diagonalize<cplx>(h, false).values; }

/// max |(UᴴU − I)_ij|
template <class Derived>
double orthonormality_defect(const Eigen::MatrixBase<Derived>& u) {
    const auto n = u.cols();
    using Scalar = typename Derived::Scalar;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> g = u.adjoint() * u;
    return (g - Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Identity(n, n))
        .cwiseAbs()
        .maxCoeff();
}

/// One Newton–Schulz step towards the polar factor: U ← U(3I − UᴴU)/2.
/// Converges quadratically for nearly orthonormal U and treats all columns
/// alike (no Gram–Schmidt ordering bias).
template <class Scalar>
void newton_schulz_step(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& u) {
    using M = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    M g = -u.adjoint() * u;
    g.diagonal().array() += Scalar(3);
    u = (u * g) * Scalar(0.5);
}

template <class Scalar>
void reorthonormalize(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& u, double tol = 1e-14,
                      int max_iter = 50) {
    for (int it = 0; it < max_iter; ++it) {
        if (orthonormality_defect(u) < tol) return;
        newton_schulz_step(u);
    }
    require(orthonormality_defect(u) < 1e-10, ErrorKind::numeric,
            "reorthonormalize: frame too far from orthonormal");
}

} // namespace emflow
