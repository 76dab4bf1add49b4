#pragma once

// Semicircle law reference quantities and spectral diagnostics: Stieltjes
// transform, density, classical locations, rigidity and isotropic-law residuals.

#include "emflow/core.hpp"
#include "emflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <vector>

namespace emflow {

/// m(z) = (−z + √(z²−4))/2 on the branch with Im m > 0 for Im z > 0.
/// Evaluated as −2/(z + √(z−2)√(z+2)) to avoid cancellation at large |z|.
inline cplx stieltjes_m(cplx z) {
    require(z.imag() > 0, ErrorKind::domain, "stieltjes_m: requires Im z > 0");
    const cplx s = std::sqrt(z - 2.0) * std::sqrt(z + 2.0);
    return -2.0 / (z + s);
}

inline double semicircle_density(double e) {
    const double r = 4.0 - e * e;
    return r > 0 ? std::sqrt(r) / (2.0 * std::numbers::pi) : 0.0;
}

/// ∫_{-2}^{e} ρ(s) ds in closed form.
inline double semicircle_cdf(double e) {
    if (e <= -2.0) return 0.0;
    if (e >= 2.0) return 1.0;
    return 0.5 + (e * std::sqrt(4.0 - e * e)) / (4.0 * std::numbers::pi) +
           std::asin(e / 2.0) / std::numbers::pi;
}

/// Solves F(γ) = p by bisection on [−2, 2].
inline double semicircle_quantile(double p) {
    require(p >= 0.0 && p <= 1.0, ErrorKind::domain, "semicircle_quantile: p outside [0,1]");
    double lo = -2.0, hi = 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        (semicircle_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// γ_k with F(γ_k) = (k − 1/2)/N, k = 1..N (stored 0-based). The upper half
/// is mirrored from the lower half so that γ_{N+1−k} = −γ_k exactly.
inline Vector classical_locations(int n) {
    require(n >= 1, ErrorKind::invalid_dimension, "classical_locations: N must be >= 1");
    Vector g(n);
    for (int k = 0; k < (n + 1) / 2; ++k) {
        const double v = semicircle_quantile((k + 0.5) / n);
        g(k) = v;
        g(n - 1 - k) = -v;
    }
    if (n % 2 == 1) g(n / 2) = 0.0;
    return g;
}

inline bool is_sorted_ascending(const Vector& v) {
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) < v(i - 1)) return false;
    return true;
}

struct RigidityReport {
    Vector gamma;
    Vector deviation; // |λ_k − γ_k|
    Vector bound;     // N^{−2/3+ω} k̂^{−1/3}
    std::vector<bool> flags;
    double fraction_true = 0;
    double max_normalized = 0; // max_k deviation/bound

    void write_csv(std::ostream& os) const {
        os << "k,value,bound,flag\n";
        for (Eigen::Index k = 0; k < deviation.size(); ++k)
            os << k + 1 << ',' << format_double(deviation(k)) << ',' << format_double(bound(k)) << ','
               << (flags[k] ? 1 : 0) << '\n';
    }
};

inline RigidityReport rigidity_report(const Vector& lambda, double omega) {
    require(is_sorted_ascending(lambda), ErrorKind::contract, "rigidity_report: eigenvalues not sorted");
    const int n = static_cast<int>(lambda.size());
    RigidityReport r;
    r.gamma = classical_locations(n);
    r.deviation = (lambda - r.gamma).cwiseAbs();
    r.bound.resize(n);
    r.flags.resize(n);
    int count = 0;
    const double scale = std::pow(double(n), -2.0 / 3.0 + omega);
    for (int k = 1; k <= n; ++k) {
        const int khat = std::min(k, n - k + 1);
        r.bound(k - 1) = scale * std::pow(double(khat), -1.0 / 3.0);
        r.flags[k - 1] = r.deviation(k - 1) < r.bound(k - 1);
        count += r.flags[k - 1];
        r.max_normalized = std::max(r.max_normalized, r.deviation(k - 1) / r.bound(k - 1));
    }
    r.fraction_true = double(count) / n;
    return r;
}

struct IsotropicResidual {
    double residual;
    double bound;
};

/// Isotropic bound N^ξ(√(Im m/(Nη)) + 1/(Nη)).
inline double isotropic_bound(int n, cplx z, double xi = 0.0) {
    const double eta = z.imag();
    const double ne = n * eta;
    return std::pow(double(n), xi) * (std::sqrt(stieltjes_m(z).imag() / ne) + 1.0 / ne);
}

/// ⟨q, G(z) q⟩ = Σ_k |⟨q,u_k⟩|²/(λ_k − z) from a spectral decomposition.
template <class Scalar>
cplx quadratic_green(const Spectrum<Scalar>& spec, const Vector& q, cplx z) {
    cplx acc = 0;
    for (Eigen::Index k = 0; k < spec.values.size(); ++k) {
        const double w = std::norm(spec.vectors.col(k).dot(q.template cast<Scalar>()));
        acc += w / (spec.values(k) - z);
    }
    return acc;
}

/// N⁻¹ Tr G(z).
inline cplx normalized_trace_green(const Vector& lambda, cplx z) {
    cplx acc = 0;
    for (Eigen::Index k = 0; k < lambda.size(); ++k) acc += 1.0 / (lambda(k) - z);
    return acc / double(lambda.size());
}

template <class Scalar>
IsotropicResidual isotropic_residual(const Spectrum<Scalar>& spec, const Vector& q, cplx z,
                                     double xi = 0.0) {
    require(std::abs(q.norm() - 1.0) < 1e-12, ErrorKind::contract, "isotropic_residual: q must be a unit vector");
    require(z.imag() > 0, ErrorKind::domain, "isotropic_residual: requires Im z > 0");
    const int n = static_cast<int>(spec.values.size());
    return {std::abs(quadratic_green(spec, q, z) - stieltjes_m(z)), isotropic_bound(n, z, xi)};
}

template <class Scalar>
IsotropicResidual isotropic_residual(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& h,
                                     const Vector& q, cplx z, double xi = 0.0) {
    return isotropic_residual(diagonalize<Scalar>(h), q, z, xi);
}

/// |N⁻¹ Tr G − m| against N^ξ/(Nη).
inline IsotropicResidual trace_residual(const Vector& lambda, cplx z, double xi = 0.0) {
    require(z.imag() > 0, ErrorKind::domain, "trace_residual: requires Im z > 0");
    const int n = static_cast<int>(lambda.size());
    return {std::abs(normalized_trace_green(lambda, z) - stieltjes_m(z)),
            std::pow(double(n), xi) / (n * z.imag())};
}

} // namespace emflow
