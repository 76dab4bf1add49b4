#pragma once

// Matrix Dyson Brownian motion (additive and Ornstein–Uhlenbeck forms), the
// Wishart factor flow, spectral paths with aligned eigenvector frames, and
// the Dyson eigenvector SDE conditioned on a given eigenvalue path.

#include "emflow/core.hpp"
#include "emflow/ensemble.hpp"
#include "emflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace emflow {

enum class FlowKind { additive, ou, wishart, frozen };

inline std::string_view to_string(FlowKind k) {
    switch (k) {
    case FlowKind::additive: return "additive";
    case FlowKind::ou: return "ou";
    case FlowKind::wishart: return "wishart";
    case FlowKind::frozen: return "frozen";
    }
    return "?";
}

struct MatrixFlowSpec {
    Symmetry symmetry = Symmetry::symmetric;
    int n = 0;
    int m = 0; // covariance only
    FlowKind kind = FlowKind::additive;
    Matrix ou_variance; // s_ij targets, ou only
    double t_end = 0.0;
    double dt = 1e-2;
    std::uint64_t seed = 0;
    bool keep_frames = true;
    double gap_guard = default_gap_guard;
};

/// α(t) and u(t) such that α(t)H_t is generalized Wigner and the moment
/// flow of the rescaled matrix runs on the clock u(t).
struct TimeChange {
    int n;
    double alpha(double t) const { return 1.0 / std::sqrt(1.0 + (n + 1.0) * t / n); }
    double clock(double t) const { return t + (n + 1.0) * t * t / (2.0 * n); }
};

/// Time grid 0, dt, 2dt, …, t_end (last step possibly shorter).
inline std::vector<double> time_grid(double t_end, double dt) {
    require(dt > 0, ErrorKind::contract, "time grid: dt must be positive");
    require(t_end >= 0, ErrorKind::contract, "time grid: t_end must be nonnegative");
    std::vector<double> t{0.0};
    const auto steps = static_cast<long>(std::ceil(t_end / dt - 1e-12));
    for (long k = 1; k <= steps; ++k) t.push_back(std::min(t_end, k * dt));
    if (t.back() < t_end) t.push_back(t_end);
    return t;
}

template <class Scalar>
struct SpectralPath {
    using Frame = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    FlowKind kind = FlowKind::additive;
    bool rescaled = false;
    std::vector<double> times;
    std::vector<Vector> lambdas;
    std::vector<Frame> frames; // empty unless requested
    double min_gap = std::numeric_limits<double>::infinity();
    long guard_triggers = 0; // grid times with a gap below the guard
    long alignment_swaps = 0; // max-overlap matching disagreed with sorted order

    int dim() const { return lambdas.empty() ? 0 : static_cast<int>(lambdas.front().size()); }
    double t_end() const { return times.back(); }

    /// Piecewise-linear interpolation in time (constant beyond the ends).
    Vector lambda_at(double t) const {
        if (times.size() == 1 || t <= times.front()) return lambdas.front();
        if (t >= times.back()) return lambdas.back();
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        const auto hi = static_cast<std::size_t>(it - times.begin());
        const std::size_t lo = hi - 1;
        const double w = (t - times[lo]) / (times[hi] - times[lo]);
        return (1.0 - w) * lambdas[lo] + w * lambdas[hi];
    }

    void write_csv(std::ostream& os) const {
        os << "time,k,lambda\n";
        for (std::size_t i = 0; i < times.size(); ++i)
            for (Eigen::Index k = 0; k < lambdas[i].size(); ++k)
                os << format_double(times[i]) << ',' << k + 1 << ',' << format_double(lambdas[i](k))
                   << '\n';
    }

    /// Raw frame dump: u64 count, then one binary matrix per grid time.
    void write_frames(std::ostream& os) const {
        detail::put_u64(os, frames.size());
        for (const auto& f : frames) write_binary(os, f);
    }
};

using RealPath = SpectralPath<double>;
using ComplexPath = SpectralPath<cplx>;

/// Path that holds λ fixed on [0, t_end].
inline RealPath frozen_path(const Vector& lambda, double t_end) {
    RealPath p;
    p.kind = FlowKind::frozen;
    p.times = {0.0};
    p.lambdas = {lambda};
    if (t_end > 0) {
        p.times.push_back(t_end);
        p.lambdas.push_back(lambda);
    }
    for (Eigen::Index k = 1; k < lambda.size(); ++k)
        p.min_gap = std::min(p.min_gap, lambda(k) - lambda(k - 1));
    return p;
}

template <class Scalar>
struct FlowResult {
    SpectralPath<Scalar> path;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> terminal;
};

namespace detail {

/// conj(v)/|v| in the scalar's own type (a sign for real scalars).
inline double inverse_phase(double v) { return v < 0 ? -1.0 : 1.0; }
inline cplx inverse_phase(cplx v) { return std::conj(v) / std::abs(v); }

template <class Scalar>
void fix_phase_by_largest_entry(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& u) {
    for (Eigen::Index k = 0; k < u.cols(); ++k) {
        Eigen::Index imax = 0;
        u.col(k).cwiseAbs().maxCoeff(&imax);
        const Scalar v = u(imax, k);
        if (std::abs(v) > 0) u.col(k) *= inverse_phase(v);
    }
}

/// Makes ⟨u_prev_k, u_new_k⟩ real positive; counts columns whose maximal
/// overlap partner is not k.
template <class Scalar>
long align_frame(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& prev,
                 Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& next) {
    long swaps = 0;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> overlap = prev.adjoint() * next;
    for (Eigen::Index k = 0; k < next.cols(); ++k) {
        Eigen::Index best = 0;
        overlap.row(k).cwiseAbs().maxCoeff(&best);
        if (best != k) ++swaps;
        const Scalar o = overlap(k, k);
        const double a = std::abs(o);
        if (a > 0) next.col(k) *= inverse_phase(o);
    }
    return swaps;
}

template <class Scalar>
void record(SpectralPath<Scalar>& path, double t, const Spectrum<Scalar>& spec, bool keep_frames,
            double gap_guard) {
    path.times.push_back(t);
    path.lambdas.push_back(spec.values);
    bool triggered = false;
    for (Eigen::Index k = 1; k < spec.values.size(); ++k) {
        const double g = spec.values(k) - spec.values(k - 1);
        path.min_gap = std::min(path.min_gap, g);
        if (g < gap_guard) triggered = true;
    }
    path.guard_triggers += triggered;
    if (keep_frames) {
        auto frame = spec.vectors;
        if (path.frames.empty())
            fix_phase_by_largest_entry(frame);
        else
            path.alignment_swaps += align_frame(path.frames.back(), frame);
        path.frames.push_back(std::move(frame));
    }
}

template <class Scalar>
Spectrum<Scalar> diagonalize_checked(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& h,
                                     bool with_vectors, std::size_t step) {
    try {
        return diagonalize<Scalar>(h, with_vectors);
    } catch (const Error&) {
        throw Error(ErrorKind::numeric, "eigensolver failed at step " + std::to_string(step));
    }
}

/// Adds the Gaussian increment of H_t = H_0 + B_t/√N (β=1) or B_t/√(2N)
/// (β=2) over a step of length h.
inline void add_dbm_increment(Matrix& m, double h, Normal& rng) {
    const int n = static_cast<int>(m.rows());
    const double off = std::sqrt(h / n), diag = std::sqrt(2.0 * h / n);
    for (int i = 0; i < n; ++i) {
        m(i, i) += diag * rng();
        for (int j = i + 1; j < n; ++j) {
            const double v = off * rng();
            m(i, j) += v;
            m(j, i) += v;
        }
    }
}

inline void add_dbm_increment(CMatrix& m, double h, Normal& rng) {
    const int n = static_cast<int>(m.rows());
    const double part = std::sqrt(h / (2.0 * n)), diag = std::sqrt(h / n);
    for (int i = 0; i < n; ++i) {
        m(i, i) += diag * rng();
        for (int j = i + 1; j < n; ++j) {
            const double re = part * rng(), im = part * rng();
            m(i, j) += cplx(re, im);
            m(j, i) += cplx(re, -im);
        }
    }
}

} // namespace detail

/// Additive matrix DBM sampled exactly at the grid times, diagonalized at
/// each grid time, frames aligned to their predecessor.
template <class Scalar>
FlowResult<Scalar> dbm_integrate(const MatrixFlowSpec& spec,
                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& h0) {
    require(h0.rows() == spec.n && h0.cols() == spec.n, ErrorKind::contract,
            "dbm_integrate: H0 dimension does not match spec");
    const auto grid = time_grid(spec.t_end, spec.dt);
    Normal rng(spec.seed);
    FlowResult<Scalar> out;
    out.path.kind = FlowKind::additive;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> h = h0;
    detail::record(out.path, 0.0, detail::diagonalize_checked<Scalar>(h, spec.keep_frames, 0),
                   spec.keep_frames, spec.gap_guard);
    for (std::size_t s = 1; s < grid.size(); ++s) {
        detail::add_dbm_increment(h, grid[s] - grid[s - 1], rng);
        detail::record(out.path, grid[s], detail::diagonalize_checked<Scalar>(h, spec.keep_frames, s),
                       spec.keep_frames, spec.gap_guard);
    }
    out.terminal = std::move(h);
    return out;
}

/// Variance-preserving flow dh = dB/√N − h/(2N s) dt, advanced with the exact
/// OU transition per entry: h ← e^{−τ/(2Ns)} h + √(s(1 − e^{−τ/(Ns)})) ξ.
inline FlowResult<double> ou_integrate(const MatrixFlowSpec& spec, const Matrix& h0) {
    const int n = spec.n;
    require(spec.symmetry == Symmetry::symmetric, ErrorKind::contract,
            "ou_integrate: only the real symmetric flow is defined");
    require(h0.rows() == n && h0.cols() == n, ErrorKind::contract,
            "ou_integrate: H0 dimension does not match spec");
    require(spec.ou_variance.rows() == n && spec.ou_variance.cols() == n, ErrorKind::contract,
            "ou_integrate: variance targets s_ij missing");
    require((spec.ou_variance.array() > 0).all(), ErrorKind::contract,
            "ou_integrate: variance targets must be positive");
    const auto grid = time_grid(spec.t_end, spec.dt);
    Normal rng(spec.seed);
    FlowResult<double> out;
    out.path.kind = FlowKind::ou;
    Matrix h = h0;
    detail::record(out.path, 0.0, detail::diagonalize_checked<double>(h, spec.keep_frames, 0),
                   spec.keep_frames, spec.gap_guard);
    for (std::size_t s = 1; s < grid.size(); ++s) {
        const double tau = grid[s] - grid[s - 1];
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                const double v = spec.ou_variance(i, j);
                const double decay = std::exp(-tau / (2.0 * n * v));
                const double x = decay * h(i, j) + std::sqrt(v * (1.0 - decay * decay)) * rng();
                h(i, j) = x;
                h(j, i) = x;
            }
        detail::record(out.path, grid[s], detail::diagonalize_checked<double>(h, spec.keep_frames, s),
                       spec.keep_frames, spec.gap_guard);
    }
    out.terminal = std::move(h);
    return out;
}

/// λ ↦ α(t)λ and t ↦ u(t). Only meaningful for the additive flow.
template <class Scalar>
SpectralPath<Scalar> rescale_to_wigner(const SpectralPath<Scalar>& path) {
    require(path.kind == FlowKind::additive, ErrorKind::contract,
            "rescale_to_wigner: only additive flow paths can be rescaled");
    require(!path.rescaled, ErrorKind::contract, "rescale_to_wigner: path already rescaled");
    const TimeChange tc{path.dim()};
    SpectralPath<Scalar> out = path;
    out.rescaled = true;
    out.min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < path.times.size(); ++i) {
        out.times[i] = tc.clock(path.times[i]);
        out.lambdas[i] = tc.alpha(path.times[i]) * path.lambdas[i];
        for (Eigen::Index k = 1; k < out.lambdas[i].size(); ++k)
            out.min_gap = std::min(out.min_gap, out.lambdas[i](k) - out.lambdas[i](k - 1));
    }
    return out;
}

/// Real Wishart process X_t = M_tᵀM_t with M_t = M_0 + B_t/√N.
inline FlowResult<double> wishart_integrate(const MatrixFlowSpec& spec, const Matrix& m0) {
    require(spec.m >= spec.n, ErrorKind::unsupported_aspect, "wishart_integrate: requires M >= N");
    require(m0.rows() == spec.m && m0.cols() == spec.n, ErrorKind::contract,
            "wishart_integrate: factor dimension does not match spec");
    const auto grid = time_grid(spec.t_end, spec.dt);
    Normal rng(spec.seed);
    FlowResult<double> out;
    out.path.kind = FlowKind::wishart;
    Matrix f = m0;
    auto record = [&](std::size_t s) {
        const Matrix x = f.transpose() * f;
        const auto sp = detail::diagonalize_checked<double>(x, spec.keep_frames, s);
        if (sp.values.minCoeff() < -1e-10)
            throw Error(ErrorKind::numeric,
                        "wishart_integrate: negative eigenvalue at step " + std::to_string(s));
        detail::record(out.path, grid[s], sp, spec.keep_frames, spec.gap_guard);
    };
    record(0);
    for (std::size_t s = 1; s < grid.size(); ++s) {
        const double sd = std::sqrt((grid[s] - grid[s - 1]) / spec.n);
        for (int i = 0; i < spec.m; ++i)
            for (int j = 0; j < spec.n; ++j) f(i, j) += sd * rng();
        record(s);
    }
    out.terminal = f.transpose() * f;
    return out;
}

// ---------------------------------------------------------------------------
// Eigenvector SDE conditioned on an eigenvalue path.
//
//   du_k = Σ_{ℓ≠k} σ_kℓ dB_kℓ u_ℓ − ½ Σ_{ℓ≠k} σ²_kℓ ν u_k dt
//
// symmetric:  σ_kℓ = 1/(√N(λ_k−λ_ℓ)), B real symmetric, ν = 1
// hermitian:  σ_kℓ = 1/(√(2N)(λ_k−λ_ℓ)), B_ℓk = conj(B_kℓ) with standard
//             real/imaginary parts, ν = 2 (E|dB|² = 2dt)
// covariance: σ_kℓ = √(λ_k+λ_ℓ)/(√N(λ_k−λ_ℓ)), ν = 1
//
// Euler–Maruyama on the full frame, then one Newton–Schulz projection back
// to the orthogonal/unitary group per step.

struct VectorFlowOptions {
    double micro_dt = 1e-4;
    double gap_guard = default_gap_guard;
    Symmetry symmetry = Symmetry::symmetric;
};

template <class Scalar>
struct VectorFlowResult {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> frame;
    double max_predefect = 0; // largest ‖UᴴU − I‖_max seen before projection
    long steps = 0;
};

namespace detail {

struct VectorFlowCoefficients {
    Matrix sigma; // σ_kℓ, antisymmetric in (k,ℓ)
    Vector drift; // −½ Σ_ℓ ν σ²_kℓ
};

inline VectorFlowCoefficients vector_flow_coefficients(const Vector& lambda, Symmetry sym, double gap_guard) {
    const int n = static_cast<int>(lambda.size());
    VectorFlowCoefficients c{Matrix::Zero(n, n), Vector::Zero(n)};
    const double nu = sym == Symmetry::hermitian ? 2.0 : 1.0;
    const double scale = sym == Symmetry::hermitian ? 1.0 / std::sqrt(2.0 * n) : 1.0 / std::sqrt(double(n));
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) {
            if (k == l) continue;
            const double gap = lambda(k) - lambda(l);
            if (std::abs(gap) < gap_guard)
                throw Error(ErrorKind::gap, "eigenvector SDE: gap below guard between indices " +
                                                std::to_string(std::min(k, l) + 1) + " and " +
                                                std::to_string(std::max(k, l) + 1));
            double s = scale / gap;
            if (sym == Symmetry::covariance) {
                const double sum = lambda(k) + lambda(l);
                require(sum >= 0, ErrorKind::contract, "eigenvector SDE: covariance flow needs λ >= 0");
                s *= std::sqrt(sum);
            }
            c.sigma(k, l) = s;
            c.drift(k) -= 0.5 * nu * s * s;
        }
    return c;
}

inline void fill_noise(Matrix& a, const VectorFlowCoefficients& c, double h, Normal& rng) {
    const auto n = a.rows();
    const double sd = std::sqrt(h);
    for (Eigen::Index k = 0; k < n; ++k) {
        a(k, k) = c.drift(k) * h;
        for (Eigen::Index l = k + 1; l < n; ++l) {
            const double db = sd * rng();
            // du_k gets σ_kℓ dB u_ℓ, i.e. A(ℓ,k); du_ℓ gets σ_ℓk dB u_k.
            a(l, k) = c.sigma(k, l) * db;
            a(k, l) = c.sigma(l, k) * db;
        }
    }
}

inline void fill_noise(CMatrix& a, const VectorFlowCoefficients& c, double h, Normal& rng) {
    const auto n = a.rows();
    const double sd = std::sqrt(h);
    for (Eigen::Index k = 0; k < n; ++k) {
        a(k, k) = c.drift(k) * h;
        for (Eigen::Index l = k + 1; l < n; ++l) {
            const double re = sd * rng(), im = sd * rng();
            const cplx db(re, im);
            a(l, k) = c.sigma(k, l) * db;
            a(k, l) = c.sigma(l, k) * std::conj(db);
        }
    }
}

} // namespace detail

/// Largest stable micro step: micro_dt · max σ²_kℓ ν ≤ 1/10 over the path
/// grid (equivalently micro_dt ≤ N g²/10 for the symmetric flow).
template <class Scalar>
double vector_flow_step_limit(const SpectralPath<Scalar>& path, Symmetry sym, double gap_guard) {
    double worst = 0;
    for (const auto& lam : path.lambdas) {
        const auto c = detail::vector_flow_coefficients(lam, sym, gap_guard);
        const double nu = sym == Symmetry::hermitian ? 2.0 : 1.0;
        worst = std::max(worst, nu * c.sigma.cwiseAbs2().maxCoeff());
    }
    return worst > 0 ? 0.1 / worst : std::numeric_limits<double>::infinity();
}

/// Simulates the frame from u0 along `path` up to path.t_end(). λ is
/// linearly interpolated at the left end of each micro step.
template <class Scalar, class PathScalar>
VectorFlowResult<Scalar> eigenvector_sde_simulate(
    const SpectralPath<PathScalar>& path, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& u0,
    std::uint64_t seed, const VectorFlowOptions& opt = {}, double step_limit = -1) {
    using Frame = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const int n = path.dim();
    require(u0.rows() == n && u0.cols() == n, ErrorKind::contract,
            "eigenvector_sde_simulate: frame dimension does not match path");
    require(orthonormality_defect(u0) < 1e-10, ErrorKind::contract,
            "eigenvector_sde_simulate: initial frame is not orthonormal");
    require(opt.micro_dt > 0, ErrorKind::contract, "eigenvector_sde_simulate: micro_dt must be positive");
    if (step_limit < 0) step_limit = vector_flow_step_limit(path, opt.symmetry, opt.gap_guard);
    require(opt.micro_dt <= step_limit, ErrorKind::stability,
            "eigenvector_sde_simulate: micro_dt " + format_double(opt.micro_dt) +
                " exceeds stability limit " + format_double(step_limit));

    VectorFlowResult<Scalar> out;
    out.frame = u0;
    const double t_end = path.t_end();
    if (t_end <= 0) return out;

    Normal rng(seed);
    Frame a(n, n), step(n, n);
    const bool frozen = path.lambdas.size() == 1 || path.kind == FlowKind::frozen;
    auto coeff = detail::vector_flow_coefficients(path.lambda_at(0.0), opt.symmetry, opt.gap_guard);
    const auto steps = static_cast<long>(std::ceil(t_end / opt.micro_dt - 1e-9));
    for (long s = 0; s < steps; ++s) {
        const double t0 = s * opt.micro_dt;
        const double h = std::min(opt.micro_dt, t_end - t0);
        if (!frozen && s > 0) coeff = detail::vector_flow_coefficients(path.lambda_at(t0), opt.symmetry, opt.gap_guard);
        detail::fill_noise(a, coeff, h, rng);
        step.noalias() = out.frame * a;
        out.frame += step;
        // UᴴU − I is needed for both the monitor and the projection.
        Frame g = -out.frame.adjoint() * out.frame;
        g.diagonal().array() += Scalar(1);
        out.max_predefect = std::max(out.max_predefect, g.cwiseAbs().maxCoeff());
        g.diagonal().array() += Scalar(2);
        step.noalias() = out.frame * g;
        out.frame = Scalar(0.5) * step;
    }
    out.steps = steps;
    reorthonormalize(out.frame);
    return out;
}

} // namespace emflow
