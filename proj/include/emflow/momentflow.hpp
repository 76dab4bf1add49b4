#pragma once

// Eigenvector moment flow on n-particle configurations: jump rates built
// from eigenvalues, the generator (matrix-free), its reversible measure and
// Dirichlet form, adaptive time integration, short/long-range splitting and
// the flattening/averaging localization.

#include "emflow/configuration.hpp"
#include "emflow/core.hpp"
#include "emflow/dyson.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

namespace emflow {

enum class RangePart { full, short_range, long_range };

struct RateField {
    Matrix rates; // symmetric, nonnegative, zero diagonal
    Symmetry kind = Symmetry::symmetric;
    long guard_triggers = 0;
    double min_gap = std::numeric_limits<double>::infinity();
    RangePart part = RangePart::full;
    int ell = 0; // cutoff used for the split, 0 when unsplit

    int n() const { return static_cast<int>(rates.rows()); }
};

/// c_ij = 1/(N max(|λ_i−λ_j|, g)²); covariance: d_ij = (λ_i+λ_j)/(N max(|λ_i−λ_j|, g)²).
inline RateField rates_from_lambda(const Vector& lambda, Symmetry kind, double gap_guard = default_gap_guard) {
    const int n = static_cast<int>(lambda.size());
    require(n >= 2, ErrorKind::invalid_dimension, "rates_from_lambda: need N >= 2");
    for (int k = 1; k < n; ++k)
        require(lambda(k) >= lambda(k - 1), ErrorKind::contract, "rates_from_lambda: eigenvalues not sorted");
    if (kind == Symmetry::covariance)
        require(lambda(0) >= 0, ErrorKind::contract, "rates_from_lambda: covariance rates need lambda >= 0");
    RateField r;
    r.kind = kind;
    r.rates = Matrix::Zero(n, n);
    for (int k = 1; k < n; ++k) r.min_gap = std::min(r.min_gap, lambda(k) - lambda(k - 1));
    for (int j = 0; j < n; ++j)
        for (int i = j + 1; i < n; ++i) {
            double gap = std::abs(lambda(i) - lambda(j));
            if (gap < gap_guard) {
                gap = gap_guard;
                ++r.guard_triggers;
            }
            const double num = kind == Symmetry::covariance ? lambda(i) + lambda(j) : 1.0;
            r.rates(i, j) = r.rates(j, i) = num / (n * gap * gap);
        }
    return r;
}

/// (short, long) with short keeping |i−j| ≤ ℓ.
inline std::pair<RateField, RateField> split_short_long(const RateField& r, int ell) {
    const int n = r.n();
    require(ell >= 1 && ell <= n, ErrorKind::contract, "split_short_long: cutoff must lie in [1, N]");
    require(r.part == RangePart::full, ErrorKind::contract, "split_short_long: rates already split");
    RateField s = r, l = r;
    s.part = RangePart::short_range;
    l.part = RangePart::long_range;
    s.ell = l.ell = ell;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) (std::abs(i - j) <= ell ? l.rates(i, j) : s.rates(i, j)) = 0.0;
    return {s, l};
}

inline RateField restrict_rates(const RateField& r, RangePart part, int ell) {
    if (part == RangePart::full) return r;
    auto [s, l] = split_short_long(r, ell);
    return part == RangePart::short_range ? s : l;
}

// ---------------------------------------------------------------------------

/// Jump weights: symmetric 2η_i(1+2η_j), hermitian η_i(1+η_j). Covariance
/// rates use the symmetric form.
struct JumpForm {
    double a, b;
    explicit JumpForm(Symmetry cls)
        : a(cls == Symmetry::hermitian ? 1.0 : 2.0), b(cls == Symmetry::hermitian ? 1.0 : 2.0) {}
    double operator()(int eta_i, int eta_j) const { return a * eta_i * (1.0 + b * eta_j); }
};

/// φ(k) = Π_{i≤k}(1 − 1/(2i)), φ(0) = 1.
inline double phi(int k) {
    double p = 1.0;
    for (int i = 1; i <= k; ++i) p *= 1.0 - 1.0 / (2.0 * i);
    return p;
}

inline double reversible_weight(const Configuration& eta, Symmetry cls) {
    if (cls == Symmetry::hermitian) return 1.0;
    double p = 1.0;
    for (int k : eta.occupations()) p *= phi(k);
    return p;
}

struct MomentField {
    std::shared_ptr<const ConfigSpace> space;
    Vector values;

    static MomentField constant(std::shared_ptr<const ConfigSpace> sp, double v) {
        MomentField f{sp, Vector::Constant(static_cast<Eigen::Index>(sp->size()), v)};
        return f;
    }
    static MomentField delta(std::shared_ptr<const ConfigSpace> sp, const Configuration& eta) {
        MomentField f = constant(sp, 0.0);
        f.values(static_cast<Eigen::Index>(sp->index_of(eta))) = 1.0;
        return f;
    }
    double operator()(const Configuration& eta) const {
        return values(static_cast<Eigen::Index>(space->index_of(eta)));
    }

    void write_csv(std::ostream& os) const {
        os << "config_index,occupation,value\n";
        for (std::size_t i = 0; i < space->size(); ++i)
            os << i << ',' << space->at(i).to_string() << ',' << format_double(values(Eigen::Index(i))) << '\n';
    }
};

inline std::shared_ptr<const ConfigSpace> make_space(int sites, int particles,
                                                     std::uint64_t cap = default_state_cap) {
    return std::make_shared<const ConfigSpace>(sites, particles, cap);
}

/// π over the whole space, in enumeration order.
inline Vector reversible_weights(const ConfigSpace& sp, Symmetry cls) {
    Vector w(static_cast<Eigen::Index>(sp.size()));
    const int n = sp.particles();
    for (std::size_t c = 0; c < sp.size(); ++c) {
        double p = 1.0;
        if (cls != Symmetry::hermitian) {
            const int* x = sp.positions(c);
            for (int a = 0; a < n;) {
                int b = a;
                while (b < n && x[b] == x[a]) ++b;
                p *= phi(b - a);
                a = b;
            }
        }
        w(Eigen::Index(c)) = p;
    }
    return w;
}

namespace detail {

/// Calls visit(c, i, j, rate·weight, target) for every allowed jump out of
/// every configuration c.
template <class Visit>
void for_each_jump(const ConfigSpace& sp, const RateField& r, Symmetry cls, Visit&& visit) {
    const int n_sites = sp.sites();
    const int n = sp.particles();
    require(r.n() == n_sites, ErrorKind::contract, "generator: rate field and configuration space disagree on N");
    const JumpForm w(cls);
    std::vector<int> occ(n_sites, 0), scratch(n + 1);
    const bool banded = r.part == RangePart::short_range;
    for (std::size_t c = 0; c < sp.size(); ++c) {
        const int* x = sp.positions(c);
        for (int a = 0; a < n; ++a) ++occ[x[a]];
        for (int a = 0; a < n; ++a) {
            if (a > 0 && x[a] == x[a - 1]) continue;
            const int i = x[a];
            const int lo = banded ? std::max(0, i - r.ell) : 0;
            const int hi = banded ? std::min(n_sites - 1, i + r.ell) : n_sites - 1;
            const double* col = r.rates.data() + static_cast<std::size_t>(i) * n_sites;
            for (int j = lo; j <= hi; ++j) {
                if (j == i || col[j] == 0.0) continue;
                visit(c, i, j, col[j] * w(occ[i], occ[j]), sp.rank_after_move(x, i, j, scratch.data()));
            }
        }
        for (int a = 0; a < n; ++a) occ[x[a]] = 0;
    }
}

} // namespace detail

/// out = ℬ f.
inline void generator_apply(const ConfigSpace& sp, const Vector& f, const RateField& r, Symmetry cls, Vector& out) {
    require(f.size() == Eigen::Index(sp.size()), ErrorKind::contract, "generator_apply: field length mismatch");
    out.setZero(f.size());
    detail::for_each_jump(sp, r, cls, [&](std::size_t c, int, int, double rate, std::size_t t) {
        out(Eigen::Index(c)) += rate * (f(Eigen::Index(t)) - f(Eigen::Index(c)));
    });
}

inline MomentField generator_apply(const MomentField& f, const RateField& r, Symmetry cls) {
    MomentField out{f.space, Vector()};
    generator_apply(*f.space, f.values, r, cls, out.values);
    return out;
}

/// max_η Σ_{i≠j} rate(η → η^{i,j}), exact, O(n²) per configuration.
inline double max_exit_rate(const ConfigSpace& sp, const RateField& r, Symmetry cls) {
    const int n_sites = sp.sites();
    const int n = sp.particles();
    const JumpForm w(cls);
    Vector row = r.rates.colwise().sum().transpose();
    double best = 0.0;
    for (std::size_t c = 0; c < sp.size(); ++c) {
        const int* x = sp.positions(c);
        double exit = 0.0;
        for (int a = 0; a < n;) {
            int b = a;
            while (b < n && x[b] == x[a]) ++b;
            const int i = x[a];
            const int eta_i = b - a;
            // Σ_{j≠i} c_ij(1 + bη_j) = R_i + b Σ_{j occupied, j≠i} c_ij η_j
            double s = row(i);
            for (int q = 0; q < n; ++q)
                if (x[q] != i) s += w.b * r.rates(x[q], i);
            exit += w.a * eta_i * s;
            a = b;
        }
        best = std::max(best, exit);
    }
    (void)n_sites;
    return best;
}

struct BalanceReport {
    double detailed_balance = 0; // max |π(η)r(η→ξ) − π(ξ)r(ξ→η)|
    double adjointness = 0;      // max relative |⟨g,ℬf⟩_π − ⟨ℬg,f⟩_π|
};

inline BalanceReport detailed_balance_residual(const RateField& r, int particles, Symmetry cls,
                                               std::uint64_t seed = 1, int pairs = 100) {
    const ConfigSpace sp(r.n(), particles);
    const Vector pi = reversible_weights(sp, cls);
    const JumpForm w(cls);
    BalanceReport rep;
    std::vector<int> occ(sp.sites(), 0);
    detail::for_each_jump(sp, r, cls, [&](std::size_t c, int i, int j, double rate, std::size_t t) {
        // Reverse jump j → i from ξ = η^{i,j}: ξ_j = η_j + 1, ξ_i = η_i − 1.
        const int* x = sp.positions(c);
        int eta_i = 0, eta_j = 0;
        for (int a = 0; a < sp.particles(); ++a) {
            eta_i += x[a] == i;
            eta_j += x[a] == j;
        }
        const double back = r.rates(j, i) * w(eta_j + 1, eta_i - 1);
        rep.detailed_balance = std::max(rep.detailed_balance,
                                        std::abs(pi(Eigen::Index(c)) * rate - pi(Eigen::Index(t)) * back));
    });
    Normal rng(seed);
    Vector f(pi.size()), g(pi.size()), bf, bg;
    for (int p = 0; p < pairs; ++p) {
        for (Eigen::Index k = 0; k < f.size(); ++k) {
            f(k) = 2 * rng.uniform01() - 1;
            g(k) = 2 * rng.uniform01() - 1;
        }
        generator_apply(sp, f, r, cls, bf);
        generator_apply(sp, g, r, cls, bg);
        const double lhs = (pi.array() * g.array() * bf.array()).sum();
        const double rhs = (pi.array() * bg.array() * f.array()).sum();
        const double scale = (pi.array() * g.array().abs() * bf.array().abs()).sum() +
                             (pi.array() * bg.array().abs() * f.array().abs()).sum();
        rep.adjointness = std::max(rep.adjointness, std::abs(lhs - rhs) / std::max(scale, 1e-300));
    }
    return rep;
}

/// Symmetric: Σ_η π Σ c η_i(1+2η_j)(Δf)²; hermitian: ½ Σ_η Σ c η_i(1+η_j)(Δf)².
/// Both equal ½ Σ π·rate·(Δf)² = −⟨f, ℬf⟩_π.
inline double dirichlet_form(const MomentField& f, const RateField& r, Symmetry cls) {
    const Vector pi = reversible_weights(*f.space, cls);
    double d = 0.0;
    detail::for_each_jump(*f.space, r, cls, [&](std::size_t c, int, int, double rate, std::size_t t) {
        const double diff = f.values(Eigen::Index(t)) - f.values(Eigen::Index(c));
        d += 0.5 * pi(Eigen::Index(c)) * rate * diff * diff;
    });
    return d;
}

inline double pi_inner(const MomentField& f, const Vector& g, Symmetry cls) {
    return (reversible_weights(*f.space, cls).array() * f.values.array() * g.array()).sum();
}

// ---------------------------------------------------------------------------
// Time integration

/// Rates at time t. Built from a path by `path_rates`, or any custom source.
using RateSchedule = std::function<RateField(double)>;

template <class Scalar>
RateSchedule path_rates(const SpectralPath<Scalar>& path, Symmetry kind, double gap_guard = default_gap_guard) {
    return [&path, kind, gap_guard](double t) { return rates_from_lambda(path.lambda_at(t), kind, gap_guard); };
}

inline RateSchedule frozen_rates(const RateField& r) {
    return [r](double) { return r; };
}

struct EvolveOptions {
    double tol = 1e-10;
    RangePart part = RangePart::full;
    int ell = 0;
    std::vector<double> snapshot_times; // ascending, within (0, t_end]
    long max_steps = 50'000'000;
    /// Called with (t, f_t) after every accepted step.
    std::function<void(double, const Vector&)> observer;
};

struct EvolveResult {
    MomentField f;
    std::vector<Vector> snapshots;
    long accepted = 0;
    long rejected = 0;
    long monitor_rejections = 0; // steps rejected by the maximum-principle monitor
    long guard_triggers = 0;     // largest clamp count seen in any rate field
    double min_gap = std::numeric_limits<double>::infinity();
    double invariant_drift = 0; // max |Σ π f_t − Σ π f_0|
};

/// ∂_t f = ℬ(t) f by the three-stage strong-stability-preserving Runge–Kutta
/// scheme with an embedded second-order (Heun) estimate. Each stage is a
/// forward Euler step, a convex combination whenever h·exit ≤ 1, so with the
/// step capped at 0.5/max exit rate the discrete maximum principle holds.
inline EvolveResult evolve(const MomentField& f0, const RateSchedule& schedule, double t_end, Symmetry cls,
                           const EvolveOptions& opt = {}) {
    require(t_end >= 0, ErrorKind::contract, "evolve: negative end time");
    require(opt.tol > 0, ErrorKind::contract, "evolve: tolerance must be positive");
    for (std::size_t k = 0; k < opt.snapshot_times.size(); ++k)
        require(opt.snapshot_times[k] > 0 && opt.snapshot_times[k] <= t_end &&
                    (k == 0 || opt.snapshot_times[k] > opt.snapshot_times[k - 1]),
                ErrorKind::contract, "evolve: snapshot times must be ascending within (0, t_end]");
    const ConfigSpace& sp = *f0.space;
    const Vector pi = reversible_weights(sp, cls);
    const double mass0 = pi.dot(f0.values);

    EvolveResult res{f0, {}, 0, 0, 0, 0, std::numeric_limits<double>::infinity(), 0};
    Vector& f = res.f.values;
    Vector k1, k2, k3, u1, u2, u3, heun;
    auto rates_at = [&](double t) {
        RateField r = restrict_rates(schedule(t), opt.part, opt.ell);
        res.guard_triggers = std::max(res.guard_triggers, r.guard_triggers);
        res.min_gap = std::min(res.min_gap, r.min_gap);
        return r;
    };

    double t = 0.0;
    std::size_t next_snap = 0;
    const double h_min = 1e-14 * std::max(1.0, t_end);
    double h = t_end;
    bool first = true;
    while (t < t_end) {
        require(res.accepted + res.rejected < opt.max_steps, ErrorKind::stiffness,
                "evolve: step budget exhausted at t=" + format_double(t) +
                    " (min gap " + format_double(res.min_gap) + ")");
        const double stop = next_snap < opt.snapshot_times.size() ? opt.snapshot_times[next_snap] : t_end;
        const RateField r0 = rates_at(t);
        const double exit0 = max_exit_rate(sp, r0, cls);
        if (first && exit0 > 0) h = 0.5 / exit0;
        first = false;
        h = std::min(h, stop - t);
        RateField r1, rh;
        for (;;) {
            if (exit0 > 0) h = std::min(h, 0.5 / exit0);
            r1 = rates_at(t + h);
            rh = rates_at(t + 0.5 * h);
            const double exit_max = std::max({exit0, max_exit_rate(sp, r1, cls), max_exit_rate(sp, rh, cls)});
            if (exit_max == 0 || h * exit_max <= 0.5 + 1e-12) break;
            h = 0.45 / exit_max;
            require(h >= h_min, ErrorKind::stiffness,
                    "evolve: step underflow at t=" + format_double(t) + " (min gap " + format_double(res.min_gap) + ")");
        }

        generator_apply(sp, f, r0, cls, k1);
        u1 = f + h * k1;
        generator_apply(sp, u1, r1, cls, k2);
        heun = 0.5 * f + 0.5 * (u1 + h * k2);
        u2 = 0.75 * f + 0.25 * (u1 + h * k2);
        generator_apply(sp, u2, rh, cls, k3);
        u3 = f / 3.0 + (2.0 / 3.0) * (u2 + h * k3);

        const double scale = std::max(1.0, f.cwiseAbs().maxCoeff());
        const double err = (u3 - heun).cwiseAbs().maxCoeff();
        const double band = 10 * opt.tol * scale;
        const bool monitor_ok =
            u3.maxCoeff() <= f.maxCoeff() + band && u3.minCoeff() >= f.minCoeff() - band;
        const double factor = err > 0 ? std::clamp(0.9 * std::cbrt(opt.tol * scale / err), 0.2, 2.0) : 2.0;
        if (err <= opt.tol * scale && monitor_ok) {
            f = u3;
            t = (h == stop - t) ? stop : t + h;
            ++res.accepted;
            res.invariant_drift = std::max(res.invariant_drift, std::abs(pi.dot(f) - mass0));
            if (opt.observer) opt.observer(t, f);
            if (next_snap < opt.snapshot_times.size() && t >= opt.snapshot_times[next_snap]) {
                res.snapshots.push_back(f);
                ++next_snap;
            }
            h *= factor;
        } else {
            ++res.rejected;
            if (!monitor_ok) ++res.monitor_rejections;
            h *= monitor_ok ? factor : 0.5;
            require(h >= h_min, ErrorKind::stiffness,
                    "evolve: step underflow at t=" + format_double(t) + " (min gap " + format_double(res.min_gap) + ")");
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Localization

struct FlatAverage {
    MomentField av;
    Vector coefficients; // a_η
};

/// Av(f) = a_η f + (1 − a_η), a_η = fraction of a ∈ ⟦αN, 2αN⟧ with η ⊂ ⟦a, N+1−a⟧.
inline FlatAverage flat_av(const MomentField& f, double alpha) {
    const ConfigSpace& sp = *f.space;
    const int n_sites = sp.sites();
    require(alpha > 0 && alpha < 0.25, ErrorKind::contract, "flat_av: alpha must lie in (0, 1/4)");
    require(alpha * n_sites >= 1, ErrorKind::contract, "flat_av: alpha*N must be at least 1");
    const int a_lo = static_cast<int>(std::ceil(alpha * n_sites - 1e-12));
    const int a_hi = static_cast<int>(std::floor(2 * alpha * n_sites + 1e-12));
    const int count = a_hi - a_lo + 1;
    FlatAverage out{MomentField{f.space, Vector(f.values.size())}, Vector(f.values.size())};
    for (std::size_t c = 0; c < sp.size(); ++c) {
        const int* x = sp.positions(c);
        // 1-based support is ⟦x_min+1, x_max+1⟧; need a ≤ x_min+1 and x_max+1 ≤ N+1−a.
        const int lo = sp.particles() ? x[0] + 1 : n_sites;
        const int hi = sp.particles() ? x[sp.particles() - 1] + 1 : 1;
        const int a_max = std::min(lo, n_sites + 1 - hi);
        const int inside = std::clamp(a_max - a_lo + 1, 0, count);
        const double a_eta = double(inside) / count;
        const auto k = Eigen::Index(c);
        out.coefficients(k) = a_eta;
        out.av.values(k) = a_eta * f.values(k) + (1.0 - a_eta);
    }
    return out;
}

/// ∂_t g = 𝒮(t) g, g_0 = Av f_0, under the short-range generator with cutoff ℓ.
inline EvolveResult localized_evolve(const MomentField& f0, const RateSchedule& schedule, double t_end, int ell,
                                     double alpha, Symmetry cls, EvolveOptions opt = {}) {
    opt.part = RangePart::short_range;
    opt.ell = ell;
    return evolve(flat_av(f0, alpha).av, schedule, t_end, cls, opt);
}

struct PropagationProfile {
    std::vector<double> mass; // indexed by distance d
    double total = 0;         // Σ_ξ p_t(ξ), 1 up to integration error
    double bulk_threshold = 0;
    double edge_threshold = 0;
    double beyond_bulk = 0; // mass at d > N^ε ℓ
    double beyond_edge = 0; // mass at d > N^{1/3+ε} ℓ^{2/3}
    EvolveResult stats;

    double mass_beyond(double d) const {
        double s = 0;
        for (std::size_t k = 0; k < mass.size(); ++k)
            if (double(k) > d) s += mass[k];
        return s;
    }

    void write_csv(std::ostream& os) const {
        os << "distance,mass\n";
        for (std::size_t d = 0; d < mass.size(); ++d) os << d << ',' << format_double(mass[d]) << '\n';
    }
};

/// Transition mass of the short-range dynamics started at η0:
/// p_t(ξ) = π(ξ)(U_𝒮 δ_{η0})(ξ)/π(η0), a probability vector by reversibility.
inline PropagationProfile propagation_profile(const Configuration& eta0, const RateSchedule& schedule, double t,
                                              int ell, Symmetry cls, double epsilon = 0.0,
                                              EvolveOptions opt = {}) {
    auto sp = make_space(eta0.sites(), eta0.particles());
    opt.part = RangePart::short_range;
    opt.ell = ell;
    PropagationProfile out;
    out.stats = evolve(MomentField::delta(sp, eta0), schedule, t, cls, opt);
    const Vector pi = reversible_weights(*sp, cls);
    const double pi0 = reversible_weight(eta0, cls);
    const auto x0 = eta0.positions();
    const int n = sp->particles();
    for (std::size_t c = 0; c < sp->size(); ++c) {
        const int* x = sp->positions(c);
        long d = 0;
        for (int a = 0; a < n; ++a) d += std::abs(x[a] - x0[a]);
        if (out.mass.size() <= std::size_t(d)) out.mass.resize(d + 1, 0.0);
        const double p = pi(Eigen::Index(c)) * out.stats.f.values(Eigen::Index(c)) / pi0;
        out.mass[d] += std::abs(p);
        out.total += p;
    }
    const double N = eta0.sites();
    out.bulk_threshold = std::pow(N, epsilon) * ell;
    out.edge_threshold = std::pow(N, 1.0 / 3.0 + epsilon) * std::pow(double(ell), 2.0 / 3.0);
    out.beyond_bulk = out.mass_beyond(out.bulk_threshold);
    out.beyond_edge = out.mass_beyond(out.edge_threshold);
    return out;
}

} // namespace emflow
