#pragma once

// Eigenvector observables: normalized overlap moments, Monte Carlo estimates
// of the moment field along a fixed eigenvalue path, Gaussian moment tables,
// the QUE statistic and maximum-principle diagnostics.
//
// Overlaps are z_k = √N⟨q, u_k⟩. Complex moments are normalized by j! (the
// j-th moment of |z|² for a standard complex Gaussian with E|z|² = 1), so
// every normalized moment equals 1 in expectation for Haar vectors, in both
// symmetry classes.

#include "emflow/configuration.hpp"
#include "emflow/core.hpp"
#include "emflow/dyson.hpp"
#include "emflow/parallel.hpp"
#include "emflow/semicircle.hpp"

#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

namespace emflow {

struct GaussianTargets {
    /// a(n) = Π_{k≤n, k odd} k = E 𝒩ⁿ for even n.
    static double real(int n) {
        require(n >= 0 && n % 2 == 0, ErrorKind::contract, "GaussianTargets: order must be even and >= 0");
        double a = 1;
        for (int k = 1; k <= n; k += 2) a *= k;
        return a;
    }
    /// E|𝒩₁ + i𝒩₂|^{2j} = 2^j j!.
    static double complex_raw(int j) {
        double a = 1;
        for (int k = 1; k <= j; ++k) a *= 2.0 * k;
        return a;
    }
    /// E|z|^{2j} = j! for a complex Gaussian with E|z|² = 1.
    static double complex_unit(int j) {
        double a = 1;
        for (int k = 2; k <= j; ++k) a *= k;
        return a;
    }
    /// Target for E(N|⟨q,u⟩|²)^j in the given class.
    static double moment(Symmetry cls, int j) {
        return cls == Symmetry::hermitian ? complex_unit(j) : real(2 * j);
    }
};

struct OverlapSample {
    std::vector<int> indices; // 0-based eigenvector indices
    CVector z;                // √N⟨q, u_k⟩ for k in indices
    bool is_complex = false;
    std::uint64_t seed = 0;
    double t = 0;
    std::string tag;

    int position_of(int k) const {
        for (std::size_t p = 0; p < indices.size(); ++p)
            if (indices[p] == k) return static_cast<int>(p);
        return -1;
    }
};

/// ⟨q, u_k⟩ for every column k; conjugate-linear in q as u_kᴴq.
template <class Scalar>
CVector overlaps(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& frame, const Vector& q) {
    require(frame.rows() == q.size(), ErrorKind::contract, "overlaps: dimension mismatch");
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w = frame.adjoint() * q.cast<Scalar>();
    return w.template cast<cplx>();
}

template <class Scalar>
OverlapSample make_overlap_sample(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& frame,
                                  const Vector& q, std::vector<int> indices = {}) {
    const int n = static_cast<int>(frame.cols());
    if (indices.empty())
        for (int k = 0; k < n; ++k) indices.push_back(k);
    const CVector w = overlaps(frame, q);
    OverlapSample s;
    s.is_complex = !std::is_same_v<Scalar, double>;
    s.z.resize(Eigen::Index(indices.size()));
    for (std::size_t p = 0; p < indices.size(); ++p) {
        require(indices[p] >= 0 && indices[p] < n, ErrorKind::contract, "make_overlap_sample: index out of range");
        s.z(Eigen::Index(p)) = std::sqrt(double(n)) * w(indices[p]);
    }
    s.indices = std::move(indices);
    return s;
}

/// Q(η) = Π_k z_k^{2η_k}/a(2η_k) (real) or Π_k |z_k|^{2η_k}/η_k! (complex).
inline double normalized_moment(const OverlapSample& s, const Configuration& eta) {
    double q = 1.0;
    const auto& occ = eta.occupations();
    for (int k = 0; k < eta.sites(); ++k) {
        if (!occ[k]) continue;
        const int p = s.position_of(k);
        require(p >= 0, ErrorKind::contract,
                "normalized_moment: index " + std::to_string(k + 1) + " not in the sample");
        const int j = occ[k];
        const double r2 = std::norm(s.z(p));
        q *= std::pow(r2, j) / (s.is_complex ? GaussianTargets::complex_unit(j) : GaussianTargets::real(2 * j));
    }
    return q;
}

/// Same as normalized_moment with |z_k|² supplied for all k.
inline double normalized_moment_from_squares(const Vector& z2, const int* x, int particles, Symmetry cls) {
    double q = 1.0;
    for (int a = 0; a < particles;) {
        int b = a;
        while (b < particles && x[b] == x[a]) ++b;
        const int j = b - a;
        q *= std::pow(z2(x[a]), j) / GaussianTargets::moment(cls, j);
        a = b;
    }
    return q;
}

struct MCEstimate {
    std::vector<double> mean;
    std::vector<double> stderr_;
    long trials = 0;
};

struct MCOptions {
    long trials = 1000;
    VectorFlowOptions flow;
    std::uint64_t seed = 1;
    int threads = 0;
};

/// E(Q_t(η) | λ) over independent eigenvector-SDE runs sharing one eigenvalue
/// path. Trials are summed in fixed blocks that are combined in block order,
/// so the result does not depend on the thread count.
template <class Scalar, class PathScalar>
MCEstimate estimate_f_mc(const SpectralPath<PathScalar>& path,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& u0, const Vector& q,
                         const std::vector<Configuration>& configs, const MCOptions& opt) {
    require(opt.trials >= 100, ErrorKind::contract, "estimate_f_mc: need at least 100 trials");
    require(!configs.empty(), ErrorKind::contract, "estimate_f_mc: no configurations");
    const int n = path.dim();
    require(std::abs(q.norm() - 1.0) < 1e-12 && q.size() == n, ErrorKind::contract,
            "estimate_f_mc: q must be a unit vector of dimension N");
    for (const auto& c : configs)
        require(c.sites() == n, ErrorKind::contract, "estimate_f_mc: configuration has wrong number of sites");
    const Symmetry cls = std::is_same_v<Scalar, double> ? Symmetry::symmetric : Symmetry::hermitian;
    const std::size_t m = configs.size();
    std::vector<std::vector<int>> pos;
    for (const auto& c : configs) pos.push_back(c.positions());

    const double step_limit = vector_flow_step_limit(path, opt.flow.symmetry, opt.flow.gap_guard);
    constexpr long block = 256;
    const long blocks = (opt.trials + block - 1) / block;
    // Per-block Welford accumulators, merged in block order.
    std::vector<double> means(blocks * m, 0.0), m2(blocks * m, 0.0);
    parallel_for(std::size_t(blocks), opt.threads, [&](std::size_t b) {
        const long lo = long(b) * block, hi = std::min(opt.trials, lo + block);
        for (long trial = lo; trial < hi; ++trial) {
            const auto res = eigenvector_sde_simulate(path, u0, substream_seed(opt.seed, std::uint64_t(trial)),
                                                      opt.flow, step_limit);
            const Vector z2 = overlaps(res.frame, q).cwiseAbs2() * double(n);
            for (std::size_t c = 0; c < m; ++c) {
                const double v =
                    normalized_moment_from_squares(z2, pos[c].data(), static_cast<int>(pos[c].size()), cls);
                const double d = v - means[b * m + c];
                means[b * m + c] += d / double(trial - lo + 1);
                m2[b * m + c] += d * (v - means[b * m + c]);
            }
        }
    });
    MCEstimate out;
    out.trials = opt.trials;
    out.mean.assign(m, 0.0);
    out.stderr_.assign(m, 0.0);
    for (std::size_t c = 0; c < m; ++c) {
        double mean = 0, acc = 0, cnt = 0;
        for (long b = 0; b < blocks; ++b) {
            const double nb = double(std::min(opt.trials, (b + 1) * block) - b * block);
            const double d = means[b * m + c] - mean;
            const double tot = cnt + nb;
            mean += d * nb / tot;
            acc += m2[b * m + c] + d * d * cnt * nb / tot;
            cnt = tot;
        }
        const double var = acc / (opt.trials - 1);
        out.mean[c] = mean;
        out.stderr_[c] = std::sqrt(var / opt.trials);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normality

struct MomentRow {
    std::vector<int> orders; // j_ℓ per index in I: moment of (N|⟨q,u_k⟩|²)^{j}
    double empirical = 0;
    double target = 0;
    double stderr_ = 0;
    double z_score = 0;
};

struct NormalityReport {
    std::vector<int> indices;
    std::vector<MomentRow> rows;
    long samples = 0;

    void write_csv(std::ostream& os) const {
        os << "k,moment_order,empirical,target,stderr,z_score\n";
        for (const auto& r : rows) {
            std::string k, ord;
            for (std::size_t l = 0; l < indices.size(); ++l) {
                if (l) k += '|', ord += '|';
                k += std::to_string(indices[l] + 1);
                ord += std::to_string(2 * r.orders[l]);
            }
            os << k << ',' << ord << ',' << format_double(r.empirical) << ',' << format_double(r.target) << ','
               << format_double(r.stderr_) << ',' << format_double(r.z_score) << '\n';
        }
    }
};

namespace detail {

inline void enumerate_orders(std::size_t m, int budget, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
    if (cur.size() == m) {
        bool any = false;
        for (int j : cur) any |= j > 0;
        if (any) out.push_back(cur);
        return;
    }
    for (int j = 0; 2 * j <= budget; ++j) {
        cur.push_back(j);
        enumerate_orders(m, budget - 2 * j, cur, out);
        cur.pop_back();
    }
}

} // namespace detail

/// Mixed moments E Π_ℓ (N|⟨q,u_{k_ℓ}⟩|²)^{j_ℓ} over Σ 2j_ℓ ≤ max_order, against
/// the Gaussian products Π a(2j_ℓ) (real) or Π j_ℓ! (complex).
inline NormalityReport normality_report(const std::vector<OverlapSample>& samples, const std::vector<int>& indices,
                                        int max_order) {
    require(samples.size() >= 30, ErrorKind::statistics, "normality_report: need at least 30 samples");
    require(max_order >= 2 && max_order <= 8 && max_order % 2 == 0, ErrorKind::contract,
            "normality_report: max_order must be even in [2, 8]");
    require(!indices.empty() && indices.size() <= 4, ErrorKind::contract, "normality_report: need 1 to 4 indices");
    const bool cplx_class = samples.front().is_complex;
    const Symmetry cls = cplx_class ? Symmetry::hermitian : Symmetry::symmetric;
    std::vector<std::vector<int>> orders;
    std::vector<int> cur;
    detail::enumerate_orders(indices.size(), max_order, cur, orders);

    NormalityReport rep;
    rep.indices = indices;
    rep.samples = long(samples.size());
    for (const auto& ord : orders) {
        MomentRow row;
        row.orders = ord;
        row.target = 1;
        for (int j : ord) row.target *= GaussianTargets::moment(cls, j);
        double s = 0, s2 = 0;
        for (const auto& smp : samples) {
            double v = 1;
            for (std::size_t l = 0; l < indices.size(); ++l) {
                const int p = smp.position_of(indices[l]);
                require(p >= 0, ErrorKind::contract, "normality_report: index missing from a sample");
                v *= std::pow(std::norm(smp.z(p)), ord[l]);
            }
            s += v;
            s2 += v * v;
        }
        const double cnt = double(samples.size());
        row.empirical = s / cnt;
        row.stderr_ = std::sqrt(std::max(0.0, (s2 - cnt * row.empirical * row.empirical) / (cnt - 1)) / cnt);
        row.z_score = row.stderr_ > 0 ? (row.empirical - row.target) / row.stderr_ : 0.0;
        rep.rows.push_back(row);
    }
    return rep;
}

/// Marginal moments pooled over an index window: per draw the window average
/// of (N|⟨q,u_k⟩|²)^j, then mean and standard error across draws.
inline std::vector<MomentRow> pooled_marginal_moments(const std::vector<OverlapSample>& samples,
                                                      const std::vector<int>& window, int max_order) {
    require(samples.size() >= 30, ErrorKind::statistics, "pooled_marginal_moments: need at least 30 samples");
    require(!window.empty(), ErrorKind::contract, "pooled_marginal_moments: empty window");
    const Symmetry cls = samples.front().is_complex ? Symmetry::hermitian : Symmetry::symmetric;
    std::vector<MomentRow> rows;
    for (int j = 1; 2 * j <= max_order; ++j) {
        MomentRow row;
        row.orders = {j};
        row.target = GaussianTargets::moment(cls, j);
        double s = 0, s2 = 0;
        for (const auto& smp : samples) {
            double v = 0;
            for (int k : window) {
                const int p = smp.position_of(k);
                require(p >= 0, ErrorKind::contract, "pooled_marginal_moments: index missing from a sample");
                v += std::pow(std::norm(smp.z(p)), j);
            }
            v /= double(window.size());
            s += v;
            s2 += v * v;
        }
        const double cnt = double(samples.size());
        row.empirical = s / cnt;
        row.stderr_ = std::sqrt(std::max(0.0, (s2 - cnt * row.empirical * row.empirical) / (cnt - 1)) / cnt);
        row.z_score = row.stderr_ > 0 ? (row.empirical - row.target) / row.stderr_ : 0.0;
        rows.push_back(row);
    }
    return rows;
}

/// Indices ⟦N/4, 3N/4⟧ (1-based), returned 0-based.
inline std::vector<int> bulk_window(int n) {
    std::vector<int> w;
    for (int k = std::max(1, n / 4); k <= (3 * n) / 4; ++k) w.push_back(k - 1);
    return w;
}

// ---------------------------------------------------------------------------
// QUE

struct QueInput {
    Vector a;

    int support() const {
        int s = 0;
        for (Eigen::Index i = 0; i < a.size(); ++i) s += a(i) != 0.0;
        return s;
    }
    std::string violation() const {
        if (support() == 0) return "test function has empty support";
        if (a.cwiseAbs().maxCoeff() > 1.0) return "test function has entries outside [-1, 1]";
        if (std::abs(a.sum()) > 1e-12) return "test function does not sum to zero";
        return {};
    }
};

/// ±1 alternating on the first `support` sites, zero elsewhere.
inline QueInput balanced_que_input(int n, int support) {
    require(support >= 2 && support <= n && support % 2 == 0, ErrorKind::contract,
            "balanced_que_input: support must be even and in [2, N]");
    QueInput in{Vector::Zero(n)};
    for (int i = 0; i < support; ++i) in.a(i) = i % 2 ? -1.0 : 1.0;
    return in;
}

/// (N/|a|) Σ_α a(α)|u(α)|².
template <class Derived>
double que_statistic(const Eigen::MatrixBase<Derived>& u, const QueInput& a) {
    require(u.size() == a.a.size(), ErrorKind::contract, "que_statistic: dimension mismatch");
    const std::string bad = a.violation();
    require(bad.empty(), ErrorKind::contract, "que_statistic: " + bad);
    require(std::abs(u.norm() - 1.0) < 1e-10, ErrorKind::contract, "que_statistic: u must be a unit vector");
    double acc = 0;
    for (Eigen::Index i = 0; i < u.size(); ++i) acc += a.a(i) * std::norm(u(i));
    return double(u.size()) / a.support() * acc;
}

inline double tail_probability(const std::vector<double>& stats, double delta) {
    if (stats.empty()) return 0.0;
    long c = 0;
    for (double s : stats) c += std::abs(s) > delta;
    return double(c) / double(stats.size());
}

// ---------------------------------------------------------------------------
// Maximum-principle diagnostics for the one-particle field

struct MaxPrincipleSeries {
    std::vector<double> times;
    std::vector<double> sup;   // S_t = max_k (f_t(k) − 1)
    std::vector<double> inf;   // min_k (f_t(k) − 1)
    std::vector<int> argmax;   // 0-based k attaining S_t
    std::vector<double> delta1; // E(Im⟨q,G q⟩ | λ) − Im m at λ_k + iη
    std::vector<double> delta2; // Im N⁻¹Tr G − Im m at λ_k + iη
    long violations = 0;        // increases of S_t or decreases of inf beyond tol

    void write_csv(std::ostream& os) const {
        os << "time,sup,inf,argmax,delta1,delta2\n";
        for (std::size_t i = 0; i < times.size(); ++i)
            os << format_double(times[i]) << ',' << format_double(sup[i]) << ',' << format_double(inf[i]) << ','
               << argmax[i] + 1 << ',' << format_double(delta1[i]) << ',' << format_double(delta2[i]) << '\n';
    }
};

/// Δ2(E, η) = Im N⁻¹Tr G(E+iη) − Im m(E+iη).
inline double delta2(const Vector& lambda, double e, double eta) {
    const cplx z(e, eta);
    return normalized_trace_green(lambda, z).imag() - stieltjes_m(z).imag();
}

/// For n = 1 the field is f_t(j) = E(N|⟨q,u_j⟩|² | λ), so the conditional
/// expectation of ⟨q,G(z)q⟩ is N⁻¹Σ_j f_t(j)/(λ_j − z) exactly.
template <class Scalar>
MaxPrincipleSeries max_principle_diagnostics(const std::vector<double>& times, const std::vector<Vector>& fields,
                                             const SpectralPath<Scalar>& path, double eta, double tol = 1e-9) {
    require(times.size() == fields.size(), ErrorKind::contract, "max_principle_diagnostics: size mismatch");
    require(eta > 0, ErrorKind::domain, "max_principle_diagnostics: eta must be positive");
    MaxPrincipleSeries s;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const Vector& f = fields[i];
        const Vector lam = path.lambda_at(times[i]);
        require(f.size() == lam.size(), ErrorKind::contract, "max_principle_diagnostics: field is not a one-particle field");
        Eigen::Index k;
        const double sup = f.maxCoeff(&k) - 1.0;
        const double inf = f.minCoeff() - 1.0;
        if (!s.sup.empty() && (sup > s.sup.back() + tol || inf < s.inf.back() - tol)) ++s.violations;
        const cplx z(lam(k), eta);
        cplx g = 0;
        for (Eigen::Index j = 0; j < f.size(); ++j) g += f(j) / (lam(j) - z);
        g /= double(f.size());
        s.times.push_back(times[i]);
        s.sup.push_back(sup);
        s.inf.push_back(inf);
        s.argmax.push_back(int(k));
        s.delta1.push_back(g.imag() - stieltjes_m(z).imag());
        s.delta2.push_back(delta2(lam, lam(k), eta));
    }
    return s;
}

} // namespace emflow
