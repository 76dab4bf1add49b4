// Declarative experiment runner: typed key/value configs, validation, and the
// eight experiments behind the command-line tool. Every experiment is a pure
// function of its config (plus a thread count that never changes results)
// returning in-memory CSV artifacts.
#pragma once

#include "emflow/configuration.hpp"
#include "emflow/core.hpp"
#include "emflow/dyson.hpp"
#include "emflow/ensemble.hpp"
#include "emflow/momentflow.hpp"
#include "emflow/observables.hpp"
#include "emflow/semicircle.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace emflow::experiment {

inline constexpr std::string_view version = "0.1.0";

// ---------------------------------------------------------------------------
// Keys

enum class ValueType { integer, real, text, choice, real_list, int_list };

struct KeySpec {
    std::string_view name;
    std::string_view fallback;
    ValueType type;
    std::string_view choices; // '|' separated, choice keys only
    std::string_view help;
};

inline const std::vector<KeySpec>& key_table() {
    using V = ValueType;
    static const std::vector<KeySpec> table = {
        {"experiment", "", V::choice, "|spectrum|dbm|vectorflow|momentflow|fsp|que|normality|wishart", "experiment to run"},
        {"N", "100", V::integer, "", "matrix dimension / number of sites"},
        {"M", "0", V::integer, "", "rows of the covariance factor (wishart)"},
        {"class", "symmetric", V::choice, "symmetric|hermitian|covariance", "symmetry class"},
        {"law", "gaussian", V::choice, "gaussian|bernoulli|uniform", "entry law"},
        {"profile", "goe", V::choice, "goe|uniform|banded", "variance profile"},
        {"c_min", "0.5", V::real, "", "banded profile lower bound (times 1/N)"},
        {"c_max", "2", V::real, "", "banded profile upper bound (times 1/N)"},
        {"t_end", "0.1", V::real, "", "final time"},
        {"dt", "0.01", V::real, "", "matrix flow grid step"},
        {"micro_dt", "0.0001", V::real, "", "eigenvector SDE step"},
        {"gap_guard", "1e-06", V::real, "", "eigenvalue gap floor"},
        {"time", "raw", V::choice, "raw|rescaled", "report additive flows in raw or Wigner-rescaled time"},
        {"flow", "additive", V::choice, "additive|ou|frozen", "eigenvalue path"},
        {"lambda", "sample", V::text, "", "initial spectrum: sample, classical, equispaced, or a comma list"},
        {"lambda_lo", "-1.5", V::real, "", "left end for lambda = equispaced"},
        {"lambda_hi", "1.5", V::real, "", "right end for lambda = equispaced"},
        {"n", "1", V::integer, "", "particles (moment order)"},
        {"ell", "0", V::integer, "", "short-range cutoff, 0 for none"},
        {"part", "full", V::choice, "full|short|long", "generator part"},
        {"alpha", "0.1", V::real, "", "flattening window parameter"},
        {"tol", "1e-10", V::real, "", "moment flow integrator tolerance"},
        {"eta0", "", V::text, "", "initial configuration, e.g. 3:2|7:1 (1-based sites)"},
        {"f0", "delta", V::choice, "delta|overlap", "moment flow initial field"},
        {"times", "", V::real_list, "", "output times (comma list)"},
        {"snapshots", "10", V::integer, "", "equispaced output times when times is empty"},
        {"compare", "0", V::integer, "", "fsp: also report the full vs short-range l1 difference"},
        {"epsilon", "0", V::real, "", "fsp: exponent in the distance thresholds"},
        {"ode_time_factor", "1", V::real, "", "vectorflow: evaluate the moment flow at this multiple of t_end"},
        {"q_kind", "e1", V::choice, "e1|uniform|random", "test vector"},
        {"indices", "", V::int_list, "", "eigenvector indices (1-based), empty for the bulk window"},
        {"orders", "4", V::integer, "", "largest moment order (even)"},
        {"trials", "1000", V::integer, "", "Monte Carlo trials"},
        {"draws", "100", V::integer, "", "independent matrix draws"},
        {"delta", "0.5", V::real, "", "QUE tail threshold"},
        {"support", "0", V::integer, "", "QUE test function support, 0 for N"},
        {"omega", "0.3", V::real, "", "rigidity exponent"},
        {"xi", "0", V::real, "", "isotropic bound exponent"},
        {"energy", "0", V::real, "", "spectral parameter real part"},
        {"eta", "0", V::real, "", "spectral parameter imaginary part, 0 for N^-1/2"},
        {"seed", "1", V::integer, "", "master seed"},
        {"output_dir", "", V::text, "", "artifact directory"},
    };
    return table;
}

inline const KeySpec* find_key(std::string_view name) {
    for (const auto& k : key_table())
        if (k.name == name) return &k;
    return nullptr;
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto p = s.find(sep, start);
        out.push_back(trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
        if (p == std::string_view::npos) break;
        start = p + 1;
    }
    return out;
}

inline bool parse_long(std::string_view s, long& v) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    return !s.empty() && r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

inline bool parse_double(std::string_view s, double& v) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    return !s.empty() && r.ec == std::errc{} && r.ptr == s.data() + s.size() && std::isfinite(v);
}

inline bool in_choices(std::string_view choices, std::string_view v) {
    for (const auto& c : split(choices, '|'))
        if (c == v) return true;
    return false;
}

} // namespace detail

struct Diagnostic {
    ErrorKind kind = ErrorKind::validation;
    std::string message;
};

/// Flat key/value config. Values stay strings; typed getters parse on demand
/// and `validate` checks every one of them up front.
class Config {
public:
    Config() {
        for (const auto& k : key_table()) kv_[std::string(k.name)] = std::string(k.fallback);
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    const std::map<std::string, std::string>& entries() const { return kv_; }

    const std::string& str(const std::string& key) const {
        const auto it = kv_.find(key);
        require(it != kv_.end(), ErrorKind::contract, "config: no key '" + key + "'");
        return it->second;
    }
    long integer(const std::string& key) const {
        long v = 0;
        require(detail::parse_long(str(key), v), ErrorKind::validation, "config: " + key + " is not an integer");
        return v;
    }
    double real(const std::string& key) const {
        double v = 0;
        require(detail::parse_double(str(key), v), ErrorKind::validation, "config: " + key + " is not a number");
        return v;
    }
    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        if (str(key).empty()) return out;
        for (const auto& p : detail::split(str(key), ',')) {
            double v = 0;
            require(detail::parse_double(p, v), ErrorKind::validation, "config: bad number '" + p + "' in " + key);
            out.push_back(v);
        }
        return out;
    }
    std::vector<long> integers(const std::string& key) const {
        std::vector<long> out;
        if (str(key).empty()) return out;
        for (const auto& p : detail::split(str(key), ',')) {
            long v = 0;
            require(detail::parse_long(p, v), ErrorKind::validation, "config: bad integer '" + p + "' in " + key);
            out.push_back(v);
        }
        return out;
    }

    /// Sorted `key = value` lines without output_dir: the hashed identity of a run.
    std::string canonical() const {
        std::string s;
        for (const auto& [k, v] : kv_)
            if (k != "output_dir") s += k + " = " + v + "\n";
        return s;
    }
    std::uint64_t hash() const { return fnv1a(canonical()); }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    std::map<std::string, std::string> kv_;
};

/// `key = value` lines, '#' starts a comment. Syntax problems become
/// diagnostics; unknown keys are stored and reported by `validate`.
inline std::vector<Diagnostic> parse_text(std::string_view text, Config& cfg) {
    std::vector<Diagnostic> out;
    std::map<std::string, int> seen;
    std::istringstream is{std::string(text)};
    std::string line;
    int no = 0;
    while (std::getline(is, line)) {
        ++no;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            out.push_back({ErrorKind::validation, "line " + std::to_string(no) + ": expected key = value"});
            continue;
        }
        const std::string key = detail::trim(std::string_view(t).substr(0, eq));
        const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) {
            out.push_back({ErrorKind::validation, "line " + std::to_string(no) + ": empty key"});
            continue;
        }
        if (seen.count(key))
            out.push_back({ErrorKind::validation, "line " + std::to_string(no) + ": duplicate key '" + key +
                                                      "' (first on line " + std::to_string(seen[key]) + ")"});
        seen[key] = no;
        cfg.set(key, value);
    }
    return out;
}

inline std::uint64_t configuration_total(int sites, int max_particles) {
    std::uint64_t total = 0;
    for (int p = 1; p <= max_particles; ++p) total += configuration_count(sites, p);
    return total;
}

/// Every violated constraint, in key-table order then cross-key checks.
/// Never throws. Cap violations carry ErrorKind::enumeration_cap.
inline std::vector<Diagnostic> validate(const Config& cfg) {
    std::vector<Diagnostic> d;
    auto bad = [&](std::string msg) { d.push_back({ErrorKind::validation, std::move(msg)}); };
    for (const auto& [k, v] : cfg.entries())
        if (!find_key(k)) bad("unknown key '" + k + "'");
    const std::size_t unknown = d.size();
    for (const auto& [k, v] : cfg.entries()) {
        const KeySpec* spec = find_key(k);
        if (!spec) continue;
        long l = 0;
        double x = 0;
        switch (spec->type) {
        case ValueType::integer:
            if (!detail::parse_long(v, l)) bad(k + ": '" + v + "' is not an integer");
            break;
        case ValueType::real:
            if (!detail::parse_double(v, x)) bad(k + ": '" + v + "' is not a finite number");
            break;
        case ValueType::choice:
            if (!detail::in_choices(spec->choices, v)) bad(k + ": '" + v + "' is not one of " + std::string(spec->choices));
            break;
        case ValueType::real_list:
            if (!v.empty())
                for (const auto& p : detail::split(v, ','))
                    if (!detail::parse_double(p, x)) bad(k + ": '" + p + "' is not a finite number");
            break;
        case ValueType::int_list:
            if (!v.empty())
                for (const auto& p : detail::split(v, ','))
                    if (!detail::parse_long(p, l)) bad(k + ": '" + p + "' is not an integer");
            break;
        case ValueType::text: break;
        }
    }
    if (d.size() > unknown) return d; // range checks below assume well-typed values

    const std::string exp = cfg.str("experiment");
    const long n = cfg.integer("N"), m = cfg.integer("M"), particles = cfg.integer("n"), ell = cfg.integer("ell");
    const std::string cls = cfg.str("class");
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) bad(msg);
    };
    need(n >= 2, "N must be >= 2");
    need(particles >= 1, "n must be >= 1");
    need(cfg.real("t_end") >= 0, "t_end must be >= 0");
    need(cfg.real("dt") > 0, "dt must be > 0");
    need(cfg.real("micro_dt") > 0, "micro_dt must be > 0");
    need(cfg.real("gap_guard") > 0, "gap_guard must be > 0");
    need(cfg.real("tol") > 0 && cfg.real("tol") <= 1e-2, "tol must be in (0, 1e-2]");
    need(cfg.real("alpha") > 0 && cfg.real("alpha") < 0.25, "alpha must be in (0, 1/4)");
    need(cfg.integer("trials") >= 100, "trials must be >= 100");
    need(cfg.integer("draws") >= 1, "draws must be >= 1");
    need(cfg.integer("snapshots") >= 1, "snapshots must be >= 1");
    const long orders = cfg.integer("orders");
    need(orders >= 2 && orders <= 8 && orders % 2 == 0, "orders must be even in [2, 8]");
    need(cfg.real("delta") > 0, "delta must be > 0");
    need(cfg.real("omega") > 0, "omega must be > 0");
    need(cfg.real("eta") >= 0, "eta must be >= 0");
    need(cfg.real("ode_time_factor") > 0, "ode_time_factor must be > 0");
    need(cfg.integer("seed") >= 0, "seed must be >= 0");
    need(cfg.integer("compare") == 0 || cfg.integer("compare") == 1, "compare must be 0 or 1");
    need(ell >= 0, "ell must be >= 0");
    if (ell > n) bad("cutoff exceeds dimension (ell = " + std::to_string(ell) + " > N = " + std::to_string(n) + ")");
    if (cfg.str("part") != "full" && ell < 1) bad("part = " + cfg.str("part") + " needs ell >= 1");
    const long support = cfg.integer("support");
    need(support == 0 || (support >= 2 && support <= n), "support must be 0 or in [2, N]");
    if (cfg.str("profile") == "banded") {
        const double lo = cfg.real("c_min"), hi = cfg.real("c_max");
        need(lo > 0 && lo <= 1 && hi >= 1, "banded profile needs 0 < c_min <= 1 <= c_max");
    }
    if (cfg.str("profile") == "goe" && cfg.str("law") != "gaussian")
        bad("profile goe needs law = gaussian (use profile = uniform for other laws)");

    const bool covariance = cls == "covariance" || exp == "wishart";
    if (covariance && m < n)
        bad("covariance class assumes M >= N (got M = " + std::to_string(m) + ", N = " + std::to_string(n) + ")");
    if (cls == "covariance" && !exp.empty() && exp != "wishart")
        bad("class covariance is only supported by the wishart experiment");
    if (cfg.str("flow") == "ou" && cls == "hermitian") bad("flow ou supports the symmetric class only");
    if (cfg.str("time") == "rescaled" && cfg.str("flow") != "additive") bad("time = rescaled needs flow = additive");
    if (cfg.real("ode_time_factor") != 1.0 && cfg.str("flow") != "frozen") bad("ode_time_factor != 1 needs flow = frozen");

    const std::string lam = cfg.str("lambda");
    if (lam == "equispaced") {
        need(cfg.real("lambda_lo") < cfg.real("lambda_hi"), "lambda_lo must be < lambda_hi");
    } else if (lam != "sample" && lam != "classical") {
        std::vector<double> v;
        bool ok = true;
        for (const auto& p : detail::split(lam, ',')) {
            double x = 0;
            ok = ok && detail::parse_double(p, x);
            v.push_back(x);
        }
        if (!ok) bad("lambda: expected sample, classical, equispaced or a comma list of numbers");
        else if (long(v.size()) != n) bad("lambda: list has " + std::to_string(v.size()) + " values, N = " + std::to_string(n));
        else if (!std::is_sorted(v.begin(), v.end()) || std::adjacent_find(v.begin(), v.end()) != v.end())
            bad("lambda: list must be strictly increasing");
    }
    if (!cfg.str("eta0").empty()) {
        try {
            const auto c = Configuration::parse(int(n), cfg.str("eta0"));
            if (c.particles() != particles)
                bad("eta0 holds " + std::to_string(c.particles()) + " particles, n = " + std::to_string(particles));
        } catch (const Error& e) {
            bad(std::string("eta0: ") + e.what());
        }
    }
    for (long k : cfg.integers("indices"))
        if (k < 1 || k > n) bad("indices: " + std::to_string(k) + " outside [1, N]");
    if (exp == "normality" && cfg.integers("indices").size() > 4) bad("normality takes at most 4 indices");
    if (exp == "normality" && cfg.integer("draws") < 30) bad("normality needs draws >= 30");
    {
        const auto t = cfg.reals("times");
        for (std::size_t i = 0; i < t.size(); ++i)
            if (t[i] <= 0 || (i > 0 && t[i] <= t[i - 1])) {
                bad("times must be positive and strictly increasing");
                break;
            }
    }
    if (exp == "fsp" && ell < 1) bad("fsp needs ell >= 1");

    if (d.size() == unknown && n >= 2 && particles >= 1) {
        std::uint64_t count = 0;
        if (exp == "momentflow" || exp == "fsp") count = configuration_count(int(n), int(particles));
        if (exp == "vectorflow") count = configuration_total(int(n), int(particles));
        if (count > default_state_cap)
            d.push_back({ErrorKind::enumeration_cap,
                         "configuration space C(N+n-1, n) exceeds " + std::to_string(default_state_cap) +
                             " states for N = " + std::to_string(n) + ", n = " + std::to_string(particles)});
    }
    return d;
}

// ---------------------------------------------------------------------------
// Runs

struct Artifact {
    std::string name;
    std::string content;
};

struct RunOutput {
    std::vector<Artifact> artifacts;
    long guard_triggers = 0;
    std::vector<std::pair<std::string, std::string>> summary;

    void note(const std::string& k, double v) { summary.emplace_back(k, format_double(v)); }
    void note(const std::string& k, long v) { summary.emplace_back(k, std::to_string(v)); }
};

namespace detail {

inline Symmetry symmetry_of(const Config& c) {
    const auto& s = c.str("class");
    return s == "hermitian" ? Symmetry::hermitian : s == "covariance" ? Symmetry::covariance : Symmetry::symmetric;
}

inline EntryLaw law_of(const Config& c) {
    const auto& s = c.str("law");
    return s == "bernoulli" ? EntryLaw::bernoulli_symmetric : s == "uniform" ? EntryLaw::uniform_centered
                                                                             : EntryLaw::gaussian;
}

inline std::uint64_t seed_of(const Config& c, std::uint64_t stream) {
    return substream_seed(std::uint64_t(c.integer("seed")), stream);
}

// Stream layout under the master seed.
inline constexpr std::uint64_t matrix_stream = 0, flow_stream = 1, mc_stream = 2, q_stream = 3, profile_stream = 4,
                               draw_stream = 1000;

inline VarianceProfile profile_of(const Config& c) {
    const int n = int(c.integer("N"));
    if (c.str("profile") == "banded")
        return banded_profile(n, c.real("c_min"), c.real("c_max"), seed_of(c, profile_stream));
    return uniform_profile(n);
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> draw_matrix(const Config& c, std::uint64_t seed) {
    const int n = int(c.integer("N"));
    const bool goe = c.str("profile") == "goe";
    if constexpr (std::is_same_v<Scalar, double>)
        return goe ? sample_goe(n, seed) : sample_symmetric(profile_of(c), law_of(c), seed);
    else
        return goe ? sample_gue(n, seed) : sample_hermitian(profile_of(c), law_of(c), seed);
}

inline Matrix ou_targets(const Config& c) {
    const int n = int(c.integer("N"));
    if (c.str("profile") != "goe") return profile_of(c).sigma2;
    Matrix s = Matrix::Constant(n, n, 1.0 / n);
    s.diagonal().setConstant(2.0 / n);
    return s;
}

inline Vector explicit_lambda(const Config& c) {
    const int n = int(c.integer("N"));
    const auto& s = c.str("lambda");
    if (s == "classical") return classical_locations(n);
    if (s == "equispaced") {
        const double lo = c.real("lambda_lo"), hi = c.real("lambda_hi");
        Vector l(n);
        for (int k = 0; k < n; ++k) l(k) = lo + (hi - lo) * k / (n - 1);
        return l;
    }
    const auto v = c.reals("lambda");
    return Eigen::Map<const Vector>(v.data(), Eigen::Index(v.size()));
}

inline Vector q_vector(const Config& c) {
    const int n = int(c.integer("N"));
    const auto& k = c.str("q_kind");
    if (k == "e1") return Vector::Unit(n, 0);
    if (k == "uniform") return Vector::Constant(n, 1.0 / std::sqrt(double(n)));
    Normal rng(seed_of(c, q_stream));
    Vector q(n);
    for (int i = 0; i < n; ++i) q(i) = rng();
    return q.normalized();
}

inline std::vector<int> indices_of(const Config& c) {
    std::vector<int> out;
    for (long k : c.integers("indices")) out.push_back(int(k - 1));
    return out.empty() ? bulk_window(int(c.integer("N"))) : out;
}

inline double eta_of(const Config& c) {
    const double eta = c.real("eta");
    return eta > 0 ? eta : 1.0 / std::sqrt(double(c.integer("N")));
}

inline RangePart part_of(const Config& c) {
    const auto& s = c.str("part");
    return s == "short" ? RangePart::short_range : s == "long" ? RangePart::long_range : RangePart::full;
}

inline std::vector<double> output_times(const Config& c) {
    auto t = c.reals("times");
    if (!t.empty()) return t;
    const double t_end = c.real("t_end");
    const long k = c.integer("snapshots");
    if (t_end <= 0) return {};
    for (long i = 1; i <= k; ++i) t.push_back(i == k ? t_end : t_end * double(i) / double(k));
    return t;
}

template <class Scalar>
struct PathSetup {
    SpectralPath<Scalar> path;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> u0;
};

/// Initial matrix from `lambda` (sampled, or diagonal with the given spectrum),
/// then the eigenvalue path selected by `flow`.
template <class Scalar>
PathSetup<Scalar> build_path(const Config& c, double t_end) {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const int n = int(c.integer("N"));
    const bool sampled = c.str("lambda") == "sample";
    Mat h0;
    PathSetup<Scalar> out;
    if (sampled) {
        h0 = draw_matrix<Scalar>(c, seed_of(c, matrix_stream));
        out.u0 = diagonalize<Scalar>(h0).vectors;
    } else {
        h0 = explicit_lambda(c).template cast<Scalar>().asDiagonal();
        out.u0 = Mat::Identity(n, n);
    }
    const std::string flow = c.str("flow");
    if (flow == "frozen") {
        const Vector lam = sampled ? diagonalize<Scalar>(h0).values : explicit_lambda(c);
        const RealPath fp = frozen_path(lam, t_end);
        out.path.kind = fp.kind;
        out.path.times = fp.times;
        out.path.lambdas = fp.lambdas;
        out.path.min_gap = fp.min_gap;
        for (Eigen::Index k = 1; k < lam.size(); ++k)
            out.path.guard_triggers += lam(k) - lam(k - 1) < c.real("gap_guard");
        return out;
    }
    MatrixFlowSpec spec;
    spec.symmetry = std::is_same_v<Scalar, double> ? Symmetry::symmetric : Symmetry::hermitian;
    spec.n = n;
    spec.t_end = t_end;
    spec.dt = c.real("dt");
    spec.seed = seed_of(c, flow_stream);
    spec.keep_frames = false;
    spec.gap_guard = c.real("gap_guard");
    if (flow == "ou") {
        if constexpr (std::is_same_v<Scalar, double>) {
            spec.kind = FlowKind::ou;
            spec.ou_variance = ou_targets(c);
            out.path = ou_integrate(spec, h0).path;
        }
    } else {
        spec.kind = FlowKind::additive;
        out.path = dbm_integrate<Scalar>(spec, h0).path;
        if (c.str("time") == "rescaled") out.path = rescale_to_wigner(out.path);
    }
    return out;
}

inline std::string csv_table(const std::vector<std::pair<std::string, std::string>>& rows) {
    std::string s = "key,value\n";
    for (const auto& [k, v] : rows) s += k + "," + v + "\n";
    return s;
}

template <class F>
std::string write_to_string(F&& f) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    f(os);
    return os.str();
}

// --- spectrum --------------------------------------------------------------

template <class Scalar>
RunOutput run_spectrum(const Config& c) {
    RunOutput out;
    const int n = int(c.integer("N"));
    const long draws = c.integer("draws");
    const cplx z(c.real("energy"), eta_of(c));
    const Vector q = q_vector(c);
    const Vector gamma = classical_locations(n);
    std::ostringstream spec, rig, iso;
    spec << "draw,k,lambda,gamma\n";
    rig << "draw,fraction_true,max_normalized\n";
    iso << "draw,re_z,im_z,residual,bound,trace_residual,trace_bound\n";
    double worst_fraction = 1;
    long iso_ok = 0;
    for (long d = 0; d < draws; ++d) {
        const auto sp = diagonalize<Scalar>(draw_matrix<Scalar>(c, seed_of(c, draw_stream + d)));
        for (int k = 0; k < n; ++k)
            spec << d << ',' << k + 1 << ',' << format_double(sp.values(k)) << ',' << format_double(gamma(k)) << '\n';
        const auto r = rigidity_report(sp.values, c.real("omega"));
        rig << d << ',' << format_double(r.fraction_true) << ',' << format_double(r.max_normalized) << '\n';
        worst_fraction = std::min(worst_fraction, r.fraction_true);
        const auto ir = isotropic_residual(sp, q, z, c.real("xi"));
        const auto tr = trace_residual(sp.values, z, c.real("xi"));
        iso << d << ',' << format_double(z.real()) << ',' << format_double(z.imag()) << ',' << format_double(ir.residual)
            << ',' << format_double(ir.bound) << ',' << format_double(tr.residual) << ',' << format_double(tr.bound)
            << '\n';
        iso_ok += ir.residual <= ir.bound;
    }
    out.artifacts = {{"spectrum.csv", spec.str()}, {"rigidity.csv", rig.str()}, {"isotropic.csv", iso.str()}};
    out.note("draws", draws);
    out.note("min_rigidity_fraction", worst_fraction);
    out.note("isotropic_within_bound", iso_ok);
    return out;
}

// --- dbm --------------------------------------------------------------------

template <class Scalar>
RunOutput run_dbm(const Config& c) {
    RunOutput out;
    const auto ps = build_path<Scalar>(c, c.real("t_end"));
    out.artifacts.push_back({"path.csv", write_to_string([&](std::ostream& os) { ps.path.write_csv(os); })});
    out.guard_triggers = ps.path.guard_triggers;
    out.note("grid_points", long(ps.path.times.size()));
    out.note("min_gap", ps.path.min_gap);
    out.note("guard_triggers", ps.path.guard_triggers);
    out.note("alignment_swaps", ps.path.alignment_swaps);
    out.note("final_time", ps.path.t_end());
    return out;
}

// --- vectorflow -------------------------------------------------------------

template <class Scalar>
RunOutput run_vectorflow(const Config& c, int threads) {
    RunOutput out;
    const int n = int(c.integer("N")), particles = int(c.integer("n"));
    const double t_end = c.real("t_end"), gap_guard = c.real("gap_guard");
    const Symmetry cls = symmetry_of(c);
    const auto ps = build_path<Scalar>(c, t_end);
    const Vector q = q_vector(c);

    std::vector<std::shared_ptr<const ConfigSpace>> spaces;
    std::vector<Configuration> configs;
    for (int p = 1; p <= particles; ++p) {
        spaces.push_back(make_space(n, p));
        for (std::size_t r = 0; r < spaces.back()->size(); ++r) configs.push_back(spaces.back()->at(r));
    }
    MCOptions mo;
    mo.trials = c.integer("trials");
    mo.flow.micro_dt = c.real("micro_dt");
    mo.flow.gap_guard = gap_guard;
    mo.flow.symmetry = cls;
    mo.seed = seed_of(c, mc_stream);
    mo.threads = threads;
    const auto mc = estimate_f_mc(ps.path, ps.u0, q, configs, mo);

    const auto s0 = make_overlap_sample(ps.u0, q);
    const double factor = c.real("ode_time_factor");
    const RateSchedule schedule = factor == 1.0 ? path_rates(ps.path, cls, gap_guard)
                                                : frozen_rates(rates_from_lambda(ps.path.lambdas.front(), cls, gap_guard));
    EvolveOptions eo;
    eo.tol = c.real("tol");
    std::vector<double> ode;
    for (const auto& sp : spaces) {
        MomentField f0{sp, Vector(Eigen::Index(sp->size()))};
        for (std::size_t r = 0; r < sp->size(); ++r) f0.values(Eigen::Index(r)) = normalized_moment(s0, sp->at(r));
        const auto res = evolve(f0, schedule, factor * t_end, cls, eo);
        out.guard_triggers = std::max(out.guard_triggers, res.guard_triggers);
        for (Eigen::Index r = 0; r < res.f.values.size(); ++r) ode.push_back(res.f.values(r));
    }
    out.guard_triggers = std::max(out.guard_triggers, ps.path.guard_triggers);

    std::ostringstream os;
    os << "particles,configuration,mc_mean,mc_stderr,ode,abs_diff\n";
    double worst = 0, worst_z = 0;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const double diff = std::abs(mc.mean[i] - ode[i]);
        worst = std::max(worst, diff);
        if (mc.stderr_[i] > 0) worst_z = std::max(worst_z, diff / mc.stderr_[i]);
        os << configs[i].particles() << ',' << configs[i].to_string() << ',' << format_double(mc.mean[i]) << ','
           << format_double(mc.stderr_[i]) << ',' << format_double(ode[i]) << ',' << format_double(diff) << '\n';
    }
    out.artifacts.push_back({"vectorflow.csv", os.str()});
    out.note("configurations", long(configs.size()));
    out.note("trials", mo.trials);
    out.note("max_abs_diff", worst);
    out.note("max_abs_z", worst_z);
    out.note("guard_triggers", out.guard_triggers);
    return out;
}

// --- momentflow -------------------------------------------------------------

inline Configuration eta0_of(const Config& c, bool bulk) {
    const int n = int(c.integer("N")), particles = int(c.integer("n"));
    if (!c.str("eta0").empty()) return Configuration::parse(n, c.str("eta0"));
    const int site = bulk ? (n + 1) / 2 : 1;
    return Configuration::parse(n, std::to_string(site) + ":" + std::to_string(particles));
}

template <class Scalar>
RunOutput run_momentflow(const Config& c) {
    RunOutput out;
    const int n = int(c.integer("N")), particles = int(c.integer("n"));
    const double t_end = c.real("t_end"), gap_guard = c.real("gap_guard");
    const Symmetry cls = symmetry_of(c);
    auto times = output_times(c);
    const double horizon = times.empty() ? 0.0 : times.back();
    const auto ps = build_path<Scalar>(c, std::max(t_end, horizon));
    const auto sp = make_space(n, particles);

    MomentField f0 = MomentField::constant(sp, 0.0);
    if (c.str("f0") == "delta") {
        f0 = MomentField::delta(sp, eta0_of(c, false));
    } else {
        const auto s0 = make_overlap_sample(ps.u0, q_vector(c));
        for (std::size_t r = 0; r < sp->size(); ++r) f0.values(Eigen::Index(r)) = normalized_moment(s0, sp->at(r));
    }
    EvolveOptions eo;
    eo.tol = c.real("tol");
    eo.part = part_of(c);
    eo.ell = int(c.integer("ell"));
    eo.snapshot_times = times;
    const auto schedule = path_rates(ps.path, cls, gap_guard);
    const auto res = evolve(f0, schedule, horizon, cls, eo);

    std::vector<double> all_times{0.0};
    std::vector<Vector> fields{f0.values};
    for (std::size_t i = 0; i < times.size(); ++i) {
        all_times.push_back(times[i]);
        fields.push_back(res.snapshots[i]);
    }
    std::ostringstream os;
    os << "time,config_index,configuration,value\n";
    for (std::size_t i = 0; i < all_times.size(); ++i)
        for (std::size_t r = 0; r < sp->size(); ++r)
            os << format_double(all_times[i]) << ',' << r << ',' << sp->at(r).to_string() << ','
               << format_double(fields[i](Eigen::Index(r))) << '\n';
    out.artifacts.push_back({"momentflow.csv", os.str()});
    if (particles == 1) {
        const auto mp = max_principle_diagnostics(all_times, fields, ps.path, eta_of(c));
        out.artifacts.push_back({"max_principle.csv", write_to_string([&](std::ostream& o) { mp.write_csv(o); })});
        out.note("max_principle_violations", mp.violations);
    }
    const auto restricted = [&](double t) { return restrict_rates(schedule(t), eo.part, eo.ell); };
    out.guard_triggers = std::max(res.guard_triggers, ps.path.guard_triggers);
    out.note("states", long(sp->size()));
    out.note("accepted_steps", res.accepted);
    out.note("rejected_steps", res.rejected);
    out.note("monitor_rejections", res.monitor_rejections);
    out.note("invariant_drift", res.invariant_drift);
    out.note("min_gap", std::min(res.min_gap, ps.path.min_gap));
    out.note("dirichlet_start", dirichlet_form(f0, restricted(0.0), cls));
    out.note("dirichlet_end", dirichlet_form(res.f, restricted(horizon), cls));
    out.note("guard_triggers", out.guard_triggers);
    return out;
}

// --- fsp --------------------------------------------------------------------

template <class Scalar>
RunOutput run_fsp(const Config& c) {
    RunOutput out;
    const double t = c.real("t_end"), gap_guard = c.real("gap_guard");
    const int ell = int(c.integer("ell"));
    const Symmetry cls = symmetry_of(c);
    const auto ps = build_path<Scalar>(c, t);
    const auto eta0 = eta0_of(c, true);
    const auto schedule = path_rates(ps.path, cls, gap_guard);
    EvolveOptions eo;
    eo.tol = c.real("tol");
    const auto prof = propagation_profile(eta0, schedule, t, ell, cls, c.real("epsilon"), eo);
    out.artifacts.push_back({"fsp.csv", write_to_string([&](std::ostream& os) { prof.write_csv(os); })});
    out.guard_triggers = std::max(prof.stats.guard_triggers, ps.path.guard_triggers);
    out.summary.emplace_back("start", eta0.to_string());
    out.note("total_mass", prof.total);
    out.note("bulk_threshold", prof.bulk_threshold);
    out.note("edge_threshold", prof.edge_threshold);
    out.note("mass_beyond_bulk", prof.beyond_bulk);
    out.note("mass_beyond_edge", prof.beyond_edge);
    out.note("accepted_steps", prof.stats.accepted);
    if (c.integer("compare") == 1) {
        const auto sp = make_space(eta0.sites(), eta0.particles());
        const auto f0 = MomentField::delta(sp, eta0);
        const auto full = evolve(f0, schedule, t, cls, eo);
        out.note("l1_full_minus_short", (full.f.values - prof.stats.f.values).template lpNorm<1>());
    }
    out.note("guard_triggers", out.guard_triggers);
    return out;
}

// --- que --------------------------------------------------------------------

template <class Scalar>
RunOutput run_que(const Config& c) {
    RunOutput out;
    const int n = int(c.integer("N"));
    const long draws = c.integer("draws");
    const int support = c.integer("support") == 0 ? n : int(c.integer("support"));
    const auto in = balanced_que_input(n, support);
    const auto idx = indices_of(c);
    std::vector<double> stats;
    std::ostringstream os;
    os << "draw,k,statistic\n";
    for (long d = 0; d < draws; ++d) {
        const auto sp = diagonalize<Scalar>(draw_matrix<Scalar>(c, seed_of(c, draw_stream + d)));
        for (int k : idx) {
            const double s = que_statistic(sp.vectors.col(k), in);
            stats.push_back(s);
            os << d << ',' << k + 1 << ',' << format_double(s) << '\n';
        }
    }
    double m2 = 0;
    for (double s : stats) m2 += s * s;
    m2 /= double(stats.size());
    const double target = (std::is_same_v<Scalar, double> ? 2.0 : 1.0) / support;
    out.artifacts.push_back({"que.csv", os.str()});
    out.note("support", long(support));
    out.note("samples", long(stats.size()));
    out.note("second_moment", m2);
    out.note("second_moment_target", target);
    out.note("delta", c.real("delta"));
    out.note("tail_probability", tail_probability(stats, c.real("delta")));
    return out;
}

// --- normality --------------------------------------------------------------

template <class Scalar>
RunOutput run_normality(const Config& c) {
    RunOutput out;
    const int n = int(c.integer("N"));
    const long draws = c.integer("draws");
    const double t = c.real("t_end");
    const Vector q = q_vector(c);
    std::vector<OverlapSample> samples;
    for (long d = 0; d < draws; ++d) {
        const auto h0 = draw_matrix<Scalar>(c, seed_of(c, draw_stream + d));
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> frame;
        if (t > 0) {
            MatrixFlowSpec spec;
            spec.symmetry = std::is_same_v<Scalar, double> ? Symmetry::symmetric : Symmetry::hermitian;
            spec.n = n;
            spec.t_end = t;
            spec.dt = t; // Gaussian increments are exact in one step
            spec.seed = substream_seed(seed_of(c, flow_stream), std::uint64_t(d));
            spec.keep_frames = false;
            spec.gap_guard = c.real("gap_guard");
            frame = diagonalize<Scalar>(dbm_integrate<Scalar>(spec, h0).terminal).vectors;
        } else {
            frame = diagonalize<Scalar>(h0).vectors;
        }
        auto s = make_overlap_sample(frame, q);
        s.seed = std::uint64_t(d);
        s.t = t;
        samples.push_back(std::move(s));
    }
    const int orders = int(c.integer("orders"));
    if (!c.str("indices").empty()) {
        const auto rep = normality_report(samples, indices_of(c), orders);
        out.artifacts.push_back({"normality.csv", write_to_string([&](std::ostream& os) { rep.write_csv(os); })});
    }
    const auto window = bulk_window(n);
    const auto rows = pooled_marginal_moments(samples, window, orders);
    std::ostringstream os;
    os << "moment_order,empirical,target,stderr,z_score\n";
    for (const auto& r : rows)
        os << 2 * r.orders[0] << ',' << format_double(r.empirical) << ',' << format_double(r.target) << ','
           << format_double(r.stderr_) << ',' << format_double(r.z_score) << '\n';
    out.artifacts.push_back({"pooled.csv", os.str()});
    out.note("draws", draws);
    out.note("window_first", long(window.front() + 1));
    out.note("window_last", long(window.back() + 1));
    for (const auto& r : rows) out.note("moment_" + std::to_string(2 * r.orders[0]), r.empirical);
    return out;
}

// --- wishart ----------------------------------------------------------------

inline RunOutput run_wishart(const Config& c) {
    RunOutput out;
    MatrixFlowSpec spec;
    spec.symmetry = Symmetry::covariance;
    spec.n = int(c.integer("N"));
    spec.m = int(c.integer("M"));
    spec.kind = FlowKind::wishart;
    spec.t_end = c.real("t_end");
    spec.dt = c.real("dt");
    spec.seed = seed_of(c, flow_stream);
    spec.keep_frames = false;
    spec.gap_guard = c.real("gap_guard");
    const auto res = wishart_integrate(spec, sample_wishart_factor(spec.m, spec.n, seed_of(c, matrix_stream)));
    double lowest = std::numeric_limits<double>::infinity();
    for (const auto& l : res.path.lambdas) lowest = std::min(lowest, l.minCoeff());
    out.artifacts.push_back({"path.csv", write_to_string([&](std::ostream& os) { res.path.write_csv(os); })});

    std::ostringstream os;
    os << "sites,particles,detailed_balance,adjointness\n";
    double worst = 0;
    const Vector& terminal = res.path.lambdas.back();
    for (int sites = 2; sites <= std::min(6, spec.n); ++sites)
        for (int p = 1; p <= 3; ++p) {
            const auto r = rates_from_lambda(terminal.head(sites), Symmetry::covariance, spec.gap_guard);
            const auto b = detailed_balance_residual(r, p, Symmetry::covariance, seed_of(c, q_stream));
            worst = std::max(worst, b.detailed_balance);
            os << sites << ',' << p << ',' << format_double(b.detailed_balance) << ',' << format_double(b.adjointness)
               << '\n';
        }
    out.artifacts.push_back({"balance.csv", os.str()});
    out.guard_triggers = res.path.guard_triggers;
    out.note("min_eigenvalue", lowest);
    out.note("max_detailed_balance", worst);
    out.note("guard_triggers", res.path.guard_triggers);
    return out;
}

} // namespace detail

/// Runs the config's experiment. Validation problems throw ErrorKind::validation
/// (or enumeration_cap) before any computation.
inline RunOutput run(const Config& cfg, int threads = 0) {
    const auto diags = validate(cfg);
    for (const auto& d : diags)
        if (d.kind == ErrorKind::validation) throw Error(ErrorKind::validation, d.message);
    for (const auto& d : diags) throw Error(d.kind, d.message);
    const std::string exp = cfg.str("experiment");
    require(!exp.empty(), ErrorKind::validation, "experiment not set");
    const bool herm = cfg.str("class") == "hermitian";
    RunOutput out;
    if (exp == "spectrum") out = herm ? detail::run_spectrum<cplx>(cfg) : detail::run_spectrum<double>(cfg);
    else if (exp == "dbm") out = herm ? detail::run_dbm<cplx>(cfg) : detail::run_dbm<double>(cfg);
    else if (exp == "vectorflow")
        out = herm ? detail::run_vectorflow<cplx>(cfg, threads) : detail::run_vectorflow<double>(cfg, threads);
    else if (exp == "momentflow") out = herm ? detail::run_momentflow<cplx>(cfg) : detail::run_momentflow<double>(cfg);
    else if (exp == "fsp") out = herm ? detail::run_fsp<cplx>(cfg) : detail::run_fsp<double>(cfg);
    else if (exp == "que") out = herm ? detail::run_que<cplx>(cfg) : detail::run_que<double>(cfg);
    else if (exp == "normality") out = herm ? detail::run_normality<cplx>(cfg) : detail::run_normality<double>(cfg);
    else out = detail::run_wishart(cfg);
    out.artifacts.push_back({"summary.csv", detail::csv_table(out.summary)});
    return out;
}

} // namespace emflow::experiment
