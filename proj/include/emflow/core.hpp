#pragma once

#include <Eigen/Dense>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <complex>
#include <cstdint>
#include <iomanip>
#include <locale>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace emflow {

using Matrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXd;
using CVector = Eigen::VectorXcd;
using cplx = std::complex<double>;

/// Symmetry class of a matrix model. `covariance` is the real Wishart
/// process X = MᵀM; its moment flow uses the symmetric generator form.
enum class Symmetry { symmetric, hermitian, covariance };

inline std::string_view to_string(Symmetry s) {
    switch (s) {
    case Symmetry::symmetric: return "symmetric";
    case Symmetry::hermitian: return "hermitian";
    case Symmetry::covariance: return "covariance";
    }
    return "?";
}

enum class ErrorKind {
    contract,
    invalid_dimension,
    infeasible_profile,
    unsupported_aspect,
    domain,
    numeric,
    stability,
    gap,
    stiffness,
    enumeration_cap,
    statistics,
    validation,
};

/// Single exception type for the library; `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::numeric:
    case ErrorKind::stability:
    case ErrorKind::gap:
    case ErrorKind::stiffness:
        return 3;
    case ErrorKind::enumeration_cap:
        return 4;
    default:
        return 2;
    }
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) throw Error(kind, msg);
}

// ---------------------------------------------------------------------------
// Random streams. Every sampler takes a 64-bit seed; parallel trials derive
// independent substreams with `substream_seed`, so results never depend on
// how work is split across threads.

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline Engine make_engine(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      0x5eedu};
    return Engine(seq);
}

/// Standard normal draws (ziggurat; platform-independent given the engine).
class Normal {
public:
    explicit Normal(std::uint64_t seed) : engine_(make_engine(seed)) {}
    double operator()() { return dist_(engine_); }
    double uniform01() { return unif_(engine_); }
    Engine& engine() { return engine_; }

private:
    Engine engine_;
    boost::random::normal_distribution<double> dist_{0.0, 1.0};
    boost::random::uniform_01<double> unif_;
};

/// 17 significant digits, '.' decimal, classic locale: doubles round-trip exactly.
inline std::string format_double(double x) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(17) << x;
    return os.str();
}

/// Eigenvalue gap floor shared by rates and the eigenvector SDE.
inline constexpr double default_gap_guard = 1e-6;

} // namespace emflow
