#pragma once

// Variance profiles and random matrix samplers (generalized Wigner, GOE/GUE,
// Wishart factors) plus dense matrix serialization.

#include "emflow/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace emflow {

/// Entry variances σ²_ij of a generalized Wigner ensemble.
struct VarianceProfile {
    Matrix sigma2;
    /// Comparability constant C: C⁻¹/N ≤ σ²_ij ≤ C/N.
    double bound_constant = 1.0;

    int dim() const { return static_cast<int>(sigma2.rows()); }

    /// Empty string when all invariants hold, otherwise the first violation.
    std::string violation(double tol = 1e-12) const {
        const int n = dim();
        if (n < 2 || sigma2.cols() != n) return "profile must be square with N >= 2";
        for (int j = 0; j < n; ++j) {
            if (std::abs(sigma2.col(j).sum() - 1.0) > tol)
                return "column " + std::to_string(j + 1) + " does not sum to 1";
            for (int i = 0; i < n; ++i) {
                if (sigma2(i, j) != sigma2(j, i)) return "profile not symmetric";
                const double scaled = sigma2(i, j) * n;
                if (scaled < 1.0 / bound_constant * (1 - 1e-12) ||
                    scaled > bound_constant * (1 + 1e-12))
                    return "entry outside [C^-1/N, C/N]";
            }
        }
        return {};
    }
};

enum class EntryLaw { gaussian, bernoulli_symmetric, uniform_centered };

inline std::string_view to_string(EntryLaw law) {
    switch (law) {
    case EntryLaw::gaussian: return "gaussian";
    case EntryLaw::bernoulli_symmetric: return "bernoulli";
    case EntryLaw::uniform_centered: return "uniform";
    }
    return "?";
}

/// Mean 0, variance 1 draw from `law`.
inline double draw_standardized(EntryLaw law, Normal& rng) {
    switch (law) {
    case EntryLaw::gaussian: return rng();
    case EntryLaw::bernoulli_symmetric: return rng.uniform01() < 0.5 ? -1.0 : 1.0;
    case EntryLaw::uniform_centered: return std::sqrt(3.0) * (2.0 * rng.uniform01() - 1.0);
    }
    return 0.0;
}

inline VarianceProfile uniform_profile(int n) {
    require(n >= 2, ErrorKind::invalid_dimension, "uniform_profile: N must be >= 2");
    return {Matrix::Constant(n, n, 1.0 / n), 1.0};
}

/// Random symmetric profile with entries in [c_min/N, c_max/N] and unit
/// column sums. Symmetric Sinkhorn scaling yields a doubly stochastic matrix;
/// it is then blended with the uniform profile just enough to restore the
/// entry bounds (the blend keeps symmetry and column sums).
inline VarianceProfile banded_profile(int n, double c_min, double c_max, std::uint64_t seed) {
    require(n >= 2, ErrorKind::invalid_dimension, "banded_profile: N must be >= 2");
    require(c_min > 0 && c_min <= c_max, ErrorKind::contract,
            "banded_profile: need 0 < c_min <= c_max");
    require(c_min <= 1.0 && c_max >= 1.0, ErrorKind::infeasible_profile,
            "banded_profile: column sums are confined to [c_min, c_max], which excludes 1");
    const double bound = std::max(c_max, 1.0 / c_min);
    if (c_min == c_max) return {Matrix::Constant(n, n, 1.0 / n), bound};

    Normal rng(seed);
    Matrix r(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const double v = (c_min + (c_max - c_min) * rng.uniform01()) / n;
            r(i, j) = v;
            r(j, i) = v;
        }

    // Symmetric Sinkhorn: find d > 0 with diag(d) r diag(d) doubly stochastic.
    Vector d = Vector::Ones(n);
    constexpr int max_iter = 10000;
    bool converged = false;
    for (int it = 0; it < max_iter; ++it) {
        const Vector rd = r * d;
        const Vector sums = d.cwiseProduct(rd);
        if ((sums.array() - 1.0).abs().maxCoeff() < 1e-14) {
            converged = true;
            break;
        }
        d = (d.array() / rd.array()).sqrt();
    }
    require(converged, ErrorKind::numeric, "banded_profile: Sinkhorn scaling did not converge");
    const Matrix s = d.asDiagonal() * r * d.asDiagonal();

    // Largest θ keeping θ s + (1-θ)/N inside the bounds.
    const double lo = c_min / n, hi = c_max / n, u = 1.0 / n;
    double theta = 1.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double v = s(i, j);
            if (v > hi) theta = std::min(theta, (hi - u) / (v - u));
            if (v < lo) theta = std::min(theta, (u - lo) / (u - v));
        }
    Matrix out = theta * s + Matrix::Constant(n, n, (1.0 - theta) * u);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) out(i, j) = out(j, i) = 0.5 * (out(i, j) + out(j, i));
    VarianceProfile p{out, bound};
    const std::string bad = p.violation();
    require(bad.empty(), ErrorKind::numeric, "banded_profile: " + bad);
    return p;
}

/// Real symmetric generalized Wigner matrix, h_ij = σ_ij · x_ij.
inline Matrix sample_symmetric(const VarianceProfile& profile, EntryLaw law, std::uint64_t seed) {
    const int n = profile.dim();
    Normal rng(seed);
    Matrix h(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const double v = std::sqrt(profile.sigma2(i, j)) * draw_standardized(law, rng);
            h(i, j) = v;
            h(j, i) = v;
        }
    return h;
}

/// Hermitian generalized Wigner matrix. Off-diagonal real and imaginary
/// parts are i.i.d. with variance σ²/2 each; the diagonal is real.
inline CMatrix sample_hermitian(const VarianceProfile& profile, EntryLaw law, std::uint64_t seed) {
    const int n = profile.dim();
    Normal rng(seed);
    CMatrix h(n, n);
    for (int i = 0; i < n; ++i) {
        h(i, i) = std::sqrt(profile.sigma2(i, i)) * draw_standardized(law, rng);
        for (int j = i + 1; j < n; ++j) {
            const double s = std::sqrt(profile.sigma2(i, j) / 2.0);
            const double re = s * draw_standardized(law, rng);
            const double im = s * draw_standardized(law, rng);
            h(i, j) = cplx(re, im);
            h(j, i) = cplx(re, -im);
        }
    }
    return h;
}

/// GOE: off-diagonal variance 1/N, diagonal 2/N.
inline Matrix sample_goe(int n, std::uint64_t seed) {
    require(n >= 2, ErrorKind::invalid_dimension, "sample_goe: N must be >= 2");
    Normal rng(seed);
    const double off = 1.0 / std::sqrt(double(n));
    const double diag = std::sqrt(2.0 / n);
    Matrix h(n, n);
    for (int i = 0; i < n; ++i) {
        h(i, i) = diag * rng();
        for (int j = i + 1; j < n; ++j) {
            const double v = off * rng();
            h(i, j) = v;
            h(j, i) = v;
        }
    }
    return h;
}

/// GUE: E|h_ij|² = 1/N with independent real/imaginary parts, diagonal variance 1/N.
inline CMatrix sample_gue(int n, std::uint64_t seed) {
    require(n >= 2, ErrorKind::invalid_dimension, "sample_gue: N must be >= 2");
    Normal rng(seed);
    const double part = 1.0 / std::sqrt(2.0 * n);
    const double diag = 1.0 / std::sqrt(double(n));
    CMatrix h(n, n);
    for (int i = 0; i < n; ++i) {
        h(i, i) = diag * rng();
        for (int j = i + 1; j < n; ++j) {
            const double re = part * rng();
            const double im = part * rng();
            h(i, j) = cplx(re, im);
            h(j, i) = cplx(re, -im);
        }
    }
    return h;
}

/// M×N factor with i.i.d. N(0, 1/N) entries; X = FᵀF is N×N.
inline Matrix sample_wishart_factor(int m, int n, std::uint64_t seed) {
    require(n >= 1, ErrorKind::invalid_dimension, "sample_wishart_factor: N must be >= 1");
    require(m >= n, ErrorKind::unsupported_aspect, "sample_wishart_factor: requires M >= N");
    Normal rng(seed);
    const double s = 1.0 / std::sqrt(double(n));
    Matrix f(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) f(i, j) = s * rng();
    return f;
}

// ---------------------------------------------------------------------------
// Serialization. Binary container layout (little-endian):
//   "EMFMAT01" | u64 rows | u64 cols | u8 complex | row-major f64 payload
// (complex payload interleaves re, im).

namespace detail {
inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}
inline void put_f64(std::ostream& os, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    put_u64(os, bits);
}
inline double get_f64(std::istream& is) {
    const std::uint64_t bits = get_u64(is);
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
}
inline constexpr char matrix_magic[8] = {'E', 'M', 'F', 'M', 'A', 'T', '0', '1'};
} // namespace detail

inline void write_binary(std::ostream& os, const Matrix& m) {
    os.write(detail::matrix_magic, 8);
    detail::put_u64(os, m.rows());
    detail::put_u64(os, m.cols());
    os.put(0);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put_f64(os, m(i, j));
}

inline void write_binary(std::ostream& os, const CMatrix& m) {
    os.write(detail::matrix_magic, 8);
    detail::put_u64(os, m.rows());
    detail::put_u64(os, m.cols());
    os.put(1);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            detail::put_f64(os, m(i, j).real());
            detail::put_f64(os, m(i, j).imag());
        }
}

/// Reads either flavor; real matrices come back with zero imaginary part.
inline CMatrix read_binary(std::istream& is, bool* is_complex = nullptr) {
    char magic[8];
    is.read(magic, 8);
    require(is && std::equal(magic, magic + 8, detail::matrix_magic), ErrorKind::contract,
            "read_binary: bad magic");
    const auto rows = static_cast<Eigen::Index>(detail::get_u64(is));
    const auto cols = static_cast<Eigen::Index>(detail::get_u64(is));
    require(static_cast<bool>(is) && rows >= 0 && cols >= 0 && rows <= (1 << 20) && cols <= (1 << 20),
            ErrorKind::contract, "read_binary: implausible dimensions");
    const bool cx = is.get() == 1;
    if (is_complex) *is_complex = cx;
    CMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
            const double re = detail::get_f64(is);
            const double im = cx ? detail::get_f64(is) : 0.0;
            m(i, j) = cplx(re, im);
        }
    require(static_cast<bool>(is), ErrorKind::contract, "read_binary: truncated payload");
    return m;
}

inline void write_csv(std::ostream& os, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            os << format_double(m(i, j));
        }
        os << '\n';
    }
}

inline Matrix read_csv(std::istream& is) {
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        ss.imbue(std::locale::classic());
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        require(rows.empty() || row.size() == rows.front().size(), ErrorKind::contract,
                "read_csv: ragged rows");
        rows.push_back(std::move(row));
    }
    Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

} // namespace emflow
