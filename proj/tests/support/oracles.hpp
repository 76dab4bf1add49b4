#pragma once

// Independent reference implementations used only by tests. Nothing here
// shares code paths with the library beyond plain data types.

#include "emflow/configuration.hpp"
#include "emflow/core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

namespace oracle {

using emflow::Matrix;
using emflow::Vector;

/// All occupation vectors with n particles on N sites, by recursion.
inline void occupations(int sites, int n, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
    if (int(cur.size()) == sites - 1) {
        cur.push_back(n);
        out.push_back(cur);
        cur.pop_back();
        return;
    }
    for (int k = 0; k <= n; ++k) {
        cur.push_back(k);
        occupations(sites, n - k, cur, out);
        cur.pop_back();
    }
}

inline std::vector<std::vector<int>> all_occupations(int sites, int n) {
    std::vector<int> cur;
    std::vector<std::vector<int>> out;
    occupations(sites, n, cur, out);
    return out;
}

/// φ(k) = C(2k,k)/4^k.
inline double phi_closed(int k) {
    double c = 1;
    for (int i = 1; i <= k; ++i) c = c * (k + i) / i;
    return c / std::pow(4.0, k);
}

struct DenseModel {
    std::vector<std::vector<int>> occ; // oracle order
    std::vector<std::size_t> to_space; // oracle index -> ConfigSpace index
    Matrix generator;                  // in ConfigSpace order
    Vector pi;                         // in ConfigSpace order
};

/// Dense generator assembled entry by entry from the jump description.
inline DenseModel dense_generator(const Matrix& c, int n, bool hermitian) {
    const int sites = int(c.rows());
    DenseModel m;
    m.occ = all_occupations(sites, n);
    const emflow::ConfigSpace sp(sites, n);
    std::map<std::vector<int>, std::size_t> index;
    for (const auto& o : m.occ) {
        std::vector<int> pos;
        for (int s = 0; s < sites; ++s)
            for (int k = 0; k < o[s]; ++k) pos.push_back(s);
        const std::size_t idx = sp.index_of(emflow::Configuration::from_positions(sites, pos));
        index[o] = idx;
        m.to_space.push_back(idx);
    }
    const auto size = Eigen::Index(m.occ.size());
    m.generator = Matrix::Zero(size, size);
    m.pi = Vector::Zero(size);
    for (const auto& o : m.occ) {
        const auto row = Eigen::Index(index[o]);
        double p = 1;
        for (int k : o) p *= hermitian ? 1.0 : phi_closed(k);
        m.pi(row) = p;
        for (int i = 0; i < sites; ++i) {
            if (!o[i]) continue;
            for (int j = 0; j < sites; ++j) {
                if (j == i) continue;
                const double w = hermitian ? o[i] * (1.0 + o[j]) : 2.0 * o[i] * (1.0 + 2.0 * o[j]);
                auto t = o;
                --t[i];
                ++t[j];
                const auto col = Eigen::Index(index[t]);
                m.generator(row, col) += c(i, j) * w;
                m.generator(row, row) -= c(i, j) * w;
            }
        }
    }
    return m;
}

/// min over permutations of Σ|x_α − y_σ(α)|.
inline long brute_distance(std::vector<int> x, std::vector<int> y) {
    std::sort(y.begin(), y.end());
    long best = -1;
    do {
        long d = 0;
        for (std::size_t a = 0; a < x.size(); ++a) d += std::abs(x[a] - y[a]);
        if (best < 0 || d < best) best = d;
    } while (std::next_permutation(y.begin(), y.end()));
    return best;
}

/// Haar unit vector in ℝ^N: u_1² ~ Beta(1/2, (N−1)/2), so
/// E[(N u_1²)^j] = N^j Π_{i<j} (1/2+i)/(N/2+i).
inline double haar_real_moment(int n, int j) {
    double m = 1;
    for (int i = 0; i < j; ++i) m *= n * (0.5 + i) / (0.5 * n + i);
    return m;
}

/// Complex Haar: |u_1|² ~ Beta(1, N−1), E[(N|u_1|²)^j] = N^j j!/(N(N+1)…(N+j−1)).
inline double haar_complex_moment(int n, int j) {
    double m = 1;
    for (int i = 0; i < j; ++i) m *= double(n) * (1 + i) / (n + i);
    return m;
}

/// E[((N/|a|)Σ a(α) u(α)²)²] for a real Haar vector with Σa = 0, a ∈ {0,±1}:
/// E u_α⁴ = 3/(N(N+2)), E u_α²u_β² = 1/(N(N+2)) ⇒ 2N/((N+2)|a|).
inline double haar_que_second_moment(int n, int support) { return 2.0 * n / ((n + 2.0) * support); }

/// Symmetric nonnegative rates with zero diagonal.
inline Matrix random_rates(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 2.0);
    Matrix c = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) c(i, j) = c(j, i) = u(rng);
    return c;
}

inline Vector random_field(Eigen::Index size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vector f(size);
    for (Eigen::Index i = 0; i < size; ++i) f(i) = u(rng);
    return f;
}

/// Matrix exponential of a (small, dense) generator by scaling and squaring
/// with a Taylor core.
inline Matrix expm(const Matrix& a) {
    const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
    int s = std::max(0, int(std::ceil(std::log2(std::max(norm, 1e-300)))) + 4);
    const Matrix b = a / std::pow(2.0, s);
    Matrix term = Matrix::Identity(a.rows(), a.cols()), sum = term;
    for (int k = 1; k < 30; ++k) {
        term = term * b / double(k);
        sum += term;
    }
    for (int i = 0; i < s; ++i) sum = sum * sum;
    return sum;
}

} // namespace oracle
