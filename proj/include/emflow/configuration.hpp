#pragma once

// Particle configurations η: sites → ℕ and the enumerated configuration
// space of all n-particle configurations on N sites.
//
// Sites are 0-based in the C++ API and 1-based in every text format.

#include "emflow/core.hpp"

#include <algorithm>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace emflow {

class Configuration {
public:
    Configuration() = default;
    explicit Configuration(int sites) : occ_(sites, 0) {}

    /// From sorted or unsorted 0-based particle positions (repeats allowed).
    static Configuration from_positions(int sites, const std::vector<int>& positions) {
        Configuration c(sites);
        for (int x : positions) {
            require(x >= 0 && x < sites, ErrorKind::contract, "configuration: site out of range");
            ++c.occ_[x];
        }
        return c;
    }

    /// Parses "3:2|7:1" (1-based site:count pairs).
    static Configuration parse(int sites, const std::string& text) {
        Configuration c(sites);
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, '|')) {
            const auto colon = item.find(':');
            require(colon != std::string::npos, ErrorKind::contract, "configuration: bad token '" + item + "'");
            const int site = std::stoi(item.substr(0, colon)) - 1;
            const int count = std::stoi(item.substr(colon + 1));
            require(site >= 0 && site < sites && count >= 0, ErrorKind::contract,
                    "configuration: bad token '" + item + "'");
            c.occ_[site] += count;
        }
        return c;
    }

    int sites() const { return static_cast<int>(occ_.size()); }
    int particles() const {
        int n = 0;
        for (int k : occ_) n += k;
        return n;
    }
    int operator[](int site) const { return occ_.at(site); }
    const std::vector<int>& occupations() const { return occ_; }

    /// x_1 ≤ … ≤ x_n.
    std::vector<int> positions() const {
        std::vector<int> p;
        for (int s = 0; s < sites(); ++s)
            for (int k = 0; k < occ_[s]; ++k) p.push_back(s);
        return p;
    }

    std::string to_string() const {
        std::string out;
        for (int s = 0; s < sites(); ++s) {
            if (!occ_[s]) continue;
            if (!out.empty()) out += '|';
            out += std::to_string(s + 1) + ':' + std::to_string(occ_[s]);
        }
        return out;
    }

    /// η ⊂ ⟦lo, hi⟧ (0-based inclusive bounds).
    bool supported_in(int lo, int hi) const {
        for (int s = 0; s < sites(); ++s)
            if (occ_[s] && (s < lo || s > hi)) return false;
        return true;
    }

    bool operator==(const Configuration&) const = default;

private:
    std::vector<int> occ_;
};

/// η^{i,j}: one particle moved from i to j; unchanged when site i is empty.
inline Configuration move(const Configuration& eta, int i, int j) {
    require(i != j, ErrorKind::contract, "move: source and target coincide");
    require(i >= 0 && i < eta.sites() && j >= 0 && j < eta.sites(), ErrorKind::contract,
            "move: site out of range");
    if (eta[i] == 0) return eta;
    auto occ = eta.occupations();
    --occ[i];
    ++occ[j];
    std::vector<int> pos;
    for (int s = 0; s < eta.sites(); ++s)
        for (int k = 0; k < occ[s]; ++k) pos.push_back(s);
    return Configuration::from_positions(eta.sites(), pos);
}

/// d(η, ξ) = Σ_α |x_α − y_α| over sorted positions.
inline long config_distance(const Configuration& a, const Configuration& b) {
    require(a.particles() == b.particles(), ErrorKind::contract, "config_distance: particle counts differ");
    const auto x = a.positions();
    const auto y = b.positions();
    long d = 0;
    for (std::size_t k = 0; k < x.size(); ++k) d += std::abs(x[k] - y[k]);
    return d;
}

inline constexpr std::uint64_t default_state_cap = 1'000'000;

/// C(N+n−1, n) computed with an overflow guard; returns cap+1 when larger than cap.
inline std::uint64_t configuration_count(int sites, int particles, std::uint64_t cap = default_state_cap) {
    std::uint64_t c = 1;
    for (int k = 1; k <= particles; ++k) {
        // c = C(sites-1+k, k) = c * (sites-1+k) / k, exact at every step.
        const std::uint64_t num = static_cast<std::uint64_t>(sites - 1 + k);
        if (c > (cap + 1) * 4 / num + 1 && c > cap) return cap + 1;
        c = c * num / k;
        if (c > cap * 64) return cap + 1;
    }
    return c;
}

/// All n-particle configurations on N sites in colexicographic order of the
/// sorted positions. Rank of x_1 ≤ … ≤ x_n is Σ_α C(x_α + α, α + 1) (α 0-based),
/// the combinatorial number system applied to the strictly increasing x_α + α.
class ConfigSpace {
public:
    ConfigSpace(int sites, int particles, std::uint64_t cap = default_state_cap)
        : sites_(sites), particles_(particles) {
        require(sites >= 1, ErrorKind::invalid_dimension, "config space: need at least one site");
        require(particles >= 0, ErrorKind::contract, "config space: negative particle count");
        const std::uint64_t count = configuration_count(sites, particles, cap);
        require(count <= cap, ErrorKind::enumeration_cap,
                "config space: C(N+n-1, n) for N=" + std::to_string(sites) + ", n=" +
                    std::to_string(particles) + " exceeds the enumeration cap of " + std::to_string(cap));
        size_ = static_cast<std::size_t>(count);

        const int top = sites + particles;
        binom_.assign((top + 1) * (particles + 2), 0);
        for (int m = 0; m <= top; ++m) {
            binom(m, 0) = 1;
            for (int k = 1; k <= particles + 1 && k <= m; ++k)
                binom(m, k) = binom(m - 1, k - 1) + (k <= m - 1 ? binom(m - 1, k) : 0);
        }

        positions_.resize(size_ * particles_);
        std::vector<int> x(particles_, 0);
        for (std::size_t r = 0; r < size_; ++r) {
            std::copy(x.begin(), x.end(), positions_.begin() + r * particles_);
            // Colex successor of a multiset: bump the lowest index that may grow.
            for (int a = 0; a < particles_; ++a) {
                const int limit = a + 1 < particles_ ? x[a + 1] : sites_ - 1;
                if (x[a] < limit) {
                    ++x[a];
                    for (int b = 0; b < a; ++b) x[b] = 0;
                    break;
                }
            }
        }
    }

    int sites() const { return sites_; }
    int particles() const { return particles_; }
    std::size_t size() const { return size_; }

    /// Sorted 0-based positions of configuration `index`.
    const int* positions(std::size_t index) const { return positions_.data() + index * particles_; }

    std::size_t rank_sorted(const int* x) const {
        std::uint64_t r = 0;
        for (int a = 0; a < particles_; ++a) r += binom_at(x[a] + a, a + 1);
        return static_cast<std::size_t>(r);
    }

    std::size_t index_of(const Configuration& c) const {
        require(c.sites() == sites_ && c.particles() == particles_, ErrorKind::contract,
                "config space: configuration does not belong to this space");
        const auto x = c.positions();
        return rank_sorted(x.data());
    }

    Configuration at(std::size_t index) const {
        const int* x = positions(index);
        return Configuration::from_positions(sites_, std::vector<int>(x, x + particles_));
    }

    /// Rank of the configuration reached by moving one particle from site i
    /// (which must be occupied) to site j.
    std::size_t rank_after_move(const int* x, int i, int j, int* scratch) const {
        // Remove one copy of i, insert j, keep sorted.
        int w = 0;
        bool removed = false, inserted = false;
        for (int a = 0; a < particles_; ++a) {
            const int v = x[a];
            if (!removed && v == i) {
                removed = true;
                continue;
            }
            if (!inserted && j <= v) {
                scratch[w++] = j;
                inserted = true;
            }
            scratch[w++] = v;
        }
        if (!inserted) scratch[w++] = j;
        return rank_sorted(scratch);
    }

private:
    std::uint64_t& binom(int m, int k) { return binom_[m * (particles_ + 2) + k]; }
    std::uint64_t binom_at(int m, int k) const { return k > m ? 0 : binom_[m * (particles_ + 2) + k]; }

    int sites_;
    int particles_;
    std::size_t size_ = 0;
    std::vector<std::uint64_t> binom_;
    std::vector<int> positions_;
};

} // namespace emflow
