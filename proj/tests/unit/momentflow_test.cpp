#include "emflow/momentflow.hpp"
#include "emflow/semicircle.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace emflow;

namespace {

Vector pair_lambda(double a, double b) {
    Vector l(2);
    l << a, b;
    return l;
}

RateField random_field(int n, std::mt19937_64& gen, Symmetry kind = Symmetry::symmetric) {
    RateField r;
    r.kind = kind;
    r.rates = oracle::random_rates(n, gen);
    return r;
}

MomentField field(std::shared_ptr<const ConfigSpace> sp, const Vector& v) { return MomentField{sp, v}; }

} // namespace

TEST(Rates, DocumentedValues) {
    EXPECT_DOUBLE_EQ(rates_from_lambda(pair_lambda(-1, 1), Symmetry::symmetric).rates(0, 1), 0.125);
    EXPECT_DOUBLE_EQ(rates_from_lambda(pair_lambda(1, 3), Symmetry::covariance).rates(0, 1), 0.5);
    Vector l(6);
    for (int k = 0; k < 6; ++k) l(k) = 0.25 * k;
    const auto r = rates_from_lambda(l, Symmetry::hermitian);
    for (int k = 0; k + 1 < 6; ++k) EXPECT_NEAR(r.rates(k, k + 1), 1.0 / (6 * 0.0625), 1e-12);
    EXPECT_EQ(r.rates, r.rates.transpose());
    EXPECT_EQ(r.rates.diagonal().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(r.guard_triggers, 0);
}

TEST(Rates, GuardClampsAndCounts) {
    Vector l(3);
    l << 0.0, 1e-9, 1.0;
    const auto r = rates_from_lambda(l, Symmetry::symmetric, 1e-6);
    EXPECT_EQ(r.guard_triggers, 1);
    EXPECT_DOUBLE_EQ(r.rates(0, 1), 1.0 / (3 * 1e-12));
    EXPECT_NEAR(r.min_gap, 1e-9, 1e-20);
}

TEST(Rates, ContractErrors) {
    EXPECT_THROW(rates_from_lambda(pair_lambda(1, -1), Symmetry::symmetric), Error);
    try {
        rates_from_lambda(pair_lambda(-1, 2), Symmetry::covariance);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::contract);
    }
}

TEST(ReversibleWeight, DocumentedValues) {
    EXPECT_DOUBLE_EQ(phi(0), 1.0);
    EXPECT_DOUBLE_EQ(phi(1), 0.5);
    EXPECT_DOUBLE_EQ(phi(2), 0.375);
    EXPECT_DOUBLE_EQ(phi(3), 5.0 / 16);
    EXPECT_DOUBLE_EQ(reversible_weight(Configuration::parse(5, "1:1|4:1"), Symmetry::symmetric), 0.25);
    EXPECT_DOUBLE_EQ(reversible_weight(Configuration(5), Symmetry::symmetric), 1.0);
    EXPECT_DOUBLE_EQ(reversible_weight(Configuration::parse(5, "2:3"), Symmetry::hermitian), 1.0);
    for (int k = 0; k < 10; ++k) EXPECT_NEAR(phi(k), oracle::phi_closed(k), 1e-15);
}

TEST(Generator, ConstantsAreHarmonic) {
    std::mt19937_64 gen(1);
    for (auto cls : {Symmetry::symmetric, Symmetry::hermitian})
        for (int n = 2; n <= 6; ++n)
            for (int k = 1; k <= 3; ++k) {
                auto sp = make_space(n, k);
                const auto out = generator_apply(MomentField::constant(sp, 3.7), random_field(n, gen), cls);
                EXPECT_EQ(out.values.cwiseAbs().maxCoeff(), 0.0);
            }
}

TEST(Generator, TwoSiteHandEvaluation) {
    const auto r = rates_from_lambda(pair_lambda(-1, 1), Symmetry::symmetric);
    auto sp = make_space(2, 1);
    const auto out = generator_apply(field(sp, Vector::Unit(2, 0)), r, Symmetry::symmetric);
    // ℬf(1) = 2c(f(2) − f(1)) = −2c, ℬf(2) = 2c(f(1) − f(2)) = 2c.
    EXPECT_DOUBLE_EQ(out.values(0), -0.25);
    EXPECT_DOUBLE_EQ(out.values(1), 0.25);
}

TEST(Generator, MatchesDenseOracle) {
    std::mt19937_64 gen(9);
    for (bool herm : {false, true})
        for (auto [n, k] : {std::pair{3, 2}, {4, 3}, {6, 2}, {5, 1}}) {
            const auto r = random_field(n, gen);
            const auto dense = oracle::dense_generator(r.rates, k, herm);
            auto sp = make_space(n, k);
            const Vector f = oracle::random_field(Eigen::Index(sp->size()), gen);
            const auto out =
                generator_apply(field(sp, f), r, herm ? Symmetry::hermitian : Symmetry::symmetric);
            EXPECT_LT((out.values - dense.generator * f).cwiseAbs().maxCoeff(), 1e-12) << n << "," << k;
            EXPECT_LT((reversible_weights(*sp, herm ? Symmetry::hermitian : Symmetry::symmetric) - dense.pi)
                          .cwiseAbs()
                          .maxCoeff(),
                      1e-15);
        }
}

TEST(Generator, DimensionMismatch) {
    std::mt19937_64 gen(2);
    auto sp = make_space(4, 1);
    EXPECT_THROW(generator_apply(MomentField::constant(sp, 1), random_field(5, gen), Symmetry::symmetric), Error);
}

TEST(Generator, CovarianceRatesUseSymmetricForm) {
    Vector l(4);
    l << 0.1, 0.5, 1.2, 2.0;
    const auto r = rates_from_lambda(l, Symmetry::covariance);
    auto sp = make_space(4, 2);
    std::mt19937_64 gen(5);
    const Vector f = oracle::random_field(Eigen::Index(sp->size()), gen);
    const auto a = generator_apply(field(sp, f), r, Symmetry::covariance);
    const auto b = generator_apply(field(sp, f), r, Symmetry::symmetric);
    EXPECT_EQ(a.values, b.values);
}

TEST(DetailedBalance, HandCheckAndSweep) {
    // ξ_i = 0, ξ_j = 1 on two sites: φ(1)φ(0)·2·1·1 on both sides.
    RateField one;
    one.rates = (Matrix(2, 2) << 0, 1, 1, 0).finished();
    EXPECT_EQ(detailed_balance_residual(one, 1, Symmetry::symmetric).detailed_balance, 0.0);

    std::mt19937_64 gen(31);
    for (auto cls : {Symmetry::symmetric, Symmetry::hermitian})
        for (int n = 2; n <= 6; ++n)
            for (int k = 1; k <= 3; ++k) {
                const auto rep = detailed_balance_residual(random_field(n, gen), k, cls, gen(), 20);
                EXPECT_LT(rep.detailed_balance, 1e-12);
                EXPECT_LT(rep.adjointness, 1e-10);
            }
}

TEST(DetailedBalance, CapError) {
    RateField r;
    r.rates = Matrix::Ones(200, 200) - Matrix::Identity(200, 200);
    try {
        detailed_balance_residual(r, 4, Symmetry::symmetric);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::enumeration_cap);
    }
}

TEST(Dirichlet, IdentityAndPositivity) {
    std::mt19937_64 gen(4);
    for (auto cls : {Symmetry::symmetric, Symmetry::hermitian})
        for (int n = 2; n <= 6; ++n)
            for (int k = 1; k <= 3; ++k) {
                const auto r = random_field(n, gen);
                auto sp = make_space(n, k);
                const MomentField f = field(sp, oracle::random_field(Eigen::Index(sp->size()), gen));
                const double d = dirichlet_form(f, r, cls);
                const double rhs = -pi_inner(f, generator_apply(f, r, cls).values, cls);
                EXPECT_NEAR(d, rhs, 1e-10 * std::max(1.0, std::abs(d)));
                if (sp->size() > 1) EXPECT_GT(d, 0.0);
                EXPECT_EQ(dirichlet_form(MomentField::constant(sp, 2.0), r, cls), 0.0);
            }
}

TEST(Dirichlet, TwoSiteExample) {
    // D = Σ_η π Σ c η_i(1+2η_j)(Δf)² = ½·c + ½·c for f = (1, 0).
    const auto r = rates_from_lambda(pair_lambda(-1, 1), Symmetry::symmetric);
    auto sp = make_space(2, 1);
    const MomentField f = field(sp, Vector::Unit(2, 0));
    EXPECT_DOUBLE_EQ(dirichlet_form(f, r, Symmetry::symmetric), 0.125);
    EXPECT_DOUBLE_EQ(-pi_inner(f, generator_apply(f, r, Symmetry::symmetric).values, Symmetry::symmetric), 0.125);
}

TEST(Evolve, TwoStateClosedForm) {
    const auto r = rates_from_lambda(pair_lambda(-1, 1), Symmetry::symmetric);
    auto sp = make_space(2, 1);
    const MomentField f0 = field(sp, pair_lambda(1.7, -0.4));
    for (double t : {0.1, 1.0, 10.0}) {
        const auto res = evolve(f0, frozen_rates(r), t, Symmetry::symmetric);
        const double diff = res.f.values(0) - res.f.values(1);
        EXPECT_NEAR(diff, std::exp(-4 * 0.125 * t) * 2.1, 1e-8) << t;
        EXPECT_EQ(res.monitor_rejections, 0);
    }
}

TEST(Evolve, ConstantFixedPoint) {
    auto sp = make_space(5, 2);
    Vector l(5);
    l << -1, -0.4, 0, 0.3, 1.1;
    const auto res = evolve(MomentField::constant(sp, 1.0), frozen_rates(rates_from_lambda(l, Symmetry::symmetric)),
                            2.0, Symmetry::symmetric);
    EXPECT_LT((res.f.values.array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Evolve, MatchesMatrixExponentialAndConservesMass) {
    std::mt19937_64 gen(17);
    for (bool herm : {false, true}) {
        const auto cls = herm ? Symmetry::hermitian : Symmetry::symmetric;
        const auto r = random_field(4, gen);
        const auto dense = oracle::dense_generator(r.rates, 2, herm);
        auto sp = make_space(4, 2);
        const Vector f0 = oracle::random_field(Eigen::Index(sp->size()), gen);
        EvolveOptions opt;
        opt.tol = 1e-11;
        const auto res = evolve(field(sp, f0), frozen_rates(r), 0.7, cls, opt);
        const Vector exact = oracle::expm(0.7 * dense.generator) * f0;
        EXPECT_LT((res.f.values - exact).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LT(res.invariant_drift, 1e-8);
        EXPECT_EQ(res.monitor_rejections, 0);
    }
}

TEST(Evolve, MaximumPrinciplePropertyAlongTimeDependentRates) {
    // Random time-dependent eigenvalue paths; max f never increases and min
    // never decreases between snapshots.
    std::mt19937_64 gen(23);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 3 + trial % 4, k = 1 + trial % 3;
        RealPath path;
        std::uniform_real_distribution<double> u(-2, 2);
        for (int s = 0; s <= 4; ++s) {
            Vector l(n);
            for (int i = 0; i < n; ++i) l(i) = u(gen);
            std::sort(l.data(), l.data() + n);
            for (int i = 1; i < n; ++i) l(i) = std::max(l(i), l(i - 1) + 0.05);
            path.times.push_back(0.25 * s);
            path.lambdas.push_back(l);
        }
        auto sp = make_space(n, k);
        EvolveOptions opt;
        for (int s = 1; s <= 20; ++s) opt.snapshot_times.push_back(0.05 * s);
        const Vector f0 = oracle::random_field(Eigen::Index(sp->size()), gen);
        const auto res = evolve(field(sp, f0), path_rates(path, Symmetry::symmetric), 1.0, Symmetry::symmetric, opt);
        double hi = f0.maxCoeff(), lo = f0.minCoeff();
        for (const auto& snap : res.snapshots) {
            EXPECT_LE(snap.maxCoeff(), hi + 10 * opt.tol);
            EXPECT_GE(snap.minCoeff(), lo - 10 * opt.tol);
            hi = snap.maxCoeff();
            lo = snap.minCoeff();
        }
        EXPECT_EQ(res.monitor_rejections, 0);
        EXPECT_EQ(res.snapshots.size(), 20u);
    }
}

TEST(Evolve, StiffnessReportsGap) {
    Vector l(3);
    l << 0.0, 1e-7, 1.0;
    auto sp = make_space(3, 1);
    EvolveOptions opt;
    opt.max_steps = 1000;
    try {
        evolve(field(sp, Vector::Unit(3, 0)), frozen_rates(rates_from_lambda(l, Symmetry::symmetric)), 1.0,
               Symmetry::symmetric, opt);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::stiffness);
        EXPECT_NE(std::string(e.what()).find("min gap"), std::string::npos);
    }
}

TEST(Split, Decomposition) {
    std::mt19937_64 gen(8);
    const auto r = random_field(7, gen);
    {
        auto [s, l] = split_short_long(r, 7);
        EXPECT_EQ(l.rates.cwiseAbs().maxCoeff(), 0.0);
    }
    {
        auto [s, l] = split_short_long(r, 1);
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < 7; ++j)
                if (std::abs(i - j) > 1) EXPECT_EQ(s.rates(i, j), 0.0);
        EXPECT_EQ(s.rates + l.rates, r.rates);
    }
    auto sp = make_space(7, 3);
    const MomentField f = field(sp, oracle::random_field(Eigen::Index(sp->size()), gen));
    for (int ell : {1, 2, 3, 6}) {
        auto [s, l] = split_short_long(r, ell);
        const Vector sum = generator_apply(f, s, Symmetry::symmetric).values + generator_apply(f, l, Symmetry::symmetric).values;
        EXPECT_LT((sum - generator_apply(f, r, Symmetry::symmetric).values).cwiseAbs().maxCoeff(), 1e-13);
    }
    EXPECT_THROW(split_short_long(r, 0), Error);
    EXPECT_THROW(split_short_long(r, 8), Error);
}

TEST(FlatAv, ExtremesAndConstants) {
    auto sp = make_space(100, 2);
    std::mt19937_64 gen(3);
    const MomentField f = field(sp, oracle::random_field(Eigen::Index(sp->size()), gen));
    const auto out = flat_av(f, 0.1);
    const auto bulk = Configuration::parse(100, "20:1|80:1");
    const auto edge = Configuration::parse(100, "1:1|50:1");
    const auto ib = Eigen::Index(sp->index_of(bulk)), ie = Eigen::Index(sp->index_of(edge));
    EXPECT_EQ(out.coefficients(ib), 1.0);
    EXPECT_EQ(out.av.values(ib), f.values(ib));
    EXPECT_EQ(out.coefficients(ie), 0.0);
    EXPECT_EQ(out.av.values(ie), 1.0);
    const auto ones = flat_av(MomentField::constant(sp, 1.0), 0.1);
    EXPECT_LT((ones.av.values.array() - 1.0).abs().maxCoeff(), 1e-15);
    EXPECT_THROW(flat_av(f, 0.005), Error);
    EXPECT_THROW(flat_av(f, 0.3), Error);
}

TEST(FlatAv, CoefficientsMatchMembershipCountsAndAreLipschitz) {
    const int n = 60;
    const double alpha = 0.1;
    auto sp = make_space(n, 2);
    const auto out = flat_av(MomentField::constant(sp, 0.0), alpha);
    // Oracle: count a ∈ ⟦6, 12⟧ with η ⊂ ⟦a, N+1−a⟧ (1-based).
    double worst = 0;
    for (std::size_t c = 0; c < sp->size(); ++c) {
        const auto eta = sp->at(c);
        int inside = 0;
        for (int a = 6; a <= 12; ++a) inside += eta.supported_in(a - 1, n - a);
        EXPECT_DOUBLE_EQ(out.coefficients(Eigen::Index(c)), inside / 7.0);
        for (std::size_t d = 0; d < sp->size(); d += 37) {
            const long dist = config_distance(eta, sp->at(d));
            if (dist == 0) continue;
            worst = std::max(worst, std::abs(out.coefficients(Eigen::Index(c)) - out.coefficients(Eigen::Index(d))) *
                                        n / double(dist));
        }
    }
    // |a_η − a_ξ| ≤ C d(η,ξ)/N with C = 1/α.
    EXPECT_LE(worst, 1.0 / alpha + 1e-12);
}

TEST(Propagation, TimeZeroAndStochasticity) {
    const int n = 60;
    const auto path = frozen_path(classical_locations(n), 0.2);
    const auto eta0 = Configuration::from_positions(n, {30});
    const auto sched = path_rates(path, Symmetry::symmetric);
    const auto p0 = propagation_profile(eta0, sched, 0.0, 6, Symmetry::symmetric);
    EXPECT_EQ(p0.mass[0], 1.0);
    EXPECT_EQ(p0.mass_beyond(0), 0.0);
    const auto p = propagation_profile(eta0, sched, 0.1, 6, Symmetry::symmetric);
    EXPECT_NEAR(p.total, 1.0, 1e-9);
    EXPECT_GT(p.mass_beyond(0), 0.0);
    const auto two = propagation_profile(Configuration::from_positions(n, {20, 40}), sched, 0.1, 6, Symmetry::symmetric);
    EXPECT_NEAR(two.total, 1.0, 1e-9);
}

TEST(Localized, FlatFieldStaysFlatAndEdgeStaysNearOne) {
    const int n = 200;
    const double alpha = 0.2;
    const auto path = frozen_path(classical_locations(n), 1.0);
    const auto sched = path_rates(path, Symmetry::symmetric);
    auto sp = make_space(n, 1);
    const auto flat = localized_evolve(MomentField::constant(sp, 1.0), sched, 0.002, 5, alpha, Symmetry::symmetric);
    EXPECT_LT((flat.f.values.array() - 1.0).abs().maxCoeff(), 1e-12);

    // f_0 ≡ 0: g_0 = 1 − a_η differs from 1 by O(1) from site αN on. With
    // cutoff ℓ = 5 < αN/2 and t ≪ ℓ/N the edge zone stays flat.
    const auto g = localized_evolve(MomentField::constant(sp, 0.0), sched, 0.002, 5, alpha, Symmetry::symmetric);
    for (int k = 0; k < int(alpha * n / 2); ++k) {
        EXPECT_LT(std::abs(g.f.values(k) - 1.0), 1e-6) << k;
        EXPECT_LT(std::abs(g.f.values(n - 1 - k) - 1.0), 1e-6) << k;
    }
    EXPECT_GT(std::abs(g.f.values(n / 2) - 1.0), 0.5);
}

TEST(Localized, ShortRangeErrorShrinksWithCutoff) {
    const int n = 60;
    const auto path = frozen_path(classical_locations(n), 1.0);
    const auto sched = path_rates(path, Symmetry::symmetric);
    auto sp = make_space(n, 1);
    const auto eta = Configuration::from_positions(n, {30});
    const auto full = evolve(MomentField::delta(sp, eta), sched, 0.05, Symmetry::symmetric);
    std::vector<double> err;
    for (int ell : {5, 10, 20}) {
        EvolveOptions opt;
        opt.part = RangePart::short_range;
        opt.ell = ell;
        const auto s = evolve(MomentField::delta(sp, eta), sched, 0.05, Symmetry::symmetric, opt);
        err.push_back((full.f.values - s.f.values).lpNorm<1>());
    }
    EXPECT_GT(err[0], err[1]);
    EXPECT_GT(err[1], err[2]);
}

TEST(MomentFieldCsv, Format) {
    auto sp = make_space(3, 2);
    std::ostringstream os;
    MomentField::constant(sp, 0.5).write_csv(os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "config_index,occupation,value");
    std::getline(is, line);
    EXPECT_EQ(line, "0,1:2,0.5");
    std::getline(is, line);
    EXPECT_EQ(line, "1,1:1|2:1,0.5");
}
