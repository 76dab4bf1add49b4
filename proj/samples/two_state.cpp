// Two sites, one particle, frozen spectrum (-1, 1): the moment flow
// difference decays like exp(-4ct) with c = 1/(N gap^2).
#include "emflow/momentflow.hpp"

#include <cmath>
#include <iostream>

int main() {
    using namespace emflow;
    Vector lambda(2);
    lambda << -1, 1;
    const auto rates = rates_from_lambda(lambda, Symmetry::symmetric);
    const double c = rates.rates(0, 1);
    const auto space = make_space(2, 1);
    const auto f0 = MomentField::delta(space, Configuration::parse(2, "1:1"));

    EvolveOptions opt;
    opt.snapshot_times = {0.1, 1.0, 10.0};
    const auto res = evolve(f0, frozen_rates(rates), 10.0, Symmetry::symmetric, opt);
    std::cout << "t,difference,closed_form\n";
    for (std::size_t i = 0; i < opt.snapshot_times.size(); ++i) {
        const double t = opt.snapshot_times[i];
        std::cout << t << ',' << format_double(res.snapshots[i](0) - res.snapshots[i](1)) << ','
                  << format_double(std::exp(-4 * c * t)) << '\n';
    }
}
