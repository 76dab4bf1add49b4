// Second and fourth moments of sqrt(N)<e_1, u_k> over the GOE bulk.
#include "emflow/ensemble.hpp"
#include "emflow/linalg.hpp"
#include "emflow/observables.hpp"

#include <iostream>

int main(int argc, char** argv) {
    using namespace emflow;
    const int n = argc > 1 ? std::atoi(argv[1]) : 100;
    const int draws = argc > 2 ? std::atoi(argv[2]) : 200;
    const Vector q = Vector::Unit(n, 0);
    std::vector<OverlapSample> samples;
    for (int d = 0; d < draws; ++d)
        samples.push_back(make_overlap_sample(diagonalize<double>(sample_goe(n, substream_seed(42, d))).vectors, q));
    std::cout << "order,empirical,stderr,gaussian\n";
    for (const auto& r : pooled_marginal_moments(samples, bulk_window(n), 4))
        std::cout << 2 * r.orders[0] << ',' << r.empirical << ',' << r.stderr_ << ',' << r.target << '\n';
}
