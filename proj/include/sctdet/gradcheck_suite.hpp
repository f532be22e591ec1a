// End-to-end finite-difference verification of the transformer and multibox
// backward passes on randomized desk-scale instances.
#pragma once

#include <string>
#include <vector>

#include "sctdet/transformer.hpp"

namespace sctdet {

struct GradcheckShapes {
    // scales [4, 2, 1] with ratio counts [1, 1, 4] give D_p = 24 and, pooled
    // with kernel 2, D_q = 6; channels [4, 2, 2] concatenate to D_f = 8.
    std::vector<int> grids = {4, 2, 1};
    std::vector<int> ratios = {1, 1, 4};
    std::vector<int> channels = {4, 2, 2};
    std::vector<int> pool_kernels = {2, 2, 2};
    int c_s = 5;
    int c_t = 3;
    double lambda = 0.6;
    double tau = 0.1;
};

struct GradcheckReport {
    struct Block {
        std::string name;
        double max_rel_error = 0.0;
    };
    std::vector<Block> blocks;
    double worst = 0.0;

    bool passed(double tol = 1e-4) const { return worst <= tol; }
};

// Checks every transformer parameter block plus the prior-score input of one
// randomized forward/backward pass against central finite differences.
GradcheckReport sct_gradcheck(unsigned long long seed, const GradcheckShapes& shapes = {},
                              bool use_gap = false);

// Same treatment for the multibox loss gradients w.r.t. scores and deltas.
GradcheckReport multibox_gradcheck(unsigned long long seed);

// Runs n_seeds instances of both suites and merges the worst errors per block.
GradcheckReport full_gradcheck(unsigned long long base_seed, int n_seeds,
                               const GradcheckShapes& shapes = {});

}  // namespace sctdet
