#pragma once

#include "dmplug/operators.hpp"
#include "dmplug/reverse.hpp"

#include <vector>

namespace dmplug {

// Interleaving comparison arm: one reverse pass where each denoising step is
// followed by a measurement-consistency correction instead of optimizing the
// seed. The gradient variant nudges the next state down the gradient of
// ||y - A(x0_hat)||^2 with step zeta' / ||y - A(x0_hat)||; the projection
// variant overwrites x0_hat with exact data (masked or block-averaged
// operators only) before the recombination.
struct InterleaveConfig {
    double zeta_prime = 1.0;    // 0 disables guidance entirely
    std::vector<int> substeps;  // ascending, last == T; empty = every step
    enum class Variant { GradientUpdate, ProjectionLinear } variant =
        Variant::GradientUpdate;
};

struct InterleaveResult {
    Tensor recon;
    std::vector<double> residual; // ||y - A(x0_hat)|| before each correction
};

InterleaveResult interleave_solve(const Tensor& y, const ForwardOperator& op,
                                  const ReverseProcess& rp,
                                  const InterleaveConfig& cfg, Rng& rng);

} // namespace dmplug
