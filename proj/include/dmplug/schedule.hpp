#pragma once

#include <vector>

namespace dmplug {

// Forward-diffusion noise schedule. Index convention: step t runs 1..T, and
// arrays are stored with betas[t-1] = beta_t. alpha_bar(0) == 1 so the final
// reverse step lands on the clean prediction.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    double beta(int t) const;
    double alpha(int t) const;
    double alpha_bar(int t) const; // accepts t = 0
    bool terminal_near_noise() const { return alpha_bars.back() < 0.01; }
};

NoiseSchedule make_schedule(std::vector<double> betas);
NoiseSchedule make_linear_schedule(int T, double beta_start = 1e-4,
                                   double beta_end = 0.02);

// k reverse substeps evenly spaced over [1, T], always ending at T.
// Returned ascending; the reverse pass walks it back to front.
std::vector<int> pick_substeps(const NoiseSchedule& s, int k);

} // namespace dmplug
