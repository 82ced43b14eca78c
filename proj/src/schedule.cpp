#include "dmplug/schedule.hpp"

#include "dmplug/tensor.hpp"

#include <cmath>

namespace dmplug {

namespace {

void check_t(const NoiseSchedule& s, int t, bool allow_zero) {
    int lo = allow_zero ? 0 : 1;
    if (t < lo || t > s.T)
        throw ContractError("schedule step out of range: t=" + std::to_string(t) +
                            " with T=" + std::to_string(s.T));
}

} // namespace

double NoiseSchedule::beta(int t) const {
    check_t(*this, t, false);
    return betas[t - 1];
}

double NoiseSchedule::alpha(int t) const {
    check_t(*this, t, false);
    return alphas[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    check_t(*this, t, true);
    return t == 0 ? 1.0 : alpha_bars[t - 1];
}

NoiseSchedule make_schedule(std::vector<double> betas) {
    if (betas.empty()) throw ContractError("schedule needs at least one step");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.betas = std::move(betas);
    s.alphas.resize(s.betas.size());
    s.alpha_bars.resize(s.betas.size());
    double prod = 1.0;
    for (size_t i = 0; i < s.betas.size(); ++i) {
        double b = s.betas[i];
        if (!(b > 0.0 && b < 1.0))
            throw ContractError("beta values must lie in (0,1)");
        s.alphas[i] = 1.0 - b;
        prod *= s.alphas[i];
        s.alpha_bars[i] = prod;
    }
    return s;
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ContractError("schedule length must be positive");
    std::vector<double> betas(static_cast<size_t>(T));
    for (int i = 0; i < T; ++i) {
        double f = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
        betas[i] = beta_start + f * (beta_end - beta_start);
    }
    return make_schedule(std::move(betas));
}

std::vector<int> pick_substeps(const NoiseSchedule& s, int k) {
    if (k < 1 || k > s.T)
        throw ContractError("substep count must lie in [1, T]");
    std::vector<int> ts(static_cast<size_t>(k));
    for (int i = 1; i <= k; ++i) {
        // ceil(i*T/k): even spacing that always lands on T at i == k
        ts[i - 1] = static_cast<int>((static_cast<int64_t>(i) * s.T + k - 1) / k);
    }
    return ts;
}

} // namespace dmplug
