#pragma once

#include "dmplug/prior.hpp"
#include "dmplug/rng.hpp"
#include "dmplug/schedule.hpp"
#include "dmplug/tensor.hpp"

#include <vector>

namespace dmplug {

enum class ReverseVariant { DdimDeterministic, DdpmStochastic };

// Frozen reverse chain: a prior, a schedule, and the substep grid. Immutable
// after construction, so one instance can serve concurrent solves.
struct ReverseProcess {
    ScorePrior prior;
    NoiseSchedule schedule;
    std::vector<int> substeps; // ascending, back() == T
    ReverseVariant variant = ReverseVariant::DdimDeterministic;
    Shape data_shape;
};

ReverseProcess make_reverse_process(ScorePrior prior, NoiseSchedule schedule,
                                    int k,
                                    ReverseVariant variant =
                                        ReverseVariant::DdimDeterministic,
                                    Shape data_shape = {});

// x0_hat = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t), with eps supplied
Tensor predict_x0_from(const Tensor& x_t, const Tensor& eps,
                       const NoiseSchedule& s, int t);
// sqrt(ab_prev) x0_hat + sqrt(1-ab_prev) eps; t_prev = 0 collapses onto x0_hat
Tensor ddim_combine(const Tensor& x0_hat, const Tensor& eps,
                    const NoiseSchedule& s, int t_prev);

Tensor predict_x0(const ReverseProcess& rp, const Tensor& x_t, int t);
Tensor ddim_step(const ReverseProcess& rp, const Tensor& x_t, int t, int t_prev);
// one ancestral step t -> t-1; injected noise is skipped at t = 1
Tensor ddpm_step(const ReverseProcess& rp, const Tensor& x_t, int t, Rng& rng);

// R(z): the full deterministic reverse chain over the substep grid.
// Differentiable; requires the ddim variant.
Tensor reverse_fn(const ReverseProcess& rp, const Tensor& z);

// Draws z ~ N(0,I) per sample and runs the reverse chain (ddim walks the
// substep grid; ddpm walks every step of the schedule).
std::vector<Tensor> sample(const ReverseProcess& rp, int n, Rng& rng);

// standard-normal tensor from a stream; shared by sample() and the
// interleaving baseline so their initial states agree draw for draw
Tensor draw_normal(Rng& rng, const Shape& shape);

} // namespace dmplug
