#pragma once

#include "dmplug/rng.hpp"
#include "dmplug/tensor.hpp"

namespace dmplug {

enum class NoiseKind { GaussianSigma, GaussianVar, Impulse, Shot, Speckle };
enum class NoiseLevel { Low, High };

// Either pick a preset level or set the parameter explicitly (param >= 0
// wins). The parameter means: sigma for gaussian_sigma, variance for
// gaussian_var and speckle, replacement probability for impulse, and the
// photon rate for shot.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::GaussianSigma;
    NoiseLevel level = NoiseLevel::Low;
    double param = -1.0;
};

// preset table: gaussian_var 0.08/0.12, impulse 0.03/0.06, shot 60/25,
// speckle 0.15/0.20; gaussian_sigma has no presets
double noise_param(const NoiseSpec& spec);

// corrupt a [0,1] image; the result is clipped back to [0,1]
Tensor corrupt(const Tensor& x, const NoiseSpec& spec, Rng& rng);

// Poisson draw; exact CDF inversion for small rates, rounded normal above
int64_t poisson_draw(double rate, Rng& rng);

} // namespace dmplug
