#pragma once

#include "dmplug/prior.hpp"
#include "dmplug/rng.hpp"
#include "dmplug/tensor.hpp"

#include <cstdint>
#include <vector>

namespace dmplug {

// one draw from a mixture prior: component by weight, then the component's
// affine map of a standard normal vector
std::vector<double> sample_gmm(const GmmPrior& g, Rng& rng);

// Seeded desk-scale stand-ins for real datasets.

struct GmmFixture {
    GmmPrior prior;
    std::vector<std::vector<double>> samples;
};
// well-separated two-component mixture in 8 dimensions
GmmFixture make_gmm_fixture(uint64_t seed, int count = 200);

struct LowrankFixture {
    GmmPrior prior;
    std::vector<double> mu;
    std::vector<double> u_cols; // dim x rank, orthonormal columns
    int dim = 0;
    int rank = 0;
    std::vector<double> singulars;
    std::vector<std::vector<double>> samples;
};
// degenerate Gaussian supported on a random affine subspace
LowrankFixture make_lowrank_fixture(uint64_t seed, int dim = 16, int rank = 2,
                                    int count = 200);

struct SmoothImagesFixture {
    int side = 0;
    std::vector<Tensor> images; // values in [0,1], low-frequency dominant
};
// low-pass-filtered seeded noise, min-max normalized per image
SmoothImagesFixture make_smooth_images(uint64_t seed, int count, int side = 16);

// Concentrated low-frequency analytic image prior: flat gray mean plus `rank`
// orthonormal cosine modes at `strength` standard deviation each. Its
// denoised estimates stay near the positive mean, which the nonlinear
// forward model requires.
GmmPrior make_smooth_prior(int side, int rank, double strength);

} // namespace dmplug
