#include "dmplug/noise.hpp"

#include <algorithm>
#include <cmath>

namespace dmplug {

double noise_param(const NoiseSpec& spec) {
    if (spec.param >= 0.0) return spec.param;
    bool low = spec.level == NoiseLevel::Low;
    switch (spec.kind) {
        case NoiseKind::GaussianSigma:
            throw ContractError("gaussian_sigma noise needs an explicit sigma");
        case NoiseKind::GaussianVar: return low ? 0.08 : 0.12;
        case NoiseKind::Impulse: return low ? 0.03 : 0.06;
        case NoiseKind::Shot: return low ? 60.0 : 25.0;
        case NoiseKind::Speckle: return low ? 0.15 : 0.20;
    }
    throw ContractError("unknown noise kind");
}

int64_t poisson_draw(double rate, Rng& rng) {
    if (rate < 0) throw ContractError("poisson_draw: negative rate");
    if (rate == 0) return 0;
    if (rate <= 30.0) {
        double u = rng.uniform();
        double p = std::exp(-rate), cdf = p;
        int64_t k = 0;
        while (u > cdf && k < 400) {
            ++k;
            p *= rate / k;
            cdf += p;
        }
        return k;
    }
    double v = std::round(rate + std::sqrt(rate) * rng.normal());
    return v < 0 ? 0 : static_cast<int64_t>(v);
}

Tensor corrupt(const Tensor& x, const NoiseSpec& spec, Rng& rng) {
    for (double v : x.data())
        if (!(v >= 0.0 && v <= 1.0))
            throw ContractError("corrupt: input must lie in [0,1]");
    double p = noise_param(spec);
    std::vector<double> out(x.data());
    switch (spec.kind) {
        case NoiseKind::GaussianSigma:
            for (auto& v : out) v += p * rng.normal();
            break;
        case NoiseKind::GaussianVar: {
            double s = std::sqrt(p);
            for (auto& v : out) v += s * rng.normal();
            break;
        }
        case NoiseKind::Impulse:
            if (p > 1.0) throw ContractError("impulse probability above 1");
            for (auto& v : out)
                if (rng.uniform() < p) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
            break;
        case NoiseKind::Shot:
            if (p <= 0) throw ContractError("shot noise needs a positive rate");
            for (auto& v : out)
                v = static_cast<double>(poisson_draw(p * v, rng)) / p;
            break;
        case NoiseKind::Speckle: {
            double s = std::sqrt(p);
            for (auto& v : out) v *= 1.0 + s * rng.normal();
            break;
        }
    }
    for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
    return Tensor::from_data(x.shape(), std::move(out));
}

} // namespace dmplug
