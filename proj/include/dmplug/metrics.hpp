#pragma once

#include "dmplug/tensor.hpp"

#include <array>
#include <complex>
#include <vector>

namespace dmplug {

// 10 log10(MAX^2 / MSE) with MAX = 1; returns +infinity when MSE < 1e-12
double psnr(const Tensor& x, const Tensor& ref);

// mean local SSIM over an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1; valid-region mean, [H,W] images only
double ssim(const Tensor& x, const Tensor& ref);

// unnormalized forward 2-D transform of a power-of-two square image,
// row-major n x n bins
using Spectrum = std::vector<std::complex<double>>;
Spectrum dft2(const Tensor& x);
// inverse transform (divides by the bin count); imaginary parts are dropped
Tensor idft2(const Spectrum& f, int n);

// mean pointwise relative spectral error |F(ref)-F(xhat)|/|F(ref)| over five
// radial frequency bands (low to high); reference bins below 1e-12 in
// magnitude are excluded, and radii beyond Nyquist fold into the last band
struct BandErrors {
    std::array<double, 5> band{};
};
BandErrors fbe(const Tensor& xhat, const Tensor& ref);

// |best PSNR in the trace - PSNR at the stop index|; NaN entries mark
// iterations where PSNR was not evaluated and are skipped
double psnr_gap(const std::vector<double>& psnr_trace, int es_index);

} // namespace dmplug
