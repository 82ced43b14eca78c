#include "dmplug/metrics.hpp"

#include "dmplug/operators.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace dmplug {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ContractError(msg);
}

bool power_of_two(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// iterative radix-2 transform of one line of length n with stride
void fft_line(std::complex<double>* a, int n, int stride, bool inverse) {
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i * stride], a[j * stride]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * M_PI / len * (inverse ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[(i + k) * stride];
                std::complex<double> v = a[(i + k + len / 2) * stride] * w;
                a[(i + k) * stride] = u + v;
                a[(i + k + len / 2) * stride] = u - v;
                w *= wl;
            }
        }
    }
}

void fft2_inplace(Spectrum& f, int n, bool inverse) {
    for (int i = 0; i < n; ++i) fft_line(f.data() + int64_t(i) * n, n, 1, inverse);
    for (int j = 0; j < n; ++j) fft_line(f.data() + j, n, n, inverse);
}

int square_pow2_side(const Tensor& x, const char* who) {
    const Shape& s = x.shape();
    require(s.size() == 2 && s[0] == s[1] && power_of_two(s[0]),
            std::string(who) + ": expected a power-of-two square image, got " +
                shape_str(s));
    return s[0];
}

} // namespace

double psnr(const Tensor& x, const Tensor& ref) {
    require(x.shape() == ref.shape(), "psnr: shape mismatch");
    require(x.size() > 0, "psnr: empty input");
    double acc = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        double d = x.at(i) - ref.at(i);
        acc += d * d;
    }
    double mse = acc / x.size();
    if (mse < 1e-12) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor& x, const Tensor& ref) {
    require(x.shape() == ref.shape(), "ssim: shape mismatch");
    require(x.shape().size() == 2, "ssim: expected a [H,W] image");
    const int win = 11;
    int64_t h = x.shape()[0], w = x.shape()[1];
    require(h >= win && w >= win, "ssim: image smaller than the 11x11 window");
    static const Tensor window = gaussian_kernel(win, 1.5);
    const auto& wv = window.data();
    const auto& xv = x.data();
    const auto& yv = ref.data();
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i + win <= h; ++i)
        for (int64_t j = 0; j + win <= w; ++j) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (int a = 0; a < win; ++a)
                for (int b = 0; b < win; ++b) {
                    double g = wv[static_cast<size_t>(a) * win + b];
                    double xe = xv[(i + a) * w + (j + b)];
                    double ye = yv[(i + a) * w + (j + b)];
                    mx += g * xe;
                    my += g * ye;
                    xx += g * xe * xe;
                    yy += g * ye * ye;
                    xy += g * xe * ye;
                }
            double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
            total += (2 * mx * my + c1) * (2 * cov + c2) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / count;
}

Spectrum dft2(const Tensor& x) {
    int n = static_cast<int>(square_pow2_side(x, "dft2"));
    Spectrum f(static_cast<size_t>(n) * n);
    for (size_t i = 0; i < f.size(); ++i) f[i] = x.at(static_cast<int64_t>(i));
    fft2_inplace(f, n, false);
    return f;
}

Tensor idft2(const Spectrum& f, int n) {
    require(power_of_two(n) && static_cast<int64_t>(f.size()) == int64_t(n) * n,
            "idft2: spectrum size does not match the side length");
    Spectrum g = f;
    fft2_inplace(g, n, true);
    std::vector<double> out(g.size());
    for (size_t i = 0; i < g.size(); ++i) out[i] = g[i].real() / (double(n) * n);
    return Tensor::from_data({n, n}, std::move(out));
}

BandErrors fbe(const Tensor& xhat, const Tensor& ref) {
    require(xhat.shape() == ref.shape(), "fbe: shape mismatch");
    int n = static_cast<int>(square_pow2_side(ref, "fbe"));
    Spectrum fh = dft2(xhat), fr = dft2(ref);
    std::array<double, 5> sums{};
    std::array<int64_t, 5> counts{};
    double nyquist = n / 2.0;
    for (int i = 0; i < n; ++i) {
        int fi = i <= n / 2 ? i : i - n;
        for (int j = 0; j < n; ++j) {
            int fj = j <= n / 2 ? j : j - n;
            double mag = std::abs(fr[static_cast<size_t>(i) * n + j]);
            if (mag < 1e-12) continue;
            double rnorm = std::sqrt(double(fi) * fi + double(fj) * fj) / nyquist;
            int band = std::min(4, static_cast<int>(rnorm / 0.2));
            sums[band] += std::abs(fr[static_cast<size_t>(i) * n + j] -
                                   fh[static_cast<size_t>(i) * n + j]) /
                          mag;
            counts[band] += 1;
        }
    }
    BandErrors out;
    for (int b = 0; b < 5; ++b) {
        if (counts[b] == 0)
            throw ContractError("fbe: band " + std::to_string(b + 1) +
                                " has no usable reference bins");
        out.band[b] = sums[b] / counts[b];
    }
    return out;
}

double psnr_gap(const std::vector<double>& psnr_trace, int es_index) {
    require(!psnr_trace.empty(), "psnr_gap: empty trace");
    require(es_index >= 0 && es_index < static_cast<int>(psnr_trace.size()),
            "psnr_gap: stop index outside the trace");
    double at_stop = psnr_trace[static_cast<size_t>(es_index)];
    require(!std::isnan(at_stop), "psnr_gap: no PSNR stored at the stop index");
    double best = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (double v : psnr_trace)
        if (!std::isnan(v)) {
            best = std::max(best, v);
            any = true;
        }
    require(any, "psnr_gap: trace has no PSNR values");
    return std::fabs(best - at_stop);
}

} // namespace dmplug
