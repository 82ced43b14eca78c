#pragma once

#include "dmplug/rng.hpp"
#include "dmplug/tensor.hpp"

#include <variant>

namespace dmplug {

// Measurement operators. Images are [H,W] or [C,H,W]; kernels are square
// with odd side; tilt fields are [H,W,2] per-pixel displacements.

struct Downsample {
    int factor = 1;
};
struct Inpaint {
    Tensor mask; // entries in {0,1}; channel planes identical
};
struct ConvBlur {
    Tensor kernel; // simplex-normalized blur kernel
};
struct NonlinearBlur {
    Tensor kernel;
    double gamma = 2.2;
};
struct BlindBlur {
    Tensor logits; // free parameters; softmax_kernel(logits) is the kernel
};
struct TiltThenBlur {
    Tensor logits;
    Tensor tilt; // [H,W,2]
    double max_tilt = 2.0;
};

using ForwardOperator = std::variant<Downsample, Inpaint, ConvBlur,
                                     NonlinearBlur, BlindBlur, TiltThenBlur>;

Tensor downsample(const Tensor& x, int factor);
Tensor apply_mask(const Tensor& x, const Tensor& mask);
Tensor conv_blur(const Tensor& x, const Tensor& kernel);
Tensor nonlinear_blur(const Tensor& x, const Tensor& kernel, double gamma);
// exp-normalize over all entries; shape preserved, output on the simplex
Tensor softmax_kernel(const Tensor& logits);
// backward bilinear warp: output pixel p reads x at p - tilt(p), zero outside
Tensor tilt_warp(const Tensor& x, const Tensor& tilt, double max_tilt = 2.0);

Tensor gaussian_kernel(int side, double sigma);
// mask with the given fraction of entries dropped to zero
Tensor make_random_mask(const Shape& shape, double drop_fraction, Rng& rng);
bool is_simplex_kernel(const Tensor& k, double tol = 1e-6);

// Blind variants normally read the kernel logits / tilt stored in the
// operator; a solve that optimizes them passes its own (tape-attached)
// tensors here instead.
struct TrainableOverrides {
    const Tensor* kernel_logits = nullptr;
    const Tensor* tilt = nullptr;
};

// noiseless measurement A(x); corruption is layered on separately
Tensor measure(const ForwardOperator& op, const Tensor& x,
               const TrainableOverrides& ov = {});

// names used by configs and reports
const char* operator_name(const ForwardOperator& op);

} // namespace dmplug
