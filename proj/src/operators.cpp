#include "dmplug/operators.hpp"

#include <cmath>

namespace dmplug {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw ContractError(msg);
}

void check_kernel_shape(const Tensor& k, const char* who) {
    const Shape& s = k.shape();
    require(s.size() == 2 && s[0] == s[1], "blur kernel must be square");
    require(s[0] % 2 == 1, "blur kernel side must be odd");
    if (k.size() > 0 && !k.on_tape()) {
        for (double v : k.data())
            if (!std::isfinite(v)) throw ContractError(who);
    }
}

} // namespace

Tensor downsample(const Tensor& x, int factor) {
    require(factor >= 1, "downsample: factor must be positive");
    return avg_pool2d(x, factor);
}

Tensor apply_mask(const Tensor& x, const Tensor& mask) {
    require(x.shape() == mask.shape(), "apply_mask: shape mismatch");
    require(!mask.on_tape(), "apply_mask: masks are fixed, not trainable");
    const auto& mv = mask.data();
    for (double v : mv)
        require(v == 0.0 || v == 1.0, "apply_mask: mask entries must be 0 or 1");
    if (mask.shape().size() == 3) {
        int64_t plane = mask.shape()[1] * int64_t(mask.shape()[2]);
        for (int c = 1; c < mask.shape()[0]; ++c)
            for (int64_t i = 0; i < plane; ++i)
                require(mv[c * plane + i] == mv[i],
                        "apply_mask: channel planes must be identical");
    }
    return mul(x, mask);
}

Tensor conv_blur(const Tensor& x, const Tensor& kernel) {
    check_kernel_shape(kernel, "conv_blur: kernel entries must be finite");
    const Shape& xs = x.shape();
    int64_t h = xs.size() == 3 ? xs[1] : xs[0];
    int64_t w = xs.size() == 3 ? xs[2] : xs[1];
    require(kernel.shape()[0] <= h && kernel.shape()[0] <= w,
            "conv_blur: kernel larger than the image");
    return conv2d_same(x, kernel);
}

Tensor nonlinear_blur(const Tensor& x, const Tensor& kernel, double gamma) {
    require(gamma > 0, "nonlinear_blur: gamma must be positive");
    return conv_blur(power(x, gamma), kernel);
}

Tensor softmax_kernel(const Tensor& logits) {
    const Shape& s = logits.shape();
    require(s.size() == 2 && s[0] == s[1] && s[0] % 2 == 1,
            "softmax_kernel: logits must be square with odd side");
    return reshape(softmax_flat(logits), s);
}

Tensor tilt_warp(const Tensor& x, const Tensor& tilt, double max_tilt) {
    const auto& tv = tilt.data();
    for (size_t i = 0; i + 1 < tv.size(); i += 2) {
        double mag = std::hypot(tv[i], tv[i + 1]);
        if (!(mag <= max_tilt))
            throw ContractError("tilt_warp: displacement exceeds the bound");
    }
    return bilinear_warp(x, tilt);
}

Tensor gaussian_kernel(int side, double sigma) {
    require(side >= 1 && side % 2 == 1, "gaussian_kernel: side must be odd");
    require(sigma > 0, "gaussian_kernel: sigma must be positive");
    int c = side / 2;
    std::vector<double> v(static_cast<size_t>(side) * side);
    double total = 0.0;
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            double r2 = double(i - c) * (i - c) + double(j - c) * (j - c);
            double e = std::exp(-r2 / (2.0 * sigma * sigma));
            v[static_cast<size_t>(i) * side + j] = e;
            total += e;
        }
    for (auto& e : v) e /= total;
    return Tensor::from_data({side, side}, std::move(v));
}

Tensor make_random_mask(const Shape& shape, double drop_fraction, Rng& rng) {
    require(drop_fraction >= 0.0 && drop_fraction <= 1.0,
            "make_random_mask: fraction out of range");
    require(shape.size() == 2 || shape.size() == 3,
            "make_random_mask: expected an image shape");
    int64_t plane = shape.size() == 3 ? shape[1] * int64_t(shape[2])
                                      : shape[0] * int64_t(shape[1]);
    std::vector<double> m(static_cast<size_t>(plane));
    for (auto& v : m) v = rng.uniform() < drop_fraction ? 0.0 : 1.0;
    if (shape.size() == 3) {
        std::vector<double> full;
        full.reserve(static_cast<size_t>(plane) * shape[0]);
        for (int c = 0; c < shape[0]; ++c) full.insert(full.end(), m.begin(), m.end());
        return Tensor::from_data(shape, std::move(full));
    }
    return Tensor::from_data(shape, std::move(m));
}

bool is_simplex_kernel(const Tensor& k, double tol) {
    double total = 0.0;
    for (double v : k.data()) {
        if (!(v >= 0.0) || !std::isfinite(v)) return false;
        total += v;
    }
    return std::fabs(total - 1.0) <= tol;
}

Tensor measure(const ForwardOperator& op, const Tensor& x,
             const TrainableOverrides& ov) {
    if (std::holds_alternative<Downsample>(op))
        return downsample(x, std::get<Downsample>(op).factor);
    if (std::holds_alternative<Inpaint>(op))
        return apply_mask(x, std::get<Inpaint>(op).mask);
    if (std::holds_alternative<ConvBlur>(op))
        return conv_blur(x, std::get<ConvBlur>(op).kernel);
    if (std::holds_alternative<NonlinearBlur>(op)) {
        const auto& nb = std::get<NonlinearBlur>(op);
        return nonlinear_blur(x, nb.kernel, nb.gamma);
    }
    if (std::holds_alternative<BlindBlur>(op)) {
        const Tensor& b = ov.kernel_logits ? *ov.kernel_logits
                                           : std::get<BlindBlur>(op).logits;
        return conv_blur(x, softmax_kernel(b));
    }
    const auto& tb = std::get<TiltThenBlur>(op);
    const Tensor& b = ov.kernel_logits ? *ov.kernel_logits : tb.logits;
    const Tensor& phi = ov.tilt ? *ov.tilt : tb.tilt;
    return conv_blur(tilt_warp(x, phi, tb.max_tilt), softmax_kernel(b));
}

const char* operator_name(const ForwardOperator& op) {
    switch (op.index()) {
        case 0: return "downsample";
        case 1: return "inpaint";
        case 2: return "conv_blur";
        case 3: return "nonlinear_blur";
        case 4: return "blind_blur";
        default: return "tilt_blur";
    }
}

} // namespace dmplug
