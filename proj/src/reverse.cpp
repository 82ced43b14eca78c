#include "dmplug/reverse.hpp"

#include <cmath>

namespace dmplug {

ReverseProcess make_reverse_process(ScorePrior prior, NoiseSchedule schedule,
                                    int k, ReverseVariant variant,
                                    Shape data_shape) {
    ReverseProcess rp;
    rp.substeps = pick_substeps(schedule, k);
    int d = prior_dim(prior);
    if (data_shape.empty()) data_shape = {d};
    if (numel(data_shape) != d)
        throw ContractError("reverse process: data shape does not match prior");
    rp.prior = std::move(prior);
    rp.schedule = std::move(schedule);
    rp.variant = variant;
    rp.data_shape = std::move(data_shape);
    return rp;
}

Tensor predict_x0_from(const Tensor& x_t, const Tensor& eps,
                       const NoiseSchedule& s, int t) {
    double ab = s.alpha_bar(t);
    return scale(sub(x_t, scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
}

Tensor ddim_combine(const Tensor& x0_hat, const Tensor& eps,
                    const NoiseSchedule& s, int t_prev) {
    double ab = s.alpha_bar(t_prev);
    return add(scale(x0_hat, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

Tensor predict_x0(const ReverseProcess& rp, const Tensor& x_t, int t) {
    Tensor eps = eval_epsilon(rp.prior, rp.schedule, t, x_t);
    return predict_x0_from(x_t, eps, rp.schedule, t);
}

Tensor ddim_step(const ReverseProcess& rp, const Tensor& x_t, int t, int t_prev) {
    if (t_prev < 0 || t_prev >= t)
        throw ContractError("ddim_step: need 0 <= t_prev < t");
    Tensor eps = eval_epsilon(rp.prior, rp.schedule, t, x_t);
    Tensor x0 = predict_x0_from(x_t, eps, rp.schedule, t);
    return ddim_combine(x0, eps, rp.schedule, t_prev);
}

Tensor ddpm_step(const ReverseProcess& rp, const Tensor& x_t, int t, Rng& rng) {
    if (x_t.on_tape())
        throw ContractError("ddpm_step is stochastic; gradients are not defined");
    if (t < 1 || t > rp.schedule.T) throw ContractError("ddpm_step: t out of range");
    double b = rp.schedule.beta(t);
    double a = rp.schedule.alpha(t);
    double ab = rp.schedule.alpha_bar(t);
    Tensor eps = eval_epsilon(rp.prior, rp.schedule, t, x_t);
    Tensor mean = scale(sub(x_t, scale(eps, b / std::sqrt(1.0 - ab))),
                        1.0 / std::sqrt(a));
    if (t == 1) return mean;
    Tensor z = draw_normal(rng, x_t.shape());
    return add(mean, scale(z, std::sqrt(b)));
}

Tensor reverse_fn(const ReverseProcess& rp, const Tensor& z) {
    if (rp.variant != ReverseVariant::DdimDeterministic)
        throw ContractError("reverse_fn requires the deterministic variant");
    if (z.size() != prior_dim(rp.prior))
        throw ContractError("reverse_fn: seed size does not match prior");
    Tensor x = z;
    for (int i = static_cast<int>(rp.substeps.size()) - 1; i >= 0; --i) {
        int t = rp.substeps[i];
        int t_prev = i > 0 ? rp.substeps[i - 1] : 0;
        x = ddim_step(rp, x, t, t_prev);
    }
    return x;
}

Tensor draw_normal(Rng& rng, const Shape& shape) {
    int64_t n = numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& e : v) e = rng.normal();
    return Tensor::from_data(shape, std::move(v));
}

std::vector<Tensor> sample(const ReverseProcess& rp, int n, Rng& rng) {
    if (n < 0) throw ContractError("sample: negative count");
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor x = draw_normal(rng, rp.data_shape);
        if (rp.variant == ReverseVariant::DdimDeterministic) {
            x = reverse_fn(rp, x);
        } else {
            for (int t = rp.schedule.T; t >= 1; --t) x = ddpm_step(rp, x, t, rng);
        }
        out.push_back(x);
    }
    return out;
}

} // namespace dmplug
