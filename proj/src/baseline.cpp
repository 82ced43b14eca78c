#include "dmplug/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dmplug {

namespace {

// expands one value per factor x factor block back to full resolution
std::vector<double> replicate_blocks(const std::vector<double>& low,
                                     const Shape& full, int f) {
    int rank = static_cast<int>(full.size());
    int c = rank == 3 ? full[0] : 1;
    int h = full[rank - 2], w = full[rank - 1];
    int lh = h / f, lw = w / f;
    std::vector<double> out(static_cast<size_t>(numel(full)));
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                out[(static_cast<size_t>(ch) * h + i) * w + j] =
                    low[(static_cast<size_t>(ch) * lh + i / f) * lw + j / f];
    return out;
}

Tensor project_exact(const ForwardOperator& op, const Tensor& x0,
                     const Tensor& y) {
    if (const auto* ip = std::get_if<Inpaint>(&op)) {
        const auto& m = ip->mask.data();
        std::vector<double> v = x0.data();
        for (size_t i = 0; i < v.size(); ++i)
            if (m[i] == 1.0) v[i] = y.at(static_cast<int64_t>(i));
        return Tensor::from_data(x0.shape(), std::move(v));
    }
    if (const auto* ds = std::get_if<Downsample>(&op)) {
        Tensor a = measure(op, x0);
        std::vector<double> gap(a.size());
        for (int64_t i = 0; i < a.size(); ++i) gap[i] = y.at(i) - a.at(i);
        std::vector<double> up =
            replicate_blocks(gap, x0.shape(), ds->factor);
        std::vector<double> v = x0.data();
        for (size_t i = 0; i < v.size(); ++i) v[i] += up[i];
        return Tensor::from_data(x0.shape(), std::move(v));
    }
    throw ContractError(
        std::string("interleave_solve: exact projection is only available "
                    "for masked or block-averaged measurements, not '") +
        operator_name(op) + "'");
}

} // namespace

InterleaveResult interleave_solve(const Tensor& y, const ForwardOperator& op,
                                  const ReverseProcess& rp,
                                  const InterleaveConfig& cfg, Rng& rng) {
    if (!y.defined() || y.on_tape())
        throw ContractError(
            "interleave_solve: measurement must be a plain constant tensor");
    if (rp.data_shape.empty())
        throw ContractError(
            "interleave_solve: reverse process must carry a data shape");
    if (rp.variant != ReverseVariant::DdimDeterministic)
        throw ContractError(
            "interleave_solve: requires the deterministic reverse variant");
    if (cfg.zeta_prime < 0.0)
        throw ContractError("interleave_solve: step-size scale must be >= 0");

    const NoiseSchedule& s = rp.schedule;
    std::vector<int> grid = cfg.substeps;
    if (grid.empty()) {
        grid.resize(static_cast<size_t>(s.T));
        std::iota(grid.begin(), grid.end(), 1);
    }
    if (grid.back() != s.T)
        throw ContractError("interleave_solve: substeps must end at T");
    for (size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] < 1 || grid[i] > s.T ||
            (i > 0 && grid[i] <= grid[i - 1]))
            throw ContractError(
                "interleave_solve: substeps must be strictly ascending in "
                "[1, T]");
    }

    const bool project =
        cfg.variant == InterleaveConfig::Variant::ProjectionLinear;
    if (project) {
        // fail fast instead of on the first step
        if (!std::holds_alternative<Inpaint>(op) &&
            !std::holds_alternative<Downsample>(op))
            throw ContractError(
                std::string("interleave_solve: exact projection is only "
                            "available for masked or block-averaged "
                            "measurements, not '") +
                operator_name(op) + "'");
    }

    InterleaveResult res;
    Tensor x = draw_normal(rng, rp.data_shape);
    for (int i = static_cast<int>(grid.size()) - 1; i >= 0; --i) {
        int t = grid[i];
        int t_prev = i > 0 ? grid[i - 1] : 0;

        if (!project && cfg.zeta_prime > 0.0) {
            Tape tape;
            Tensor xl = tape.leaf(x);
            Tensor eps = eval_epsilon(rp.prior, s, t, xl);
            Tensor x0 = predict_x0_from(xl, eps, s, t);
            Tensor diff = sub(y, measure(op, x0));
            Tensor loss = sum(mul(diff, diff));
            double rnorm = std::sqrt(loss.item());
            res.residual.push_back(rnorm);
            tape.backward(loss);
            const std::vector<double>& g = tape.grad(xl);
            double zeta = cfg.zeta_prime / std::max(rnorm, 1e-12);
            Tensor prop = ddim_combine(x0, eps, s, t_prev);
            std::vector<double> nx = prop.data();
            for (size_t j = 0; j < nx.size(); ++j) nx[j] -= zeta * g[j];
            x = Tensor::from_data(rp.data_shape, std::move(nx));
            continue;
        }

        Tensor eps = eval_epsilon(rp.prior, s, t, x);
        Tensor x0 = predict_x0_from(x, eps, s, t);
        Tensor diff = sub(y, measure(op, x0));
        res.residual.push_back(std::sqrt(sum(mul(diff, diff)).item()));
        if (project) x0 = project_exact(op, x0, y);
        x = ddim_combine(x0, eps, s, t_prev);
    }
    res.recon = x;
    return res;
}

} // namespace dmplug
