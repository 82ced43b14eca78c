#include "dmplug/fixtures.hpp"

#include "dmplug/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dmplug {

std::vector<double> sample_gmm(const GmmPrior& g, Rng& rng) {
    double u = rng.uniform();
    size_t j = 0;
    double acc = 0.0;
    for (; j + 1 < g.weights.size(); ++j) {
        acc += g.weights[j];
        if (u < acc) break;
    }
    int d = g.dim;
    std::vector<double> xi(static_cast<size_t>(d));
    for (auto& v : xi) v = rng.normal();
    std::vector<double> x = g.means[j];
    const auto& V = g.eigvecs[j];
    const auto& lam = g.eigvals[j];
    for (int k = 0; k < d; ++k) {
        if (lam[k] <= 0.0) continue;
        double s = std::sqrt(lam[k]) * xi[static_cast<size_t>(k)];
        for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += V[i * d + k] * s;
    }
    return x;
}

GmmFixture make_gmm_fixture(uint64_t seed, int count) {
    const int d = 8;
    std::vector<double> m0(d, 0.0), m1(d, 0.0);
    m0[0] = -2.0;
    m1[0] = 2.0;
    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) cov[i * d + i] = 0.25;

    GmmFixture fx;
    fx.prior = make_gmm({0.3, 0.7}, {m0, m1}, {cov, cov});
    Rng rng = Rng(seed).derive("gmm_fixture");
    for (int i = 0; i < count; ++i)
        fx.samples.push_back(sample_gmm(fx.prior, rng));
    return fx;
}

LowrankFixture make_lowrank_fixture(uint64_t seed, int dim, int rank,
                                    int count) {
    LowrankFixture fx;
    fx.dim = dim;
    fx.rank = rank;
    fx.mu.assign(static_cast<size_t>(dim), 0.5);
    Rng rng = Rng(seed).derive("lowrank_fixture");

    // random orthonormal columns by Gram-Schmidt on Gaussian draws
    std::vector<std::vector<double>> cols;
    for (int r = 0; r < rank; ++r) {
        std::vector<double> c(static_cast<size_t>(dim));
        for (auto& v : c) v = rng.normal();
        for (const auto& prev : cols) {
            double dot = std::inner_product(c.begin(), c.end(), prev.begin(), 0.0);
            for (int i = 0; i < dim; ++i) c[static_cast<size_t>(i)] -= dot * prev[static_cast<size_t>(i)];
        }
        double n = std::sqrt(std::inner_product(c.begin(), c.end(), c.begin(), 0.0));
        for (auto& v : c) v /= n;
        cols.push_back(std::move(c));
    }
    fx.u_cols.assign(static_cast<size_t>(dim) * rank, 0.0);
    for (int i = 0; i < dim; ++i)
        for (int r = 0; r < rank; ++r)
            fx.u_cols[static_cast<size_t>(i) * rank + r] = cols[static_cast<size_t>(r)][static_cast<size_t>(i)];
    fx.singulars.resize(static_cast<size_t>(rank));
    for (int r = 0; r < rank; ++r)
        fx.singulars[static_cast<size_t>(r)] = 0.8 / (1.0 + 0.5 * r);

    fx.prior = make_lowrank_prior(fx.mu, fx.u_cols, rank, fx.singulars);
    for (int i = 0; i < count; ++i) {
        std::vector<double> x = fx.mu;
        for (int r = 0; r < rank; ++r) {
            double a = fx.singulars[static_cast<size_t>(r)] * rng.normal();
            for (int j = 0; j < dim; ++j)
                x[static_cast<size_t>(j)] += a * cols[static_cast<size_t>(r)][static_cast<size_t>(j)];
        }
        fx.samples.push_back(std::move(x));
    }
    return fx;
}

SmoothImagesFixture make_smooth_images(uint64_t seed, int count, int side) {
    SmoothImagesFixture fx;
    fx.side = side;
    Rng rng = Rng(seed).derive("smooth_images");
    Tensor kernel = gaussian_kernel(7, 1.5);
    for (int n = 0; n < count; ++n) {
        std::vector<double> noise(static_cast<size_t>(side) * side);
        for (auto& v : noise) v = rng.normal();
        // wrap-around filtering keeps the statistics stationary at the borders
        Tensor img = conv2d_same(Tensor::from_data({side, side}, std::move(noise)),
                                 kernel, /*circular=*/true);
        const auto& d = img.data();
        double lo = *std::min_element(d.begin(), d.end());
        double hi = *std::max_element(d.begin(), d.end());
        std::vector<double> out(d.size(), 0.5);
        if (hi - lo > 1e-12)
            for (size_t i = 0; i < d.size(); ++i) out[i] = (d[i] - lo) / (hi - lo);
        fx.images.push_back(Tensor::from_data({side, side}, std::move(out)));
    }
    return fx;
}

GmmPrior make_smooth_prior(int side, int rank, double strength) {
    if (side < 2 || rank < 1 || strength <= 0.0)
        throw ContractError("make_smooth_prior: bad dimensions");
    const int d = side * side;

    // cosine modes ordered by total frequency, skipping the constant mode
    struct Mode {
        int kx, ky;
    };
    std::vector<Mode> modes;
    for (int kx = 0; kx < side; ++kx)
        for (int ky = 0; ky < side; ++ky)
            if (kx + ky > 0) modes.push_back({kx, ky});
    std::stable_sort(modes.begin(), modes.end(), [](const Mode& a, const Mode& b) {
        return a.kx * a.kx + a.ky * a.ky < b.kx * b.kx + b.ky * b.ky;
    });
    if (rank > static_cast<int>(modes.size()))
        throw ContractError("make_smooth_prior: rank exceeds available modes");

    std::vector<double> u(static_cast<size_t>(d) * rank);
    for (int r = 0; r < rank; ++r) {
        double norm2 = 0.0;
        std::vector<double> col(static_cast<size_t>(d));
        for (int i = 0; i < side; ++i)
            for (int j = 0; j < side; ++j) {
                double v = std::cos(M_PI * modes[static_cast<size_t>(r)].kx * (i + 0.5) / side) *
                           std::cos(M_PI * modes[static_cast<size_t>(r)].ky * (j + 0.5) / side);
                col[static_cast<size_t>(i) * side + j] = v;
                norm2 += v * v;
            }
        double inv = 1.0 / std::sqrt(norm2);
        for (int i = 0; i < d; ++i)
            u[static_cast<size_t>(i) * rank + r] = col[static_cast<size_t>(i)] * inv;
    }
    std::vector<double> mu(static_cast<size_t>(d), 0.5);
    std::vector<double> singulars(static_cast<size_t>(rank), strength);
    return make_lowrank_prior(mu, u, rank, singulars);
}

} // namespace dmplug
