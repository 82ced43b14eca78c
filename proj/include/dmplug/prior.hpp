#pragma once

#include "dmplug/schedule.hpp"
#include "dmplug/tensor.hpp"

#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace dmplug {

// Gaussian mixture prior with closed-form noise prediction. The forward
// process shrinks each component: at step t the marginal is a mixture of
// N(sqrt(ab)*mu_j, ab*Sigma_j + (1-ab)*I) with ab = alpha_bar(t), and
// eps(x,t) = -sqrt(1-ab) * grad_x log p_t(x).
struct GmmPrior {
    int dim = 0;
    std::vector<double> weights;
    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> covs; // row-major dim x dim, PSD
    // cached eigendecompositions, covs[j] = V_j diag(lam_j) V_j^T
    std::vector<std::vector<double>> eigvecs;
    std::vector<std::vector<double>> eigvals;
};

GmmPrior make_gmm(std::vector<double> weights,
                  std::vector<std::vector<double>> means,
                  std::vector<std::vector<double>> covs);
GmmPrior make_isotropic_prior(int dim);
// single Gaussian with mean mu and covariance U diag(s^2) U^T (U: dim x rank,
// orthonormal columns)
GmmPrior make_lowrank_prior(const std::vector<double>& mu,
                            const std::vector<double>& u_cols, int rank,
                            const std::vector<double>& singulars);

// Differentiable in x: safe to call with x on a tape.
Tensor analytic_epsilon(const GmmPrior& g, const NoiseSchedule& s, int t,
                        const Tensor& x);

// MLP noise predictor over flattened inputs with a learned per-step embedding
// table. Parameters are [W0,b0,...,WL,bL,E] where E is [T, embed_dim].
struct NeuralScore {
    int data_dim = 0;
    int T = 0;
    int embed_dim = 16;
    std::vector<int> widths; // hidden layer widths
    std::vector<Tensor> params;
    std::vector<std::string> param_names;

    // forward with explicit parameter tensors (training passes tape leaves)
    Tensor forward(const std::vector<Tensor>& p, const Tensor& x, int t) const;
    // forward with the stored parameters
    Tensor eval(const Tensor& x, int t) const { return forward(params, x, t); }
};

NeuralScore make_neural_score(int data_dim, int T, std::vector<int> widths,
                              int embed_dim, uint64_t seed);

using ScorePrior = std::variant<GmmPrior, NeuralScore>;

Tensor eval_epsilon(const ScorePrior& prior, const NoiseSchedule& s, int t,
                    const Tensor& x);
int prior_dim(const ScorePrior& prior);

struct TrainingError : std::runtime_error {
    int step;
    TrainingError(int at, const std::string& what)
        : std::runtime_error(what + " at training step " + std::to_string(at)),
          step(at) {}
};

struct TrainConfig {
    int steps = 1000;
    int batch = 16;
    double lr = 1e-3;
    uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> loss_history;
};

// Denoising score matching: draw x0 from the dataset, t uniform on [1,T],
// eps ~ N(0,I), and regress eps_theta(sqrt(ab) x0 + sqrt(1-ab) eps, t) onto
// eps. Updates net.params in place with ADAM. Deterministic given cfg.seed.
TrainResult train_score(NeuralScore& net, const NoiseSchedule& s,
                        const std::vector<std::vector<double>>& dataset,
                        const TrainConfig& cfg);

} // namespace dmplug
