#include "dmplug/prior.hpp"

#include "dmplug/linalg.hpp"
#include "dmplug/optim.hpp"
#include "dmplug/rng.hpp"

#include <cmath>

namespace dmplug {

GmmPrior make_gmm(std::vector<double> weights,
                  std::vector<std::vector<double>> means,
                  std::vector<std::vector<double>> covs) {
    size_t J = weights.size();
    if (J == 0 || means.size() != J || covs.size() != J)
        throw ContractError("gmm: component counts disagree");
    int d = static_cast<int>(means[0].size());
    double wsum = 0.0;
    for (double w : weights) {
        if (!(w > 0)) throw ContractError("gmm: weights must be positive");
        wsum += w;
    }
    if (std::fabs(wsum - 1.0) > 1e-9)
        throw ContractError("gmm: weights must sum to 1");
    for (auto& w : weights) w /= wsum;

    GmmPrior g;
    g.dim = d;
    g.weights = std::move(weights);
    for (size_t j = 0; j < J; ++j) {
        if (static_cast<int>(means[j].size()) != d ||
            static_cast<int>(covs[j].size()) != d * d)
            throw ContractError("gmm: mean/cov dimensions disagree");
        std::vector<double> lam, V;
        linalg::sym_eig(d, covs[j], lam, V);
        for (auto& l : lam) {
            if (l < -1e-9) throw ContractError("gmm: covariance is not PSD");
            if (l < 0) l = 0.0; // forgive roundoff
        }
        g.eigvals.push_back(std::move(lam));
        g.eigvecs.push_back(std::move(V));
    }
    g.means = std::move(means);
    g.covs = std::move(covs);
    return g;
}

GmmPrior make_isotropic_prior(int dim) {
    if (dim < 1) throw ContractError("prior dimension must be positive");
    std::vector<double> eye(static_cast<size_t>(dim) * dim, 0.0);
    for (int i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
    return make_gmm({1.0}, {std::vector<double>(dim, 0.0)}, {eye});
}

GmmPrior make_lowrank_prior(const std::vector<double>& mu,
                            const std::vector<double>& u_cols, int rank,
                            const std::vector<double>& singulars) {
    int d = static_cast<int>(mu.size());
    if (rank < 1 || rank > d || static_cast<int>(u_cols.size()) != d * rank ||
        static_cast<int>(singulars.size()) != rank)
        throw ContractError("lowrank prior: dimensions disagree");
    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (int r = 0; r < rank; ++r) {
        double s2 = singulars[r] * singulars[r];
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                cov[i * d + j] += s2 * u_cols[i * rank + r] * u_cols[j * rank + r];
    }
    return make_gmm({1.0}, {mu}, {cov});
}

Tensor analytic_epsilon(const GmmPrior& g, const NoiseSchedule& s, int t,
                        const Tensor& x) {
    if (t < 1 || t > s.T) throw ContractError("analytic_epsilon: t out of range");
    if (x.size() != g.dim)
        throw ContractError("analytic_epsilon: input size does not match prior");
    double ab = s.alpha_bar(t);
    double om = 1.0 - ab;
    int d = g.dim;
    size_t J = g.weights.size();

    Tensor xf = reshape(x, {d});

    // per component: r = x - sqrt(ab) mu, A r = V diag(1/(ab lam + 1-ab)) V^T r
    std::vector<Tensor> Ar(J);
    std::vector<Tensor> logit(J);
    for (size_t j = 0; j < J; ++j) {
        std::vector<double> m(d), inv(static_cast<size_t>(d)), vt(g.eigvecs[j].size());
        double logdet = 0.0;
        for (int i = 0; i < d; ++i) {
            m[i] = std::sqrt(ab) * g.means[j][i];
            double sv = ab * g.eigvals[j][i] + om;
            inv[i] = 1.0 / sv;
            logdet += std::log(sv);
        }
        const auto& V = g.eigvecs[j];
        for (int i = 0; i < d; ++i)
            for (int k = 0; k < d; ++k) vt[i * d + k] = V[k * d + i];
        Tensor Vt = Tensor::from_data({d, d}, vt);
        Tensor Vm = Tensor::from_data({d, d}, std::vector<double>(V));
        Tensor r = sub(xf, Tensor::from_data({d}, m));
        Tensor w = mul(Tensor::from_data({d}, inv), matmul(Vt, r));
        Ar[j] = matmul(Vm, w);
        if (J > 1) {
            Tensor quad = sum(mul(r, Ar[j]));
            logit[j] = add(scale(quad, -0.5),
                           Tensor::scalar(std::log(g.weights[j]) - 0.5 * logdet));
        }
    }

    Tensor score;
    if (J == 1) {
        score = neg(Ar[0]);
    } else {
        std::vector<Tensor> lg;
        for (auto& l : logit) lg.push_back(reshape(l, {1}));
        Tensor resp = softmax_flat(concat(lg, 0));
        for (size_t j = 0; j < J; ++j) {
            Tensor term = mul(broadcast(slice(resp, 0, static_cast<int>(j), 1),
                                        {d}),
                              Ar[j]);
            score = j == 0 ? neg(term) : sub(score, term);
        }
    }
    return reshape(scale(score, -std::sqrt(om)), x.shape());
}

// ---- neural score ----

NeuralScore make_neural_score(int data_dim, int T, std::vector<int> widths,
                              int embed_dim, uint64_t seed) {
    if (data_dim < 1 || T < 1 || embed_dim < 1)
        throw ContractError("neural score: bad dimensions");
    for (int w : widths)
        if (w < 1) throw ContractError("neural score: bad hidden width");
    NeuralScore net;
    net.data_dim = data_dim;
    net.T = T;
    net.embed_dim = embed_dim;
    net.widths = widths;

    Rng root(seed);
    auto init_mat = [&](const std::string& name, int rows, int cols, double sd) {
        Rng r = root.derive("init_" + name);
        std::vector<double> v(static_cast<size_t>(rows) * cols);
        for (auto& e : v) e = sd * r.normal();
        net.params.push_back(Tensor::from_data({rows, cols}, std::move(v)));
        net.param_names.push_back(name);
    };
    int in = data_dim + embed_dim;
    for (size_t l = 0; l <= widths.size(); ++l) {
        int out = l < widths.size() ? widths[l] : data_dim;
        init_mat("w" + std::to_string(l), out, in, std::sqrt(2.0 / in));
        net.params.push_back(Tensor::zeros({out}));
        net.param_names.push_back("b" + std::to_string(l));
        in = out;
    }
    init_mat("embed", T, embed_dim, 1.0);
    return net;
}

Tensor NeuralScore::forward(const std::vector<Tensor>& p, const Tensor& x,
                            int t) const {
    if (p.size() != params.size())
        throw ContractError("neural score: parameter list layout mismatch");
    if (t < 1 || t > T) throw ContractError("neural score: t out of range");
    if (x.size() != data_dim)
        throw ContractError("neural score: input size does not match net");
    const Tensor& E = p.back();
    Tensor emb = reshape(slice(E, 0, t - 1, 1), {embed_dim});
    Tensor h = concat({reshape(x, {data_dim}), emb}, 0);
    size_t L = widths.size() + 1;
    for (size_t l = 0; l < L; ++l) {
        h = add(matmul(p[2 * l], h), p[2 * l + 1]);
        if (l + 1 < L) h = silu(h);
    }
    return reshape(h, x.shape());
}

Tensor eval_epsilon(const ScorePrior& prior, const NoiseSchedule& s, int t,
                    const Tensor& x) {
    if (std::holds_alternative<GmmPrior>(prior))
        return analytic_epsilon(std::get<GmmPrior>(prior), s, t, x);
    const auto& net = std::get<NeuralScore>(prior);
    if (net.T != s.T)
        throw ContractError("neural score was built for a different schedule length");
    return net.eval(x, t);
}

int prior_dim(const ScorePrior& prior) {
    if (std::holds_alternative<GmmPrior>(prior))
        return std::get<GmmPrior>(prior).dim;
    return std::get<NeuralScore>(prior).data_dim;
}

TrainResult train_score(NeuralScore& net, const NoiseSchedule& s,
                        const std::vector<std::vector<double>>& dataset,
                        const TrainConfig& cfg) {
    if (dataset.empty()) throw ContractError("train_score: empty dataset");
    for (const auto& x : dataset)
        if (static_cast<int>(x.size()) != net.data_dim)
            throw ContractError("train_score: sample size does not match net");
    if (cfg.steps < 0 || cfg.batch < 1)
        throw ContractError("train_score: bad step or batch count");
    if (net.T != s.T)
        throw ContractError("train_score: net and schedule disagree on T");

    Rng root(cfg.seed);
    Rng draw = root.derive("train_draws");

    // the group shares value storage with net.params, so ADAM updates the
    // net in place
    std::vector<ParamGroup> groups(1);
    groups[0].name = "score_net";
    groups[0].lr = cfg.lr;
    groups[0].tensors = net.params;
    AdamState adam;

    TrainResult res;
    int d = net.data_dim;
    for (int step = 0; step < cfg.steps; ++step) {
        Tape tape;
        std::vector<Tensor> leaves;
        for (const auto& p : groups[0].tensors) leaves.push_back(tape.leaf(p));

        Tensor loss;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& x0 = dataset[draw.below(dataset.size())];
            int t = 1 + static_cast<int>(draw.below(static_cast<uint64_t>(s.T)));
            double ab = s.alpha_bar(t);
            std::vector<double> noisy(d), eps(d);
            for (int i = 0; i < d; ++i) {
                eps[i] = draw.normal();
                noisy[i] = std::sqrt(ab) * x0[i] + std::sqrt(1.0 - ab) * eps[i];
            }
            Tensor pred = net.forward(leaves, Tensor::from_data({d}, noisy), t);
            Tensor term = mse(pred, Tensor::from_data({d}, eps));
            loss = b == 0 ? term : add(loss, term);
        }
        loss = scale(loss, 1.0 / cfg.batch);
        double lv = loss.item();
        if (!std::isfinite(lv)) throw TrainingError(step, "training loss diverged");
        res.loss_history.push_back(lv);

        tape.backward(loss);
        GroupGrads grads(1);
        for (const auto& l : leaves) grads[0].push_back(tape.grad(l));
        adam.step(groups, grads);
    }
    return res;
}

} // namespace dmplug
