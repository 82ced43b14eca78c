#include "dmplug/optim.hpp"

#include <cmath>
#include <deque>

namespace dmplug {

AdamState::AdamState(double beta1, double beta2, double eps)
    : b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0))
        throw ContractError("adam: invalid moment or epsilon settings");
}

void AdamState::step(std::vector<ParamGroup>& groups, const GroupGrads& grads) {
    if (grads.size() != groups.size())
        throw ContractError("adam: gradient/group count mismatch");
    if (m_.empty()) {
        m_.resize(groups.size());
        v_.resize(groups.size());
        for (size_t g = 0; g < groups.size(); ++g) {
            m_[g].resize(groups[g].tensors.size());
            v_[g].resize(groups[g].tensors.size());
            for (size_t i = 0; i < groups[g].tensors.size(); ++i) {
                size_t n = groups[g].tensors[i].data().size();
                m_[g][i].assign(n, 0.0);
                v_[g][i].assign(n, 0.0);
            }
        }
    }
    ++t_;
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t g = 0; g < groups.size(); ++g) {
        ParamGroup& grp = groups[g];
        if (grads[g].size() != grp.tensors.size())
            throw ContractError("adam: gradient layout mismatch in group '" +
                                grp.name + "'");
        for (size_t i = 0; i < grp.tensors.size(); ++i) {
            auto& theta = grp.tensors[i].mutable_data();
            const auto& grad = grads[g][i];
            if (grad.size() != theta.size())
                throw ContractError("adam: gradient size mismatch in group '" +
                                    grp.name + "'");
            auto& m = m_[g][i];
            auto& v = v_[g][i];
            for (size_t j = 0; j < theta.size(); ++j) {
                double gj = grad[j];
                if (!std::isfinite(gj))
                    throw OptimError(grp.name, "non-finite gradient");
                m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
                v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
                double mhat = m[j] / c1;
                double vhat = v[j] / c2;
                theta[j] -= grp.lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }
}

namespace {

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

LbfgsResult lbfgs_minimize(const LbfgsObjective& f, std::vector<double> x0,
                           const LbfgsConfig& cfg) {
    if (cfg.memory < 1 || cfg.max_iters < 0 || !(cfg.step_scale > 0))
        throw ContractError("lbfgs: invalid configuration");
    size_t n = x0.size();
    LbfgsResult res;
    res.x = std::move(x0);

    std::vector<double> g(n);
    double fx = f(res.x, g);
    if (!std::isfinite(fx)) throw OptimError("lbfgs", "non-finite objective");
    res.loss_history.push_back(fx);
    if (inf_norm(g) <= cfg.grad_tol) {
        res.converged = true;
        return res;
    }

    std::deque<std::vector<double>> S, Y;
    std::deque<double> rho;
    std::vector<double> d(n), xt(n), gt(n), alpha;

    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        // two-loop recursion
        d = g;
        alpha.assign(S.size(), 0.0);
        for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i) {
            alpha[i] = rho[i] * dot(S[i], d);
            for (size_t j = 0; j < n; ++j) d[j] -= alpha[i] * Y[i][j];
        }
        if (!S.empty()) {
            double gamma = dot(S.back(), Y.back()) / dot(Y.back(), Y.back());
            for (auto& dj : d) dj *= gamma;
        }
        for (size_t i = 0; i < S.size(); ++i) {
            double beta = rho[i] * dot(Y[i], d);
            for (size_t j = 0; j < n; ++j) d[j] += (alpha[i] - beta) * S[i][j];
        }
        for (auto& dj : d) dj = -dj;

        double slope = dot(g, d);
        if (!(slope < 0)) { // curvature pairs went bad; fall back to steepest descent
            S.clear();
            Y.clear();
            rho.clear();
            for (size_t j = 0; j < n; ++j) d[j] = -g[j];
            slope = dot(g, d);
        }

        double t = cfg.step_scale;
        if (S.empty()) {
            double gn = 0.0;
            for (double v : g) gn += std::fabs(v);
            t = cfg.step_scale * std::min(1.0, 1.0 / (gn + 1e-300));
        }

        bool accepted = false;
        double ft = fx;
        for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
            for (size_t j = 0; j < n; ++j) xt[j] = res.x[j] + t * d[j];
            ft = f(xt, gt);
            if (std::isfinite(ft) && ft <= fx + cfg.c1 * t * slope) {
                accepted = true;
                break;
            }
            t *= cfg.backtrack;
        }
        if (!accepted) {
            res.line_search_failed = true;
            return res;
        }

        std::vector<double> s(n), y(n);
        for (size_t j = 0; j < n; ++j) {
            s[j] = t * d[j];
            y[j] = gt[j] - g[j];
        }
        double sy = dot(s, y);
        if (sy > 1e-12 * std::sqrt(dot(s, s)) * std::sqrt(dot(y, y))) {
            S.push_back(std::move(s));
            Y.push_back(std::move(y));
            rho.push_back(1.0 / sy);
            if (static_cast<int>(S.size()) > cfg.memory) {
                S.pop_front();
                Y.pop_front();
                rho.pop_front();
            }
        }

        res.x = xt;
        fx = ft;
        g = gt;
        res.loss_history.push_back(fx);
        res.iterations = iter;
        if (cfg.on_iterate && !cfg.on_iterate(iter, res.x, fx)) {
            res.stopped_by_callback = true;
            break;
        }
        if (inf_norm(g) <= cfg.grad_tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

} // namespace dmplug
