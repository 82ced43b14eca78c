#include "dmplug/solver.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace dmplug {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

bool is_blind(const ForwardOperator& op) {
    return std::holds_alternative<BlindBlur>(op) ||
           std::holds_alternative<TiltThenBlur>(op);
}

SeedVariables copy_vars(const SeedVariables& v) {
    SeedVariables c;
    c.z = Tensor::from_data(v.z.shape(), v.z.data());
    if (v.kernel_logits)
        c.kernel_logits =
            Tensor::from_data(v.kernel_logits->shape(), v.kernel_logits->data());
    if (v.tilt) c.tilt = Tensor::from_data(v.tilt->shape(), v.tilt->data());
    return c;
}

void validate_common(const Tensor& y, const ReverseProcess& rp,
                     const SolveConfig& cfg) {
    if (!y.defined() || y.on_tape())
        throw ContractError("solve: measurement must be a plain constant tensor");
    if (rp.data_shape.empty())
        throw ContractError("solve: reverse process must carry a data shape");
    if (cfg.max_iters < 0)
        throw ContractError("solve: max_iters must be non-negative");
    if (cfg.metrics_every < 1)
        throw ContractError("solve: metrics_every must be positive");
    if (cfg.ground_truth && cfg.ground_truth->shape() != rp.data_shape)
        throw ContractError("solve: ground truth shape " +
                            shape_str(cfg.ground_truth->shape()) +
                            " does not match data shape " +
                            shape_str(rp.data_shape));
    if (cfg.record_fbe && !cfg.ground_truth)
        throw ContractError("solve: band-error recording requires a ground truth");
}

// one trace row of quality metrics; NaN wherever nothing was evaluated
void record_metrics(SolveTrace& tr, const SolveConfig& cfg,
                    const std::vector<double>& recon, const Shape& shape,
                    int row) {
    double p = kNan, s = kNan;
    BandErrors be;
    be.band.fill(kNan);
    if (cfg.ground_truth && row % cfg.metrics_every == 0) {
        Tensor r = Tensor::from_data(shape, recon);
        p = psnr(r, *cfg.ground_truth);
        if (shape.size() == 2 && shape[0] >= 11 && shape[1] >= 11)
            s = ssim(r, *cfg.ground_truth);
        if (cfg.record_fbe) be = fbe(r, *cfg.ground_truth);
    }
    tr.psnr.push_back(p);
    tr.ssim.push_back(s);
    if (cfg.record_fbe) tr.fbe.push_back(be);
}

// shared result assembly; recon_now, when given, spares the extra forward pass
void finish(SolveResult& res, SeedVariables vars, const ReverseProcess& rp,
            const std::optional<EsState>& es, bool blind,
            const std::vector<double>* recon_now) {
    res.iterations = static_cast<int>(res.trace.loss.size());
    res.final_recon = recon_now
                          ? Tensor::from_data(rp.data_shape, *recon_now)
                          : reverse_fn(rp, vars.z);
    res.final_vars = std::move(vars);
    if (es && es->best_index() >= 0) {
        res.best_index = es->best_index();
        res.best_recon = Tensor::from_data(rp.data_shape, es->best_recon());
        res.best_vars = *es->best_vars();
    } else {
        res.best_index = res.iterations - 1;
        res.best_recon = res.final_recon;
        res.best_vars = res.final_vars;
    }
    if (blind) {
        if (res.best_vars.kernel_logits)
            res.recovered_kernel = softmax_kernel(*res.best_vars.kernel_logits);
        if (res.best_vars.tilt) res.recovered_tilt = *res.best_vars.tilt;
    }
}

SolveResult run_adam(const Tensor& y, const ForwardOperator& op,
                     const ReverseProcess& rp, const SolveConfig& cfg) {
    const bool blind = is_blind(op);
    Rng root(cfg.seed);
    SeedVariables vars = init_seed_variables(rp, op, root);

    std::vector<ParamGroup> groups;
    groups.push_back({"z", {vars.z}, cfg.lr_z});
    if (vars.kernel_logits)
        groups.push_back({"kernel", {*vars.kernel_logits}, cfg.lr_logits});
    if (vars.tilt) groups.push_back({"tilt", {*vars.tilt}, cfg.lr_tilt});
    AdamState adam;

    std::optional<EsState> es;
    if (cfg.es.enabled) es.emplace(cfg.es);

    SolveResult res;
    SolveTrace& tr = res.trace;
    std::vector<double> cur_recon;

    for (int e = 0; e < cfg.max_iters; ++e) {
        Tape tape;
        Tensor zl = tape.leaf(vars.z);
        Tensor bl, tl;
        TrainableOverrides ov;
        if (vars.kernel_logits) {
            bl = tape.leaf(*vars.kernel_logits);
            ov.kernel_logits = &bl;
        }
        if (vars.tilt) {
            tl = tape.leaf(*vars.tilt);
            ov.tilt = &tl;
        }
        Tensor r = reverse_fn(rp, zl);
        Tensor a = measure(op, r, ov);
        Tensor loss_t = mse(y, a);
        double lv = loss_t.item();
        cur_recon = r.data();

        tr.loss.push_back(lv);
        record_metrics(tr, cfg, cur_recon, rp.data_shape, e);
        if (!std::isfinite(lv)) {
            tr.var.push_back(kNan);
            finish(res, std::move(vars), rp, es, blind, &cur_recon);
            throw SolveError("solve: non-finite loss at iteration " +
                                 std::to_string(e),
                             std::move(res));
        }

        // The first row holds the untouched initialization; the update
        // sequence the stopper watches starts one row later.
        double var_v = kNan;
        bool keep_going = true;
        if (es && e >= 1) {
            keep_going = es->push(e, cur_recon, vars);
            var_v = es->last_var();
        }
        tr.var.push_back(var_v);
        if (!keep_going) {
            res.stop_reason = StopReason::EsTriggered;
            finish(res, std::move(vars), rp, es, blind, &cur_recon);
            return res;
        }

        tape.backward(loss_t);
        GroupGrads grads;
        grads.push_back({tape.grad(zl)});
        if (vars.kernel_logits) grads.push_back({tape.grad(bl)});
        if (vars.tilt) grads.push_back({tape.grad(tl)});
        try {
            adam.step(groups, grads);
        } catch (const OptimError& oe) {
            finish(res, std::move(vars), rp, es, blind, &cur_recon);
            throw SolveError(std::string("solve: ") + oe.what(),
                             std::move(res));
        }
    }

    res.stop_reason = StopReason::MaxIters;
    finish(res, std::move(vars), rp, es, blind, nullptr);
    return res;
}

SolveResult run_lbfgs(const Tensor& y, const ForwardOperator& op,
                      const ReverseProcess& rp, const SolveConfig& cfg) {
    Rng root(cfg.seed);
    SeedVariables vars = init_seed_variables(rp, op, root);

    std::optional<EsState> es;
    if (cfg.es.enabled) es.emplace(cfg.es);

    SolveResult res;
    SolveTrace& tr = res.trace;
    std::vector<double> last_recon; // reconstruction from the latest closure call

    LbfgsObjective f = [&](const std::vector<double>& xv,
                           std::vector<double>& g) {
        Tape tape;
        Tensor zl = tape.leaf(rp.data_shape, xv);
        Tensor r = reverse_fn(rp, zl);
        Tensor a = measure(op, r, {});
        Tensor lt = mse(y, a);
        last_recon = r.data();
        tape.backward(lt);
        g = tape.grad(zl);
        return lt.item();
    };

    // An accepted step's last closure call is the accepting trial itself, so
    // last_recon matches x exactly when the callback fires.
    bool stopped_es = false;
    LbfgsConfig lc = cfg.lbfgs;
    lc.max_iters = cfg.max_iters;
    lc.on_iterate = [&](int, const std::vector<double>& xcur, double fval) {
        int row = static_cast<int>(tr.loss.size());
        tr.loss.push_back(fval);
        record_metrics(tr, cfg, last_recon, rp.data_shape, row);
        double var_v = kNan;
        bool keep = true;
        if (es) {
            SeedVariables cur;
            cur.z = Tensor::from_data(rp.data_shape, xcur);
            keep = es->push(row, last_recon, cur);
            var_v = es->last_var();
        }
        tr.var.push_back(var_v);
        if (!keep) stopped_es = true;
        return keep;
    };

    LbfgsResult lr;
    try {
        lr = lbfgs_minimize(f, vars.z.data(), lc);
    } catch (const OptimError& oe) {
        finish(res, std::move(vars), rp, es, false, nullptr);
        throw SolveError(std::string("solve: ") + oe.what(), std::move(res));
    }
    vars.z = Tensor::from_data(rp.data_shape, lr.x);
    res.stop_reason =
        stopped_es ? StopReason::EsTriggered : StopReason::MaxIters;
    finish(res, std::move(vars), rp, es, false, nullptr);
    return res;
}

} // namespace

SeedVariables init_seed_variables(const ReverseProcess& rp,
                                  const ForwardOperator& op, Rng& rng) {
    if (rp.data_shape.empty())
        throw ContractError(
            "init_seed_variables: reverse process must carry a data shape");
    SeedVariables v;
    Rng rz = rng.derive("seed_z");
    v.z = draw_normal(rz, rp.data_shape);
    if (const auto* bb = std::get_if<BlindBlur>(&op)) {
        if (!bb->logits.defined())
            throw ContractError(
                "init_seed_variables: blind operator needs a logits template");
        v.kernel_logits = Tensor::zeros(bb->logits.shape());
    } else if (const auto* tb = std::get_if<TiltThenBlur>(&op)) {
        if (!tb->logits.defined() || !tb->tilt.defined())
            throw ContractError("init_seed_variables: tilted operator needs "
                                "logits and tilt templates");
        v.kernel_logits = Tensor::zeros(tb->logits.shape());
        Rng rt = rng.derive("init_tilt");
        Tensor t = Tensor::zeros(tb->tilt.shape());
        for (auto& x : t.mutable_data()) x = 0.01 * rt.normal();
        v.tilt = t;
    }
    return v;
}

EsConfig default_es_config(const ForwardOperator& op) {
    EsConfig c;
    c.enabled = true;
    if (std::holds_alternative<NonlinearBlur>(op)) {
        c.window = 50;
        c.patience = 300;
    }
    return c;
}

EsState::EsState(const EsConfig& cfg)
    : cfg_(cfg), last_var_(kNan),
      var_min_(std::numeric_limits<double>::infinity()) {
    if (cfg.window < 2)
        throw ContractError("early stopping: window must be at least 2");
    if (cfg.patience < 1)
        throw ContractError("early stopping: patience must be at least 1");
}

bool EsState::push(int index, const std::vector<double>& recon,
                   const SeedVariables& vars) {
    if (running_sum_.empty()) running_sum_.assign(recon.size(), 0.0);
    if (recon.size() != running_sum_.size())
        throw ContractError("early stopping: reconstruction size changed");

    window_.push_back(recon);
    double sq = 0.0;
    for (size_t i = 0; i < recon.size(); ++i) {
        running_sum_[i] += recon[i];
        sq += recon[i] * recon[i];
    }
    running_sq_ += sq;
    if (static_cast<int>(window_.size()) > cfg_.window) {
        const std::vector<double>& old = window_.front();
        double osq = 0.0;
        for (size_t i = 0; i < old.size(); ++i) {
            running_sum_[i] -= old[i];
            osq += old[i] * old[i];
        }
        running_sq_ -= osq;
        window_.pop_front();
    }
    if (static_cast<int>(window_.size()) < cfg_.window) return true;

    const double w = cfg_.window;
    double mean_norm2 = 0.0;
    for (double s : running_sum_) mean_norm2 += (s / w) * (s / w);
    double var = running_sq_ / w - mean_norm2;
    if (var < 0.0) var = 0.0; // cancellation guard
    last_var_ = var;
    if (var < var_min_) {
        var_min_ = var;
        best_index_ = index;
        best_recon_ = recon;
        best_vars_ = copy_vars(vars);
        stagnation_ = 0;
    } else {
        ++stagnation_;
    }
    return stagnation_ < cfg_.patience;
}

Tensor objective(const Tensor& y, const ForwardOperator& op,
                 const ReverseProcess& rp, const Tensor& z,
                 const Tensor* logits, const Tensor* tilt) {
    TrainableOverrides ov;
    ov.kernel_logits = logits;
    ov.tilt = tilt;
    Tensor r = reverse_fn(rp, z);
    Tensor a = measure(op, r, ov);
    return mse(y, a);
}

SolveResult solve(const Tensor& y, const ForwardOperator& op,
                  const ReverseProcess& rp, const SolveConfig& cfg) {
    validate_common(y, rp, cfg);
    if (is_blind(op))
        throw ContractError("solve: operator '" + std::string(operator_name(op)) +
                            "' has trainable parameters; use solve_blind");
    if (cfg.optimizer == SolveConfig::Opt::Lbfgs)
        return run_lbfgs(y, op, rp, cfg);
    return run_adam(y, op, rp, cfg);
}

SolveResult solve_blind(const Tensor& y, const ForwardOperator& op,
                        const ReverseProcess& rp, const SolveConfig& cfg) {
    validate_common(y, rp, cfg);
    if (!is_blind(op))
        throw ContractError("solve_blind: operator '" +
                            std::string(operator_name(op)) +
                            "' has no trainable parameters; use solve");
    if (cfg.optimizer == SolveConfig::Opt::Lbfgs)
        throw ContractError(
            "solve_blind: the quasi-Newton path only optimizes the seed; "
            "use the adaptive-moment optimizer for blind operators");
    return run_adam(y, op, rp, cfg);
}

} // namespace dmplug
