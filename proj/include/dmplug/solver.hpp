#pragma once

#include "dmplug/metrics.hpp"
#include "dmplug/operators.hpp"
#include "dmplug/optim.hpp"
#include "dmplug/reverse.hpp"

#include <deque>
#include <optional>

namespace dmplug {

// The variables a solve optimizes: the seed driving the reverse chain, plus
// kernel logits and a tilt field when the operator is blind.
struct SeedVariables {
    Tensor z;
    std::optional<Tensor> kernel_logits;
    std::optional<Tensor> tilt;
};

// z ~ N(0,I); logits start at zero (uniform kernel); tilt starts at a
// small-magnitude Gaussian field (sd 0.01 pixels)
SeedVariables init_seed_variables(const ReverseProcess& rp,
                                  const ForwardOperator& op, Rng& rng);

struct EsConfig {
    bool enabled = false;
    int window = 10;
    int patience = 100;
};

// wide window and patience for the nonlinear deblurring task, the standard
// pair for everything else
EsConfig default_es_config(const ForwardOperator& op);

// Windowed-moving-variance early stopping. Reconstructions are pushed each
// iteration; once the window fills, their variance is tracked and the best
// (lowest-variance) snapshot kept. push() returns false when the minimum has
// stagnated for `patience` consecutive windows.
class EsState {
public:
    explicit EsState(const EsConfig& cfg);

    bool push(int index, const std::vector<double>& recon,
              const SeedVariables& vars);

    double last_var() const { return last_var_; }
    double var_min() const { return var_min_; }
    int best_index() const { return best_index_; }
    const std::vector<double>& best_recon() const { return best_recon_; }
    const std::optional<SeedVariables>& best_vars() const { return best_vars_; }

private:
    EsConfig cfg_;
    std::deque<std::vector<double>> window_;
    std::vector<double> running_sum_;
    double running_sq_ = 0.0;
    double last_var_, var_min_;
    int stagnation_ = 0;
    int best_index_ = -1;
    std::vector<double> best_recon_;
    std::optional<SeedVariables> best_vars_;
};

enum class StopReason { MaxIters, EsTriggered };

// Per-iteration records; NaN marks rows where a metric was not evaluated.
struct SolveTrace {
    std::vector<double> loss;
    std::vector<double> psnr;
    std::vector<double> ssim;
    std::vector<double> var;
    std::vector<BandErrors> fbe; // filled only when fbe recording is on
};

struct SolveConfig {
    int max_iters = 2000;
    enum class Opt { Adam, Lbfgs } optimizer = Opt::Adam;
    double lr_z = 1e-2;
    double lr_logits = 1e-1;
    double lr_tilt = 1e-7;
    EsConfig es;
    uint64_t seed = 0;
    std::optional<Tensor> ground_truth; // enables psnr/ssim columns
    int metrics_every = 1;
    bool record_fbe = false; // needs ground truth on a power-of-two square
    LbfgsConfig lbfgs;       // its max_iters/on_iterate are overridden
};

struct SolveResult {
    Tensor final_recon;
    Tensor best_recon; // early-stopping selection; final when ES is off
    SeedVariables final_vars;
    SeedVariables best_vars;
    std::optional<Tensor> recovered_kernel; // softmax of the best logits
    std::optional<Tensor> recovered_tilt;
    SolveTrace trace;
    StopReason stop_reason = StopReason::MaxIters;
    int iterations = 0;
    int best_index = -1;
};

// Numerical failure mid-solve; carries everything recorded up to the abort.
struct SolveError : std::runtime_error {
    SolveResult partial;
    SolveError(const std::string& what, SolveResult p)
        : std::runtime_error(what), partial(std::move(p)) {}
};

// mse(y, A(R(z))); pass logits/tilt to route a blind operator's trainable
// parameters through the tape
Tensor objective(const Tensor& y, const ForwardOperator& op,
                 const ReverseProcess& rp, const Tensor& z,
                 const Tensor* logits = nullptr, const Tensor* tilt = nullptr);

// seed-space optimization for the non-blind operators
SolveResult solve(const Tensor& y, const ForwardOperator& op,
                  const ReverseProcess& rp, const SolveConfig& cfg);
// joint seed/kernel(/tilt) optimization for the blind operators
SolveResult solve_blind(const Tensor& y, const ForwardOperator& op,
                        const ReverseProcess& rp, const SolveConfig& cfg);

} // namespace dmplug
