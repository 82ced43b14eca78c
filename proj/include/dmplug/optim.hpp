#pragma once

#include "dmplug/tensor.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmplug {

struct OptimError : std::runtime_error {
    std::string group;
    OptimError(std::string grp, const std::string& what)
        : std::runtime_error(what + " (group '" + grp + "')"), group(std::move(grp)) {}
};

// Named set of parameter tensors updated at a shared learning rate. The
// tensors are persistent off-tape value holders; per-iteration leaves are
// seeded from them and the optimizer writes the update back in place.
struct ParamGroup {
    std::string name;
    std::vector<Tensor> tensors;
    double lr = 1e-3;
};

// grads[group][tensor] aligned with the group layout
using GroupGrads = std::vector<std::vector<std::vector<double>>>;

// ADAM with bias correction. Moment buffers are keyed by position, so the
// group/tensor layout must stay fixed across steps.
class AdamState {
public:
    AdamState(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(std::vector<ParamGroup>& groups, const GroupGrads& grads);
    int64_t steps_taken() const { return t_; }

private:
    double b1_, b2_, eps_;
    int64_t t_ = 0;
    GroupGrads m_, v_;
};

struct LbfgsConfig {
    int max_iters = 100;
    int memory = 10;
    double step_scale = 1.0; // initial trial step for each line search
    double grad_tol = 1e-10; // infinity-norm stopping threshold
    double c1 = 1e-4;        // Armijo slope fraction
    double backtrack = 0.5;
    int max_backtracks = 30;
    // called after each accepted step; return false to stop the run
    std::function<bool(int iter, const std::vector<double>& x, double loss)>
        on_iterate;
};

struct LbfgsResult {
    std::vector<double> x;
    std::vector<double> loss_history; // accepted values, first entry is f(x0)
    int iterations = 0;
    bool converged = false;
    bool line_search_failed = false;
    bool stopped_by_callback = false;
};

// evaluates f(x) and writes the gradient into the second argument
using LbfgsObjective =
    std::function<double(const std::vector<double>&, std::vector<double>&)>;

// Limited-memory BFGS with two-loop recursion and Armijo backtracking.
// A failed line search keeps the best iterate seen and sets the flag.
LbfgsResult lbfgs_minimize(const LbfgsObjective& f, std::vector<double> x0,
                           const LbfgsConfig& cfg);

} // namespace dmplug
