#pragma once

// Shared oracles for the test suite. The gradient oracle differentiates by
// central differences on forward evaluations only, so it stays independent of
// the tape's backward pass.

#include <dmplug/rng.hpp>
#include <dmplug/tensor.hpp>

#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

using Values = std::vector<std::vector<double>>;

// forward-only scalar evaluation of a function of several value vectors
using ForwardFn = std::function<double(const Values&)>;

inline Values fd_grad(const ForwardFn& f, Values at, double h = 1e-6) {
    Values g(at.size());
    for (size_t vi = 0; vi < at.size(); ++vi) {
        g[vi].resize(at[vi].size());
        for (size_t i = 0; i < at[vi].size(); ++i) {
            double keep = at[vi][i];
            at[vi][i] = keep + h;
            double fp = f(at);
            at[vi][i] = keep - h;
            double fm = f(at);
            at[vi][i] = keep;
            g[vi][i] = (fp - fm) / (2.0 * h);
        }
    }
    return g;
}

inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double dn = 0.0, an = 0.0, bn = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        dn += d * d;
        an += a[i] * a[i];
        bn += b[i] * b[i];
    }
    return std::sqrt(dn) / (std::sqrt(an) + std::sqrt(bn) + 1e-300);
}

inline std::vector<double> random_vec(dmplug::Rng& rng, size_t n, double lo,
                                      double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return v;
}

// Builds leaves for every value vector, runs the supplied graph builder, and
// returns the tape gradients next to the loss value.
struct TapeEval {
    double loss;
    Values grads;
};

using GraphFn = std::function<dmplug::Tensor(const std::vector<dmplug::Tensor>&)>;

inline TapeEval tape_grad(const GraphFn& build,
                          const std::vector<dmplug::Shape>& shapes,
                          const Values& at) {
    dmplug::Tape tape;
    std::vector<dmplug::Tensor> leaves;
    for (size_t i = 0; i < at.size(); ++i)
        leaves.push_back(tape.leaf(shapes[i], at[i]));
    dmplug::Tensor loss = build(leaves);
    tape.backward(loss);
    TapeEval r;
    r.loss = loss.item();
    for (const auto& l : leaves) r.grads.push_back(tape.grad(l));
    return r;
}

// Forward twin of tape_grad for the finite-difference side: same graph builder
// applied to constants.
inline ForwardFn forward_of(const GraphFn& build,
                            const std::vector<dmplug::Shape>& shapes) {
    return [build, shapes](const Values& at) {
        std::vector<dmplug::Tensor> consts;
        for (size_t i = 0; i < at.size(); ++i)
            consts.push_back(dmplug::Tensor::from_data(shapes[i], at[i]));
        return build(consts).item();
    };
}

// One-line gradient check for a graph of several inputs: max relative error
// between the tape gradient and central differences, taken over inputs.
inline double grad_check(const GraphFn& build,
                         const std::vector<dmplug::Shape>& shapes, const Values& at,
                         double h = 1e-6) {
    TapeEval te = tape_grad(build, shapes, at);
    Values fd = fd_grad(forward_of(build, shapes), at, h);
    double worst = 0.0;
    for (size_t i = 0; i < fd.size(); ++i)
        worst = std::max(worst, rel_err(te.grads[i], fd[i]));
    return worst;
}

} // namespace testutil
