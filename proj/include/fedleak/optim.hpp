#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedleak/tensor.hpp"

namespace fedleak::optim {

enum class OptKind { kLbfgs, kAdam, kSgd };

struct OptimizerConfig {
    OptKind kind = OptKind::kLbfgs;
    int max_iters = 200;
    double lr = 1.0;  // initial line-search step for L-BFGS, step size for Adam
    int lbfgs_history = 10;
    double armijo_c = 1e-4;
    double backtrack_shrink = 0.5;
    int max_backtracks = 20;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double tolerance = 1e-10;  // stop when the gradient norm drops below this

    void validate() const;
};

/// f(x) only; used by the line search.
using ValueFn = std::function<double(std::span<const Tensor>)>;
/// f(x) and its gradient (same tensor shapes as x).
using ValueGradFn = std::function<double(std::span<const Tensor>, std::vector<Tensor>&)>;
/// Observer invoked once per iteration with the current iterate.
using IterCallback = std::function<void(int, std::span<const Tensor>)>;

struct MinimizeResult {
    std::vector<Tensor> x;
    std::vector<double> trace;  // loss at each visited iterate, in order
    int iterations = 0;         // equals trace.size()
    bool converged = false;     // gradient tolerance reached
    bool stalled = false;       // line search could not make progress
};

/// Limited-memory BFGS with two-loop recursion and backtracking Armijo line
/// search. Tensors listed in `clamp01` are projected onto [0,1] after every
/// accepted step (trial points are evaluated already projected, so recorded
/// losses are monotone non-increasing). Aborts with OptimAbort on a
/// non-finite loss or gradient at an iterate.
MinimizeResult lbfgs_minimize(const ValueGradFn& fg, const ValueFn& f, std::vector<Tensor> x0,
                              const OptimizerConfig& cfg, const std::vector<bool>& clamp01 = {},
                              const IterCallback& cb = {});

/// Adam with bias correction; same stopping rules and trace contract.
MinimizeResult adam_minimize(const ValueGradFn& fg, std::vector<Tensor> x0,
                             const OptimizerConfig& cfg, const std::vector<bool>& clamp01 = {},
                             const IterCallback& cb = {});

/// p' = p - lr * g, elementwise.
Tensor sgd_step(const Tensor& p, const Tensor& g, float lr);

}  // namespace fedleak::optim
