#include "fedleak/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "fedleak/error.hpp"

namespace fedleak::optim {

namespace {

// Flat double view of a tensor list. Optimizer state lives in doubles (an
// accumulator in the same sense as dot products); objective evaluations see
// float32 tensors.
struct Flat {
    std::vector<std::size_t> offsets;  // per-tensor start
    std::vector<std::size_t> sizes;
    std::vector<std::vector<std::size_t>> dims;
    std::size_t total = 0;

    explicit Flat(std::span<const Tensor> ts) {
        for (const auto& t : ts) {
            offsets.push_back(total);
            sizes.push_back(t.size());
            dims.push_back(t.dims());
            total += t.size();
        }
    }

    std::vector<double> pack(std::span<const Tensor> ts) const {
        std::vector<double> v(total);
        for (std::size_t k = 0; k < ts.size(); ++k)
            for (std::size_t i = 0; i < sizes[k]; ++i) v[offsets[k] + i] = double(ts[k][i]);
        return v;
    }

    std::vector<Tensor> unpack(const std::vector<double>& v) const {
        std::vector<Tensor> ts;
        ts.reserve(dims.size());
        for (std::size_t k = 0; k < dims.size(); ++k) {
            Tensor t(dims[k]);
            for (std::size_t i = 0; i < sizes[k]; ++i) t[i] = float(v[offsets[k] + i]);
            ts.push_back(std::move(t));
        }
        return ts;
    }

    void clamp(std::vector<double>& v, const std::vector<bool>& clamp01) const {
        if (clamp01.empty()) return;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            if (k >= clamp01.size() || !clamp01[k]) continue;
            for (std::size_t i = 0; i < sizes[k]; ++i) {
                double& x = v[offsets[k] + i];
                x = std::min(1.0, std::max(0.0, x));
            }
        }
    }
};

double dot_d(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm_d(const std::vector<double>& a) { return std::sqrt(dot_d(a, a)); }

bool finite_all(const std::vector<double>& a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

std::vector<double> grads_to_flat(const Flat& flat, const std::vector<Tensor>& g) {
    if (g.size() != flat.sizes.size()) throw ShapeError("optimizer: gradient count mismatch");
    std::vector<double> v(flat.total);
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (g[k].size() != flat.sizes[k])
            throw ShapeError("optimizer: gradient shape mismatch at tensor " + std::to_string(k));
        for (std::size_t i = 0; i < flat.sizes[k]; ++i) v[flat.offsets[k] + i] = double(g[k][i]);
    }
    return v;
}

}  // namespace

void OptimizerConfig::validate() const {
    if (max_iters < 1) throw ValidationError("optimizer: max_iters must be >= 1");
    if (lr <= 0.0) throw ValidationError("optimizer: lr must be > 0");
    if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0 || adam_beta2 <= 0.0 || adam_beta2 >= 1.0)
        throw ValidationError("optimizer: betas must lie in (0, 1)");
    if (lbfgs_history < 1) throw ValidationError("optimizer: lbfgs_history must be >= 1");
}

MinimizeResult lbfgs_minimize(const ValueGradFn& fg, const ValueFn& f, std::vector<Tensor> x0,
                              const OptimizerConfig& cfg, const std::vector<bool>& clamp01,
                              const IterCallback& cb) {
    cfg.validate();
    MinimizeResult res;
    Flat flat(x0);
    std::vector<double> x = flat.pack(x0);
    flat.clamp(x, clamp01);

    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;

    std::vector<Tensor> xt = flat.unpack(x);
    std::vector<Tensor> gt;
    double fx = fg(xt, gt);
    std::vector<double> g = grads_to_flat(flat, gt);

    for (int it = 0; it < cfg.max_iters; ++it) {
        if (!std::isfinite(fx) || !finite_all(g))
            throw OptimAbort("lbfgs: non-finite loss or gradient at iteration " + std::to_string(it));
        res.trace.push_back(fx);
        res.iterations = it + 1;
        if (cb) cb(it, xt);
        if (norm_d(g) < cfg.tolerance) {
            res.converged = true;
            break;
        }

        // two-loop recursion
        std::vector<double> q = g;
        const std::size_t m = s_hist.size();
        std::vector<double> alpha(m);
        for (std::size_t i = m; i-- > 0;) {
            alpha[i] = rho_hist[i] * dot_d(s_hist[i], q);
            for (std::size_t j = 0; j < q.size(); ++j) q[j] -= alpha[i] * y_hist[i][j];
        }
        // First-iteration scaling 1/||g|| makes the trial step unit length
        // regardless of the objective's scale; afterwards the newest pair
        // sets the metric.
        const double gamma = m > 0 ? dot_d(s_hist.back(), y_hist.back()) /
                                         dot_d(y_hist.back(), y_hist.back())
                                   : 1.0 / norm_d(g);
        for (double& v : q) v *= gamma;
        for (std::size_t i = 0; i < m; ++i) {
            const double beta = rho_hist[i] * dot_d(y_hist[i], q);
            for (std::size_t j = 0; j < q.size(); ++j) q[j] += (alpha[i] - beta) * s_hist[i][j];
        }
        std::vector<double> dir(q.size());
        for (std::size_t j = 0; j < q.size(); ++j) dir[j] = -q[j];

        // Backtracking Armijo on projected trial points. The decrease test
        // uses the actual step taken (trial - x), which equals alpha*dir
        // whenever the projection is inactive.
        auto try_direction = [&](const std::vector<double>& d, std::vector<double>& out_x,
                                 double& out_f) -> bool {
            double alpha_step = cfg.lr;
            for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
                std::vector<double> trial(x.size());
                for (std::size_t j = 0; j < x.size(); ++j) trial[j] = x[j] + alpha_step * d[j];
                flat.clamp(trial, clamp01);
                std::vector<double> step(x.size());
                for (std::size_t j = 0; j < x.size(); ++j) step[j] = trial[j] - x[j];
                const double gts = dot_d(g, step);
                if (gts < 0.0) {
                    std::vector<Tensor> tt = flat.unpack(trial);
                    const double ft = f(tt);
                    if (std::isfinite(ft) && ft <= fx + cfg.armijo_c * gts) {
                        out_x = std::move(trial);
                        out_f = ft;
                        return true;
                    }
                }
                alpha_step *= cfg.backtrack_shrink;
            }
            return false;
        };

        std::vector<double> x_new;
        double f_new = 0.0;
        bool ok = try_direction(dir, x_new, f_new);
        if (!ok && m > 0) {
            // fall back to steepest descent once; stale curvature can make
            // the L-BFGS direction unusable after a projection
            std::vector<double> sd(g.size());
            for (std::size_t j = 0; j < g.size(); ++j) sd[j] = -g[j];
            ok = try_direction(sd, x_new, f_new);
        }
        if (!ok) {
            res.stalled = true;
            break;
        }

        std::vector<Tensor> xt_new = flat.unpack(x_new);
        std::vector<Tensor> gt_new;
        const double fx_new = fg(xt_new, gt_new);
        std::vector<double> g_new = grads_to_flat(flat, gt_new);

        std::vector<double> s(x.size()), yv(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) {
            s[j] = x_new[j] - x[j];
            yv[j] = g_new[j] - g[j];
        }
        // Powell damping: Armijo-only steps do not guarantee positive
        // curvature, and skipping pairs outright freezes the scaling on
        // valley-shaped objectives. Blend y toward B0 s to keep s'y
        // safely positive, then apply the SPD skip guard.
        double ys = dot_d(yv, s);
        const double sBs = dot_d(s, s) / gamma;
        if (ys < 0.2 * sBs) {
            const double theta = 0.8 * sBs / (sBs - ys);
            for (std::size_t j = 0; j < yv.size(); ++j)
                yv[j] = theta * yv[j] + (1.0 - theta) * s[j] / gamma;
            ys = dot_d(yv, s);
        }
#ifdef FEDLEAK_LBFGS_TRACE
        std::fprintf(stderr, "it %3d f=%.6e fn=%.6e |g|=%.3e |d|=%.3e |s|=%.3e ys=%.3e m=%zu\n",
                     it, fx, fx_new, norm_d(g), norm_d(dir), norm_d(s), ys, s_hist.size());
#endif
        if (ys > 1e-10) {  // keep the inverse-Hessian approximation SPD
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(yv));
            rho_hist.push_back(1.0 / ys);
            if (int(s_hist.size()) > cfg.lbfgs_history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        x = std::move(x_new);
        xt = std::move(xt_new);
        fx = fx_new;
        g = std::move(g_new);
    }

    res.x = flat.unpack(x);
    return res;
}

MinimizeResult adam_minimize(const ValueGradFn& fg, std::vector<Tensor> x0,
                             const OptimizerConfig& cfg, const std::vector<bool>& clamp01,
                             const IterCallback& cb) {
    cfg.validate();
    MinimizeResult res;
    Flat flat(x0);
    std::vector<double> x = flat.pack(x0);
    flat.clamp(x, clamp01);
    std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0);

    for (int it = 0; it < cfg.max_iters; ++it) {
        std::vector<Tensor> xt = flat.unpack(x);
        std::vector<Tensor> gt;
        const double fx = fg(xt, gt);
        std::vector<double> g = grads_to_flat(flat, gt);
        if (!std::isfinite(fx) || !finite_all(g))
            throw OptimAbort("adam: non-finite loss or gradient at iteration " + std::to_string(it));
        res.trace.push_back(fx);
        res.iterations = it + 1;
        if (cb) cb(it, xt);
        if (norm_d(g) < cfg.tolerance) {
            res.converged = true;
            break;
        }

        const double b1t = 1.0 - std::pow(cfg.adam_beta1, it + 1);
        const double b2t = 1.0 - std::pow(cfg.adam_beta2, it + 1);
        for (std::size_t j = 0; j < x.size(); ++j) {
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
            const double mhat = m[j] / b1t;
            const double vhat = v[j] / b2t;
            x[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
        flat.clamp(x, clamp01);
    }

    res.x = flat.unpack(x);
    return res;
}

Tensor sgd_step(const Tensor& p, const Tensor& g, float lr) {
    require_same_shape(p, g, "sgd_step");
    Tensor out(p.dims());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] - lr * g[i];
    return out;
}

}  // namespace fedleak::optim
