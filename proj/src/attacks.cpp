#include "fedleak/attacks.hpp"

#include <chrono>
#include <cmath>

#include "fedleak/autodiff.hpp"
#include "fedleak/data.hpp"
#include "fedleak/error.hpp"
#include "fedleak/metrics.hpp"
#include "fedleak/rng.hpp"

namespace fedleak::attacks {

using ad::NodePtr;

std::string method_name(AttackMethod m) {
    switch (m) {
        case AttackMethod::kDlg: return "dlg";
        case AttackMethod::kCpl: return "cpl";
        case AttackMethod::kGradInv: return "gradinv";
    }
    return "?";
}

AttackMethod method_from_name(const std::string& name) {
    if (name == "dlg") return AttackMethod::kDlg;
    if (name == "cpl") return AttackMethod::kCpl;
    if (name == "gradinv") return AttackMethod::kGradInv;
    throw ValidationError("unknown attack method '" + name + "'");
}

void AttackConfig::validate() const {
    optimizer.validate();
    if (success_ssim <= 0.0 || success_ssim > 1.0)
        throw ValidationError("attack: success_ssim must lie in (0, 1]");
    if (tv_weight < 0.0) throw ValidationError("attack: tv_weight must be >= 0");
    if (checkpoint_every < 1) throw ValidationError("attack: checkpoint_every must be >= 1");
}

AttackConfig default_config(AttackMethod m) {
    AttackConfig cfg;
    cfg.method = m;
    switch (m) {
        case AttackMethod::kDlg:
            cfg.optimizer.kind = optim::OptKind::kLbfgs;
            cfg.optimizer.max_iters = 200;
            cfg.optimizer.lr = 1.0;
            cfg.init = InitKind::kGaussian;
            break;
        case AttackMethod::kCpl:
            cfg.optimizer.kind = optim::OptKind::kLbfgs;
            cfg.optimizer.max_iters = 200;
            cfg.optimizer.lr = 1.0;
            cfg.init = InitKind::kPatterned;
            break;
        case AttackMethod::kGradInv:
            cfg.optimizer.kind = optim::OptKind::kAdam;
            cfg.optimizer.max_iters = 24000;
            cfg.optimizer.lr = 0.1;
            cfg.init = InitKind::kGaussian;
            break;
    }
    return cfg;
}

namespace {

void check_target_shapes(const nn::ParamSet& params, const nn::GradientUpdate& g_target) {
    if (g_target.entries.size() != params.entries.size())
        throw ShapeError("attack: g_target entry count does not match parameters");
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
        if (!g_target.entries[i].second.same_shape(params.entries[i].second)) {
            throw ShapeError("attack: g_target shape mismatch at '" + params.entries[i].first +
                             "': " + g_target.entries[i].second.shape_str() + " vs " +
                             params.entries[i].second.shape_str());
        }
    }
}

// L2 mismatch in pure double from gradient values; both the line search and
// the gradient evaluation report this same number, so recorded traces are
// exactly the optimizer's decision values.
double l2_mismatch(std::span<const NodePtr> inner, const nn::GradientUpdate& target) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner.size(); ++i) {
        const Tensor& g = inner[i]->value;
        const Tensor& t = target.entries[i].second;
        for (std::size_t j = 0; j < g.size(); ++j) {
            const double d = double(g[j]) - double(t[j]);
            s += d * d;
        }
    }
    return s;
}

struct CosineParts {
    double dot = 0.0;
    double dummy_sq = 0.0;
};

CosineParts cosine_parts(std::span<const NodePtr> inner, const nn::GradientUpdate& target) {
    CosineParts p;
    for (std::size_t i = 0; i < inner.size(); ++i) {
        const Tensor& g = inner[i]->value;
        const Tensor& t = target.entries[i].second;
        for (std::size_t j = 0; j < g.size(); ++j) {
            p.dot += double(g[j]) * double(t[j]);
            p.dummy_sq += double(g[j]) * double(g[j]);
        }
    }
    return p;
}

Tensor sample_init_image(const nn::ModelSpec& spec, const AttackConfig& cfg) {
    if (cfg.init_image.has_value()) return *cfg.init_image;
    Tensor x({spec.channels, spec.height, spec.width});
    CounterRng rng(seed_hash({0x696e6974ULL, cfg.seed}));
    switch (cfg.init) {
        case InitKind::kGaussian:
            for (std::size_t i = 0; i < x.size(); ++i)
                x[i] = std::min(1.0f, std::max(0.0f, rng.next_gaussian(0.5f, 0.1f)));
            break;
        case InitKind::kUniform:
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.next_uniform(0.0f, 1.0f);
            break;
        case InitKind::kConstant:
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = cfg.init_constant;
            break;
        case InitKind::kPatterned:
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5f;
            break;
    }
    return x;
}

Tensor to_display(const Tensor& recon, const EvalContext& eval) {
    Tensor img = recon;
    if (!eval.mean.empty()) img = data::denormalize(img, eval.mean, eval.stdev);
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = std::min(1.0f, std::max(0.0f, img[i]));
    return img;
}

struct AttackEngine {
    const nn::GradientUpdate& target;
    const nn::ParamSet& params;
    const nn::ModelSpec& spec;
    const AttackConfig& cfg;
    std::vector<NodePtr> pnodes;  // reused across evaluations

    // Only DLG optimizes the label; the others fix it to `label_node`.
    bool optimize_label = false;
    Tensor fixed_label;

    explicit AttackEngine(const nn::GradientUpdate& t, const nn::ParamSet& p,
                          const nn::ModelSpec& s, const AttackConfig& c)
        : target(t), params(p), spec(s), cfg(c), pnodes(nn::param_nodes(p)) {
        check_target_shapes(p, t);
    }

    // Builds the forward + inner-gradient graph; differentiable controls
    // whether the backward pass records (needed only when the caller will
    // differentiate the mismatch).
    std::vector<NodePtr> inner_grads(const NodePtr& x, const NodePtr& y, bool differentiable) {
        const std::pair<NodePtr, NodePtr> batch[] = {{x, y}};
        NodePtr loss = nn::build_loss_graph(pnodes, spec, batch);
        return ad::grad(loss, pnodes, differentiable);
    }

    // value + gradient of the L2 matching loss w.r.t. the dummy tensors
    double l2_value_and_grad(std::span<const Tensor> xs, std::vector<Tensor>& grads) {
        NodePtr x = ad::variable(xs[0]);
        NodePtr ylogits = optimize_label ? ad::variable(xs[1]) : nullptr;
        NodePtr y = optimize_label ? ad::softmax(ylogits) : ad::constant(fixed_label);
        auto inner = inner_grads(x, y, /*differentiable=*/true);
        NodePtr mismatch;
        for (std::size_t i = 0; i < inner.size(); ++i) {
            NodePtr d = ad::sub(inner[i], ad::constant(target.entries[i].second));
            NodePtr term = ad::sum(ad::mul(d, d));
            mismatch = mismatch ? ad::add(mismatch, term) : term;
        }
        std::vector<NodePtr> wrt = {x};
        if (optimize_label) wrt.push_back(ylogits);
        grads = ad::grad_values(mismatch, wrt);
        return l2_mismatch(inner, target);
    }

    // Value-only path: inner gradients computed, nothing retained for a
    // second differentiation. Used by the line search.
    double l2_value(std::span<const Tensor> xs) {
        NodePtr x = ad::variable(xs[0]);
        NodePtr y = optimize_label ? ad::softmax(ad::variable(xs[1])) : ad::constant(fixed_label);
        auto inner = inner_grads(x, y, /*differentiable=*/false);
        return l2_mismatch(inner, target);
    }

    // GradInv objective: 1 - cos(grad(dummy), g_target) + tv_weight * TV(x).
    double cosine_value_and_grad(std::span<const Tensor> xs, std::vector<Tensor>& grads,
                                 double target_sq) {
        NodePtr x = ad::variable(xs[0]);
        NodePtr y = ad::constant(fixed_label);
        auto inner = inner_grads(x, y, /*differentiable=*/true);
        NodePtr dot, sq;
        for (std::size_t i = 0; i < inner.size(); ++i) {
            NodePtr ci = ad::constant(target.entries[i].second);
            NodePtr d = ad::sum(ad::mul(inner[i], ci));
            NodePtr s = ad::sum(ad::mul(inner[i], inner[i]));
            dot = dot ? ad::add(dot, d) : d;
            sq = sq ? ad::add(sq, s) : s;
        }
        NodePtr denom = ad::add(ad::scale(ad::sqrt_(sq), float(std::sqrt(target_sq))),
                                ad::constant(Tensor::scalar(1e-20f)));
        NodePtr objective = ad::scale(ad::div(dot, denom), -1.0f);
        if (cfg.tv_weight > 0.0)
            objective = ad::add(objective, ad::scale(ad::total_variation(x), float(cfg.tv_weight)));
        const NodePtr wrt[] = {x};
        grads = ad::grad_values(objective, wrt);
        const CosineParts p = cosine_parts(inner, target);
        return cosine_objective(p, target_sq, xs[0]);
    }

    double cosine_objective(const CosineParts& p, double target_sq, const Tensor& x) const {
        const double denom = std::sqrt(p.dummy_sq) * std::sqrt(target_sq) + 1e-40;
        double v = 1.0 - p.dot / denom;
        if (cfg.tv_weight > 0.0) v += cfg.tv_weight * total_variation_value(x);
        return v;
    }
};

AttackResult finalize(const AttackConfig& cfg, const EvalContext& eval,
                      const optim::MinimizeResult& opt, AttackResult result) {
    result.reconstructed = to_display(opt.x[0], eval);
    result.loss_trace = opt.trace;
    result.iterations = opt.iterations;
    result.final_mse = metrics::mse(result.reconstructed, eval.truth_display);
    result.final_ssim = metrics::ssim(result.reconstructed, eval.truth_display);
    result.success = result.final_ssim >= cfg.success_ssim;
    if (!result.checkpoints.empty() &&
        result.checkpoints.back().first != result.iterations - 1) {
        result.checkpoints.emplace_back(result.iterations - 1, result.reconstructed);
    }
    return result;
}

AttackResult aborted_result(const AttackConfig& cfg, const EvalContext& eval, const Tensor& x0,
                            const std::string& what) {
    AttackResult r;
    r.aborted = true;
    r.diagnostic = what;
    r.reconstructed = to_display(x0, eval);
    r.final_mse = metrics::mse(r.reconstructed, eval.truth_display);
    r.final_ssim = metrics::ssim(r.reconstructed, eval.truth_display);
    r.success = false;
    (void)cfg;
    return r;
}

}  // namespace

double gradient_match_loss(const Tensor& dummy_x, const Tensor& dummy_y,
                           const nn::ParamSet& params, const nn::ModelSpec& spec,
                           const nn::GradientUpdate& g_target) {
    check_target_shapes(params, g_target);
    auto pnodes = nn::param_nodes(params);
    const std::pair<NodePtr, NodePtr> batch[] = {{ad::constant(dummy_x), ad::constant(dummy_y)}};
    NodePtr loss = nn::build_loss_graph(pnodes, spec, batch);
    auto inner = ad::grad(loss, pnodes, /*differentiable=*/false);
    return l2_mismatch(inner, g_target);
}

int infer_label_from_gradients(const nn::GradientUpdate& g_target, const nn::ModelSpec& spec) {
    (void)spec;
    const Tensor* bias_grad = nullptr;
    for (const auto& [name, t] : g_target.entries)
        if (name == "fc.bias") bias_grad = &t;
    if (bias_grad == nullptr)
        throw ValidationError("infer_label: no FC bias present in gradient update");
    std::size_t best = 0;
    for (std::size_t i = 1; i < bias_grad->size(); ++i)
        if ((*bias_grad)[i] < (*bias_grad)[best]) best = i;
    return int(best);
}

double total_variation_value(const Tensor& image) {
    if (image.rank() != 3 || image.dims()[1] < 2 || image.dims()[2] < 2)
        throw ShapeError("total_variation: need [CxHxW] with H, W >= 2, got " + image.shape_str());
    const std::size_t c = image.dims()[0], h = image.dims()[1], w = image.dims()[2];
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* xc = image.data() + ch * h * w;
        for (std::size_t i = 0; i + 1 < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                s += std::fabs(double(xc[(i + 1) * w + j]) - double(xc[i * w + j]));
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j + 1 < w; ++j)
                s += std::fabs(double(xc[i * w + j + 1]) - double(xc[i * w + j]));
    }
    return s;
}

namespace {

AttackResult l2_attack(const nn::GradientUpdate& g_target, const nn::ParamSet& params,
                       const nn::ModelSpec& spec, const AttackConfig& cfg,
                       const EvalContext& eval, bool optimize_label) {
    cfg.validate();
    AttackEngine engine(g_target, params, spec, cfg);
    engine.optimize_label = optimize_label;

    AttackResult result;
    std::vector<Tensor> x0;
    x0.push_back(sample_init_image(spec, cfg));
    std::vector<bool> clamp = {eval.mean.empty()};
    if (optimize_label) {
        Tensor ylogits = cfg.init_label_logits.value_or(Tensor({spec.num_classes}));
        x0.push_back(std::move(ylogits));  // zeros -> uniform soft label
        clamp.push_back(false);
    } else {
        result.inferred_label = infer_label_from_gradients(g_target, spec);
        engine.fixed_label = nn::one_hot(std::size_t(result.inferred_label), spec.num_classes);
    }

    optim::ValueGradFn fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& grads) {
        return engine.l2_value_and_grad(xs, grads);
    };
    optim::ValueFn f = [&](std::span<const Tensor> xs) { return engine.l2_value(xs); };

    const auto t0 = std::chrono::steady_clock::now();
    optim::MinimizeResult opt;
    optim::IterCallback cb = [&](int it, std::span<const Tensor> xs) {
        if (it % cfg.checkpoint_every == 0)
            result.checkpoints.emplace_back(it, to_display(xs[0], eval));
    };
    try {
        opt = optim::lbfgs_minimize(fg, f, x0, cfg.optimizer, clamp, cb);
    } catch (const OptimAbort& e) {
        AttackResult r = aborted_result(cfg, eval, x0[0], e.what());
        r.inferred_label = result.inferred_label;
        return r;
    }
    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (optimize_label) {
        ad::NoGradGuard guard;
        result.label_probs = ad::softmax(ad::constant(opt.x[1]))->value;
        std::size_t best = 0;
        for (std::size_t i = 1; i < result.label_probs.size(); ++i)
            if (result.label_probs[i] > result.label_probs[best]) best = i;
        result.inferred_label = int(best);
    }
    return finalize(cfg, eval, opt, std::move(result));
}

}  // namespace

AttackResult dlg_attack(const nn::GradientUpdate& g_target, const nn::ParamSet& params,
                        const nn::ModelSpec& spec, const AttackConfig& cfg,
                        const EvalContext& eval) {
    if (cfg.method != AttackMethod::kDlg) throw ValidationError("dlg_attack: cfg.method must be dlg");
    return l2_attack(g_target, params, spec, cfg, eval, /*optimize_label=*/true);
}

AttackResult cpl_attack(const nn::GradientUpdate& g_target, const nn::ParamSet& params,
                        const nn::ModelSpec& spec, const AttackConfig& cfg,
                        const EvalContext& eval) {
    if (cfg.method != AttackMethod::kCpl) throw ValidationError("cpl_attack: cfg.method must be cpl");
    return l2_attack(g_target, params, spec, cfg, eval, /*optimize_label=*/false);
}

AttackResult gradinv_attack(const nn::GradientUpdate& g_target, const nn::ParamSet& params,
                            const nn::ModelSpec& spec, const AttackConfig& cfg,
                            const EvalContext& eval) {
    if (cfg.method != AttackMethod::kGradInv)
        throw ValidationError("gradinv_attack: cfg.method must be gradinv");
    cfg.validate();

    double target_sq = 0.0;
    for (const auto& [name, t] : g_target.entries) target_sq += squared_norm(t);
    if (target_sq == 0.0)
        throw ValidationError("gradinv_attack: g_target has zero norm (non-zero gradient required)");

    AttackEngine engine(g_target, params, spec, cfg);
    AttackResult result;
    result.inferred_label = infer_label_from_gradients(g_target, spec);
    engine.fixed_label = nn::one_hot(std::size_t(result.inferred_label), spec.num_classes);

    std::vector<Tensor> x0;
    x0.push_back(sample_init_image(spec, cfg));
    const std::vector<bool> clamp = {eval.mean.empty()};

    optim::ValueGradFn fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& grads) {
        return engine.cosine_value_and_grad(xs, grads, target_sq);
    };

    const auto t0 = std::chrono::steady_clock::now();
    optim::MinimizeResult opt;
    optim::IterCallback cb = [&](int it, std::span<const Tensor> xs) {
        if (it % cfg.checkpoint_every == 0)
            result.checkpoints.emplace_back(it, to_display(xs[0], eval));
    };
    try {
        opt = optim::adam_minimize(fg, x0, cfg.optimizer, clamp, cb);
    } catch (const OptimAbort& e) {
        AttackResult r = aborted_result(cfg, eval, x0[0], e.what());
        r.inferred_label = result.inferred_label;
        return r;
    }
    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return finalize(cfg, eval, opt, std::move(result));
}

AttackResult run_attack(const nn::GradientUpdate& g_target, const nn::ParamSet& params,
                        const nn::ModelSpec& spec, const AttackConfig& cfg,
                        const EvalContext& eval) {
    switch (cfg.method) {
        case AttackMethod::kDlg: return dlg_attack(g_target, params, spec, cfg, eval);
        case AttackMethod::kCpl: return cpl_attack(g_target, params, spec, cfg, eval);
        case AttackMethod::kGradInv: return gradinv_attack(g_target, params, spec, cfg, eval);
    }
    throw ValidationError("run_attack: unknown method");
}

}  // namespace fedleak::attacks
