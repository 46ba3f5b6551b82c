#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedleak/nn.hpp"
#include "fedleak/optim.hpp"

namespace fedleak::attacks {

enum class AttackMethod { kDlg, kCpl, kGradInv };
enum class InitKind { kGaussian, kUniform, kConstant, kPatterned };

std::string method_name(AttackMethod m);
AttackMethod method_from_name(const std::string& name);

struct AttackConfig {
    AttackMethod method = AttackMethod::kDlg;
    optim::OptimizerConfig optimizer;
    InitKind init = InitKind::kGaussian;
    float init_constant = 0.5f;
    double tv_weight = 1e-4;  // gradinv only
    int checkpoint_every = 20;
    double success_ssim = 0.9;
    std::uint64_t seed = 0;

    // Start from a given state instead of sampling; used by the fixed-point
    // checks and for resuming.
    std::optional<Tensor> init_image;
    std::optional<Tensor> init_label_logits;

    void validate() const;
};

/// Per-method defaults: DLG and CPL run L-BFGS (200 iterations, unit initial
/// step); GradInv runs Adam (24000 iterations, lr 0.1, tv weight 1e-4).
AttackConfig default_config(AttackMethod m);

struct AttackResult {
    Tensor reconstructed;  // display space, clamped to [0,1]
    int inferred_label = -1;
    Tensor label_probs;  // dlg only: the optimized soft label
    std::vector<double> loss_trace;
    std::vector<std::pair<int, Tensor>> checkpoints;  // (iteration, display image)
    double final_mse = 0.0;
    double final_ssim = 0.0;
    bool success = false;
    double wall_time_s = 0.0;
    int iterations = 0;
    bool aborted = false;
    std::string diagnostic;
};

/// How reconstructions are scored: the [0,1] ground-truth image, plus the
/// normalization stats to undo before measuring when the model consumed
/// normalized inputs (empty means attack space is already display space).
struct EvalContext {
    Tensor truth_display;
    std::vector<float> mean;
    std::vector<float> stdev;
};

/// Squared L2 distance between the gradients that (dummy_x, dummy_y) produce
/// and g_target, summed over parameters.
double gradient_match_loss(const Tensor& dummy_x, const Tensor& dummy_y,
                           const nn::ParamSet& params, const nn::ModelSpec& spec,
                           const nn::GradientUpdate& g_target);

/// The class whose final-layer bias gradient is most negative (exact for
/// untrained networks with batch size 1); ties keep the lowest index.
int infer_label_from_gradients(const nn::GradientUpdate& g_target, const nn::ModelSpec& spec);

/// Anisotropic total variation, summed in double (matches the autodiff op).
double total_variation_value(const Tensor& image);

AttackResult dlg_attack(const nn::GradientUpdate& g_target, const nn::ParamSet& params,
                        const nn::ModelSpec& spec, const AttackConfig& cfg,
                        const EvalContext& eval);

AttackResult cpl_attack(const nn::GradientUpdate& g_target, const nn::ParamSet& params,
                        const nn::ModelSpec& spec, const AttackConfig& cfg,
                        const EvalContext& eval);

AttackResult gradinv_attack(const nn::GradientUpdate& g_target, const nn::ParamSet& params,
                            const nn::ModelSpec& spec, const AttackConfig& cfg,
                            const EvalContext& eval);

/// Dispatch on cfg.method.
AttackResult run_attack(const nn::GradientUpdate& g_target, const nn::ParamSet& params,
                        const nn::ModelSpec& spec, const AttackConfig& cfg,
                        const EvalContext& eval);

}  // namespace fedleak::attacks
