#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedleak/autodiff.hpp"
#include "fedleak/tensor.hpp"

namespace fedleak::nn {

enum class Arch { kMlp, kCnn4, kCnn7, kTinyRes };
enum class Activation { kSigmoid, kRelu };

/// Architecture description of an attack-target model.
struct ModelSpec {
    Arch arch = Arch::kCnn4;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t num_classes = 2;
    Activation activation = Activation::kSigmoid;
};

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& name);

/// Flat ordered parameter collection; the order is a deterministic function
/// of the ModelSpec. ParamSet is an immutable value after construction.
struct ParamSet {
    std::vector<std::pair<std::string, Tensor>> entries;
    std::uint64_t step_count = 0;

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries) n += t.size();
        return n;
    }
};

/// A client's shared local update, ordered like the originating ParamSet.
struct GradientUpdate {
    std::vector<std::pair<std::string, Tensor>> entries;
    std::size_t batch_size = 1;

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries) n += t.size();
        return n;
    }
};

/// Deterministic initialization: weights uniform in (-sqrt(1/fan_in),
/// +sqrt(1/fan_in)), biases zero. Same (spec, seed) gives a bit-identical
/// ParamSet.
ParamSet build_model(const ModelSpec& spec, std::uint64_t seed);

/// Forward graph on explicit nodes; params must match build order.
/// Used by attacks and higher-order tests; `forward` below wraps it.
ad::NodePtr build_forward_graph(std::span<const ad::NodePtr> params, const ModelSpec& spec,
                                const ad::NodePtr& x);

/// Wraps the parameters of a ParamSet as differentiable leaves.
std::vector<ad::NodePtr> param_nodes(const ParamSet& params);

Tensor forward(const ParamSet& params, const ModelSpec& spec, const Tensor& x);

/// Mean cross-entropy loss graph over a batch; labels are probability
/// vectors. Returns the scalar loss node.
ad::NodePtr build_loss_graph(std::span<const ad::NodePtr> params, const ModelSpec& spec,
                             std::span<const std::pair<ad::NodePtr, ad::NodePtr>> batch);

std::pair<float, GradientUpdate> loss_and_grad(const ParamSet& params, const ModelSpec& spec,
                                               const Tensor& x, const Tensor& y);

std::pair<float, GradientUpdate> loss_and_grad_batch(
    const ParamSet& params, const ModelSpec& spec,
    std::span<const std::pair<Tensor, Tensor>> batch);

/// Plain per-sample SGD over the shuffled dataset; epochs = 0 returns the
/// input unchanged. Returns a new ParamSet with step_count advanced.
ParamSet train_local(const ParamSet& params, const ModelSpec& spec,
                     const std::vector<std::pair<Tensor, Tensor>>& dataset, int epochs, float lr,
                     std::uint64_t seed);

/// Fraction of dataset samples whose argmax logit matches the label argmax.
double accuracy(const ParamSet& params, const ModelSpec& spec,
                const std::vector<std::pair<Tensor, Tensor>>& dataset);

Tensor one_hot(std::size_t cls, std::size_t num_classes);

}  // namespace fedleak::nn
