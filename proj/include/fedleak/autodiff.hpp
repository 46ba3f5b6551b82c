#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "fedleak/tensor.hpp"

namespace fedleak::ad {

enum class Op : std::uint8_t {
    kLeaf,
    // elementwise
    kAdd,
    kSub,
    kMul,
    kDiv,
    kScale,
    kRelu,
    kSigmoid,
    kTanh,
    kExp,
    kLog,
    kSqrt,
    // linear algebra
    kMatmul,
    kTranspose,
    // convolution family (closed under differentiation)
    kConv2d,
    kConvInputGrad,
    kConvKernelGrad,
    // pooling pair
    kAvgPool2,
    kUpsample2Q,
    // structural / reductions
    kReshape,
    kSum,
    kExpandScalar,
    kSpatialSum,
    kExpandChannel,
    // softmax family
    kSoftmax,
    kLogSoftmax,
    // image prior
    kTotalVariation,
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded operation. Nodes form a DAG through `parents`; values are
/// computed eagerly at construction, so a Node is simultaneously the tape
/// entry and the result. Parents are retained only while gradient recording
/// is enabled and at least one input requires gradients.
struct Node : std::enable_shared_from_this<Node> {
    Op op = Op::kLeaf;
    bool requires_grad = false;
    Tensor value;
    std::vector<NodePtr> parents;

    // op attributes
    int stride = 1;
    int pad = 0;
    float scalar = 0.0f;
    std::vector<std::size_t> attr_dims;  // conv grads: target spatial/kernel dims
};

/// Leaf that never receives gradients.
NodePtr constant(Tensor v);

/// Leaf marked as differentiable input.
NodePtr variable(Tensor v);

/// While alive, newly built nodes do not retain parents and never require
/// gradients; used for the non-recording backward path and cheap inference.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// ---- operations (all validate shapes, all record when recording is on) ----

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr div(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, float c);

NodePtr relu(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);
NodePtr tanh_(const NodePtr& a);
NodePtr exp_(const NodePtr& a);
NodePtr log_(const NodePtr& a);
NodePtr sqrt_(const NodePtr& a);

NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);

/// Cross-correlation (no kernel flip). input [Ci x H x W], kernels
/// [Co x Ci x kh x kw] -> [Co x H' x W'] with H' = (H + 2 pad - kh) / stride + 1.
NodePtr conv2d(const NodePtr& input, const NodePtr& kernels, int stride, int pad);

/// Adjoint of conv2d w.r.t. its input: grad_out [Co x H' x W'] scattered back
/// through kernels onto an input of spatial size in_h x in_w.
NodePtr conv2d_input_grad(const NodePtr& grad_out, const NodePtr& kernels, int stride, int pad,
                          std::size_t in_h, std::size_t in_w);

/// Adjoint of conv2d w.r.t. its kernels; kernel_dims = {Co, Ci, kh, kw}.
NodePtr conv2d_kernel_grad(const NodePtr& grad_out, const NodePtr& input, int stride, int pad,
                           std::vector<std::size_t> kernel_dims);

/// 2x2 average pooling with stride 2 (even spatial dims required).
NodePtr avg_pool2(const NodePtr& a);

NodePtr reshape(const NodePtr& a, std::vector<std::size_t> dims);

/// Sum of all elements -> scalar [1].
NodePtr sum(const NodePtr& a);

/// Fills a tensor of shape `dims` with the scalar a[0] (adjoint of sum).
NodePtr expand_scalar(const NodePtr& a, std::vector<std::size_t> dims);

/// [C x H x W] -> [C], summing over the spatial plane.
NodePtr spatial_sum(const NodePtr& a);

/// [C] -> [C x H x W], replicating each channel value (adjoint of spatial_sum).
NodePtr expand_channel(const NodePtr& a, std::size_t h, std::size_t w);

NodePtr softmax(const NodePtr& a);
NodePtr log_softmax(const NodePtr& a);

/// -sum(target * log_softmax(logits)). Target must be a probability vector
/// (entries >= 0, sum within 1e-6 of 1); gradients flow into both arguments.
NodePtr softmax_cross_entropy(const NodePtr& logits, const NodePtr& target);

/// Anisotropic total variation of a [C x H x W] image -> scalar [1],
/// with subgradient convention sign(0) = 0.
NodePtr total_variation(const NodePtr& a);

// ---- reverse mode ----

/// Reverse-mode adjoints of a scalar `output` with respect to `wrt`, in
/// order. With `differentiable` set, the backward pass emits its own graph
/// nodes, so the returned gradients can be differentiated again; otherwise
/// the backward pass runs detached (cheaper, nothing retained).
std::vector<NodePtr> grad(const NodePtr& output, std::span<const NodePtr> wrt,
                          bool differentiable);

std::vector<Tensor> grad_values(const NodePtr& output, std::span<const NodePtr> wrt);

}  // namespace fedleak::ad
