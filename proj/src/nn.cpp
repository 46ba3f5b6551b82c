#include "fedleak/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fedleak/error.hpp"
#include "fedleak/optim.hpp"
#include "fedleak/rng.hpp"

namespace fedleak::nn {

using ad::NodePtr;

std::string arch_name(Arch a) {
    switch (a) {
        case Arch::kMlp: return "mlp";
        case Arch::kCnn4: return "cnn4";
        case Arch::kCnn7: return "cnn7";
        case Arch::kTinyRes: return "tinyres";
    }
    return "?";
}

Arch arch_from_name(const std::string& name) {
    if (name == "mlp") return Arch::kMlp;
    if (name == "cnn4") return Arch::kCnn4;
    if (name == "cnn7") return Arch::kCnn7;
    if (name == "tinyres") return Arch::kTinyRes;
    throw ValidationError("unknown arch '" + name + "'");
}

namespace {

// cnn4: 4 conv layers, 2x2 average pool after layers 2 and 4.
// cnn7: 7 conv layers, pools after layers 2, 4 and 6.
const std::vector<std::size_t> kCnn4Channels = {12, 12, 12, 12};
const std::vector<std::size_t> kCnn7Channels = {16, 16, 32, 32, 64, 64, 64};
constexpr std::size_t kMlpHidden = 256;
const std::vector<std::size_t> kResChannels = {16, 32, 64};

bool pool_after(std::size_t layer_idx) {
    // layer_idx is zero-based; pools follow every second conv.
    return layer_idx % 2 == 1;
}

void validate_spec(const ModelSpec& spec) {
    if (spec.channels == 0 || spec.height == 0 || spec.width == 0)
        throw ValidationError("model spec: non-positive input dims");
    if (spec.num_classes < 2) throw ValidationError("model spec: num_classes must be >= 2");
    const std::size_t pool_div = spec.arch == Arch::kCnn4 ? 4 : (spec.arch == Arch::kCnn7 ? 8 : 1);
    if (spec.height % pool_div != 0 || spec.width % pool_div != 0) {
        throw ValidationError("model spec: " + arch_name(spec.arch) + " needs input dims divisible by " +
                              std::to_string(pool_div));
    }
}

Tensor init_weight(std::vector<std::size_t> dims, std::size_t fan_in, CounterRng& rng) {
    const float a = std::sqrt(1.0f / float(fan_in));
    Tensor t(std::move(dims));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-a, a);
    return t;
}

// Constant 1x1 stride-2 kernel realizing the identity shortcut: subsamples
// spatially and zero-pads new channels.
Tensor shortcut_kernel(std::size_t cout, std::size_t cin) {
    Tensor k({cout, cin, 1, 1});
    for (std::size_t c = 0; c < std::min(cin, cout); ++c) k[c * cin + c] = 1.0f;
    return k;
}

NodePtr act(const NodePtr& x, Activation a) {
    return a == Activation::kSigmoid ? ad::sigmoid(x) : ad::relu(x);
}

NodePtr conv_bias(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int pad) {
    NodePtr c = ad::conv2d(x, w, stride, pad);
    return ad::add(c, ad::expand_channel(b, c->value.dims()[1], c->value.dims()[2]));
}

NodePtr fc(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    const std::size_t n = x->value.size();
    const std::size_t out = w->value.dims()[0];
    return ad::add(ad::reshape(ad::matmul(w, ad::reshape(x, {n, 1})), {out}), b);
}

NodePtr flatten(const NodePtr& x) { return ad::reshape(x, {x->value.size()}); }

}  // namespace

ParamSet build_model(const ModelSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    CounterRng rng(seed_hash({0x6d6f64656cULL, seed}));
    ParamSet ps;
    auto add_conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k) {
        ps.entries.emplace_back(name + ".weight", init_weight({cout, cin, k, k}, cin * k * k, rng));
        ps.entries.emplace_back(name + ".bias", Tensor({cout}));
    };
    auto add_fc = [&](const std::string& name, std::size_t out, std::size_t in) {
        ps.entries.emplace_back(name + ".weight", init_weight({out, in}, in, rng));
        ps.entries.emplace_back(name + ".bias", Tensor({out}));
    };

    switch (spec.arch) {
        case Arch::kMlp: {
            add_fc("fc1", kMlpHidden, spec.channels * spec.height * spec.width);
            add_fc("fc", spec.num_classes, kMlpHidden);
            break;
        }
        case Arch::kCnn4:
        case Arch::kCnn7: {
            const auto& chans = spec.arch == Arch::kCnn4 ? kCnn4Channels : kCnn7Channels;
            std::size_t cin = spec.channels;
            std::size_t h = spec.height, w = spec.width;
            for (std::size_t i = 0; i < chans.size(); ++i) {
                add_conv("conv" + std::to_string(i + 1), chans[i], cin, 3);
                cin = chans[i];
                if (pool_after(i)) {
                    h /= 2;
                    w /= 2;
                }
            }
            add_fc("fc", spec.num_classes, cin * h * w);
            break;
        }
        case Arch::kTinyRes: {
            add_conv("stem", kResChannels[0], spec.channels, 3);
            std::size_t cin = kResChannels[0];
            for (std::size_t i = 0; i < kResChannels.size(); ++i) {
                const std::string base = "block" + std::to_string(i + 1);
                add_conv(base + ".conv1", kResChannels[i], cin, 3);
                add_conv(base + ".conv2", kResChannels[i], kResChannels[i], 3);
                cin = kResChannels[i];
            }
            add_fc("fc", spec.num_classes, kResChannels.back());
            break;
        }
    }
    return ps;
}

std::vector<NodePtr> param_nodes(const ParamSet& params) {
    std::vector<NodePtr> nodes;
    nodes.reserve(params.entries.size());
    for (const auto& [name, t] : params.entries) nodes.push_back(ad::variable(t));
    return nodes;
}

ad::NodePtr build_forward_graph(std::span<const NodePtr> params, const ModelSpec& spec,
                                const NodePtr& x) {
    if (x->value.dims() != std::vector<std::size_t>{spec.channels, spec.height, spec.width}) {
        throw ShapeError("forward: input " + x->value.shape_str() + " does not match spec " +
                         Tensor::shape_to_string({spec.channels, spec.height, spec.width}));
    }
    std::size_t p = 0;
    auto next = [&]() -> const NodePtr& {
        if (p >= params.size()) throw Error("forward: parameter list exhausted");
        return params[p++];
    };

    NodePtr h;
    switch (spec.arch) {
        case Arch::kMlp: {
            h = flatten(x);
            const NodePtr &w1 = next(), &b1 = next();
            h = act(fc(h, w1, b1), spec.activation);
            const NodePtr &w2 = next(), &b2 = next();
            h = fc(h, w2, b2);
            break;
        }
        case Arch::kCnn4:
        case Arch::kCnn7: {
            const auto& chans = spec.arch == Arch::kCnn4 ? kCnn4Channels : kCnn7Channels;
            h = x;
            for (std::size_t i = 0; i < chans.size(); ++i) {
                const NodePtr &w = next(), &b = next();
                h = act(conv_bias(h, w, b, 1, 1), spec.activation);
                if (pool_after(i)) h = ad::avg_pool2(h);
            }
            const NodePtr &fw = next(), &fb = next();
            h = fc(flatten(h), fw, fb);
            break;
        }
        case Arch::kTinyRes: {
            const NodePtr &sw = next(), &sb = next();
            h = act(conv_bias(x, sw, sb, 1, 1), spec.activation);
            for (std::size_t i = 0; i < kResChannels.size(); ++i) {
                const NodePtr &w1 = next(), &b1 = next();
                const NodePtr &w2 = next(), &b2 = next();
                NodePtr main = act(conv_bias(h, w1, b1, 2, 1), spec.activation);
                main = conv_bias(main, w2, b2, 1, 1);
                NodePtr sc = ad::conv2d(
                    h, ad::constant(shortcut_kernel(kResChannels[i], h->value.dims()[0])), 2, 0);
                h = act(ad::add(main, sc), spec.activation);
            }
            // global average pool
            const auto& hd = h->value.dims();
            h = ad::scale(ad::spatial_sum(h), 1.0f / float(hd[1] * hd[2]));
            const NodePtr &fw = next(), &fb = next();
            h = fc(h, fw, fb);
            break;
        }
    }
    if (p != params.size()) throw Error("forward: unused parameters");
    return h;
}

Tensor forward(const ParamSet& params, const ModelSpec& spec, const Tensor& x) {
    ad::NoGradGuard guard;
    std::vector<NodePtr> pn;
    pn.reserve(params.entries.size());
    for (const auto& [name, t] : params.entries) pn.push_back(ad::constant(t));
    return build_forward_graph(pn, spec, ad::constant(x))->value;
}

ad::NodePtr build_loss_graph(std::span<const NodePtr> params, const ModelSpec& spec,
                             std::span<const std::pair<NodePtr, NodePtr>> batch) {
    if (batch.empty()) throw ValidationError("loss: empty batch");
    NodePtr total;
    for (const auto& [x, y] : batch) {
        NodePtr logits = build_forward_graph(params, spec, x);
        NodePtr l = ad::softmax_cross_entropy(logits, y);
        total = total ? ad::add(total, l) : l;
    }
    return ad::scale(total, 1.0f / float(batch.size()));
}

std::pair<float, GradientUpdate> loss_and_grad_batch(
    const ParamSet& params, const ModelSpec& spec,
    std::span<const std::pair<Tensor, Tensor>> batch) {
    auto pn = param_nodes(params);
    std::vector<std::pair<NodePtr, NodePtr>> nodes;
    nodes.reserve(batch.size());
    for (const auto& [x, y] : batch) nodes.emplace_back(ad::constant(x), ad::constant(y));
    NodePtr loss = build_loss_graph(pn, spec, nodes);
    auto grads = ad::grad_values(loss, pn);
    GradientUpdate gu;
    gu.batch_size = batch.size();
    gu.entries.reserve(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i)
        gu.entries.emplace_back(params.entries[i].first, std::move(grads[i]));
    return {loss->value[0], std::move(gu)};
}

std::pair<float, GradientUpdate> loss_and_grad(const ParamSet& params, const ModelSpec& spec,
                                               const Tensor& x, const Tensor& y) {
    const std::pair<Tensor, Tensor> one[] = {{x, y}};
    return loss_and_grad_batch(params, spec, one);
}

ParamSet train_local(const ParamSet& params, const ModelSpec& spec,
                     const std::vector<std::pair<Tensor, Tensor>>& dataset, int epochs, float lr,
                     std::uint64_t seed) {
    if (epochs < 0) throw ValidationError("train_local: epochs must be >= 0");
    if (lr <= 0.0f) throw ValidationError("train_local: lr must be > 0");
    if (epochs == 0) return params;
    if (dataset.empty()) throw ValidationError("train_local: empty dataset");

    ParamSet cur = params;
    CounterRng rng(seed_hash({0x747261696eULL, seed}));
    std::vector<std::size_t> idx(dataset.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = idx.size() - 1; i > 0; --i)
            std::swap(idx[i], idx[rng.next_below(i + 1)]);
        for (std::size_t i : idx) {
            auto [loss, gu] = loss_and_grad(cur, spec, dataset[i].first, dataset[i].second);
            for (std::size_t k = 0; k < cur.entries.size(); ++k) {
                cur.entries[k].second =
                    optim::sgd_step(cur.entries[k].second, gu.entries[k].second, lr);
            }
            ++cur.step_count;
        }
    }
    return cur;
}

double accuracy(const ParamSet& params, const ModelSpec& spec,
                const std::vector<std::pair<Tensor, Tensor>>& dataset) {
    if (dataset.empty()) throw ValidationError("accuracy: empty dataset");
    std::size_t hits = 0;
    for (const auto& [x, y] : dataset) {
        Tensor logits = forward(params, spec, x);
        const auto amax = [](const Tensor& t) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < t.size(); ++i)
                if (t[i] > t[best]) best = i;
            return best;
        };
        if (amax(logits) == amax(y)) ++hits;
    }
    return double(hits) / double(dataset.size());
}

Tensor one_hot(std::size_t cls, std::size_t num_classes) {
    if (cls >= num_classes) throw ValidationError("one_hot: class index out of range");
    Tensor t({num_classes});
    t[cls] = 1.0f;
    return t;
}

}  // namespace fedleak::nn
