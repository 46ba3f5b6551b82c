#include "fedleak/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace fedleak::ad {

namespace {

thread_local int g_no_grad_depth = 0;

NodePtr make_node(Op op, Tensor value, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    if (g_no_grad_depth == 0 && rg) {
        n->requires_grad = true;
        n->parents = std::move(parents);
    }
    return n;
}

void require_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw ValidationError(std::string(what) + ": produced non-finite values");
}

// ---- kernels ----

Tensor ew_binary(const Tensor& a, const Tensor& b, Op op, const char* what) {
    require_same_shape(a, b, what);
    Tensor out(a.dims());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const std::size_t n = a.size();
    switch (op) {
        case Op::kAdd:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
            break;
        case Op::kSub:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
            break;
        case Op::kMul:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
            break;
        case Op::kDiv:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
            break;
        default:
            throw Error("ew_binary: bad op");
    }
    return out;
}

Tensor matmul_kernel(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0]) {
        throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
    }
    const std::size_t m = a.dims()[0], k = a.dims()[1], n = b.dims()[1];
    Tensor out({m, n});
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = a.data() + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const float* brow = b.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) acc[j] += av * double(brow[j]);
        }
        float* orow = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = float(acc[j]);
    }
    return out;
}

Tensor transpose_kernel(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank-2 tensor, got " + a.shape_str());
    const std::size_t m = a.dims()[0], n = a.dims()[1];
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

struct ConvDims {
    std::size_t ci, h, w;      // input
    std::size_t co, kh, kw;    // kernels
    std::size_t oh, ow;        // output
};

ConvDims conv_dims(const std::vector<std::size_t>& in, const std::vector<std::size_t>& ker,
                   int stride, int pad) {
    if (in.size() != 3) throw ShapeError("conv2d: input must be [CxHxW], got " + Tensor::shape_to_string(in));
    if (ker.size() != 4)
        throw ShapeError("conv2d: kernels must be [CoxCixKhxKw], got " + Tensor::shape_to_string(ker));
    if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
    if (pad < 0) throw ValidationError("conv2d: padding must be >= 0");
    ConvDims d{};
    d.ci = in[0];
    d.h = in[1];
    d.w = in[2];
    d.co = ker[0];
    d.kh = ker[2];
    d.kw = ker[3];
    if (ker[1] != d.ci) {
        throw ShapeError("conv2d: input channels " + Tensor::shape_to_string(in) +
                         " do not match kernels " + Tensor::shape_to_string(ker));
    }
    const std::size_t ph = d.h + 2 * std::size_t(pad);
    const std::size_t pw = d.w + 2 * std::size_t(pad);
    if (d.kh > ph || d.kw > pw) {
        throw ShapeError("conv2d: kernel " + Tensor::shape_to_string(ker) +
                         " larger than padded input " + Tensor::shape_to_string(in));
    }
    d.oh = (ph - d.kh) / std::size_t(stride) + 1;
    d.ow = (pw - d.kw) / std::size_t(stride) + 1;
    return d;
}

Tensor conv2d_kernel(const Tensor& x, const Tensor& k, int stride, int pad) {
    const ConvDims d = conv_dims(x.dims(), k.dims(), stride, pad);
    Tensor out({d.co, d.oh, d.ow});
    std::vector<double> acc(d.oh * d.ow);
    const std::size_t s = std::size_t(stride);
    for (std::size_t co = 0; co < d.co; ++co) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t ci = 0; ci < d.ci; ++ci) {
            const float* xch = x.data() + ci * d.h * d.w;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
                for (std::size_t kx = 0; kx < d.kw; ++kx) {
                    const double wv = k[((co * d.ci + ci) * d.kh + ky) * d.kw + kx];
                    for (std::size_t oy = 0; oy < d.oh; ++oy) {
                        const long iy = long(oy * s + ky) - pad;
                        if (iy < 0 || iy >= long(d.h)) continue;
                        const float* xrow = xch + std::size_t(iy) * d.w;
                        double* arow = acc.data() + oy * d.ow;
                        if (s == 1) {
                            const long off = long(kx) - pad;
                            const std::size_t lo = std::size_t(std::max(0L, -off));
                            const std::size_t hi =
                                std::size_t(std::max(0L, std::min(long(d.ow), long(d.w) - off)));
                            for (std::size_t ox = lo; ox < hi; ++ox)
                                arow[ox] += wv * double(xrow[std::size_t(long(ox) + off)]);
                        } else {
                            for (std::size_t ox = 0; ox < d.ow; ++ox) {
                                const long ix = long(ox * s + kx) - pad;
                                if (ix < 0 || ix >= long(d.w)) continue;
                                arow[ox] += wv * double(xrow[std::size_t(ix)]);
                            }
                        }
                    }
                }
            }
        }
        float* och = out.data() + co * d.oh * d.ow;
        for (std::size_t i = 0; i < acc.size(); ++i) och[i] = float(acc[i]);
    }
    return out;
}

// Adjoint of conv2d w.r.t. the input image.
Tensor conv_input_grad_kernel(const Tensor& g, const Tensor& k, int stride, int pad,
                              std::size_t in_h, std::size_t in_w) {
    const std::size_t ci = k.dims()[1];
    const ConvDims d = conv_dims({ci, in_h, in_w}, k.dims(), stride, pad);
    if (g.rank() != 3 || g.dims()[0] != d.co || g.dims()[1] != d.oh || g.dims()[2] != d.ow) {
        throw ShapeError("conv2d_input_grad: grad shape " + g.shape_str() + " does not match expected " +
                         Tensor::shape_to_string({d.co, d.oh, d.ow}));
    }
    Tensor out({ci, in_h, in_w});
    std::vector<double> acc(out.size(), 0.0);
    const std::size_t s = std::size_t(stride);
    for (std::size_t co = 0; co < d.co; ++co) {
        const float* gch = g.data() + co * d.oh * d.ow;
        for (std::size_t c = 0; c < ci; ++c) {
            double* ach = acc.data() + c * in_h * in_w;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
                for (std::size_t kx = 0; kx < d.kw; ++kx) {
                    const double wv = k[((co * ci + c) * d.kh + ky) * d.kw + kx];
                    for (std::size_t oy = 0; oy < d.oh; ++oy) {
                        const long iy = long(oy * s + ky) - pad;
                        if (iy < 0 || iy >= long(in_h)) continue;
                        const float* grow = gch + oy * d.ow;
                        double* arow = ach + std::size_t(iy) * in_w;
                        if (s == 1) {
                            const long off = long(kx) - pad;
                            const std::size_t lo = std::size_t(std::max(0L, -off));
                            const std::size_t hi =
                                std::size_t(std::max(0L, std::min(long(d.ow), long(in_w) - off)));
                            for (std::size_t ox = lo; ox < hi; ++ox)
                                arow[std::size_t(long(ox) + off)] += wv * double(grow[ox]);
                        } else {
                            for (std::size_t ox = 0; ox < d.ow; ++ox) {
                                const long ix = long(ox * s + kx) - pad;
                                if (ix < 0 || ix >= long(in_w)) continue;
                                arow[std::size_t(ix)] += wv * double(grow[ox]);
                            }
                        }
                    }
                }
            }
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(acc[i]);
    return out;
}

// Adjoint of conv2d w.r.t. the kernels.
Tensor conv_kernel_grad_kernel(const Tensor& g, const Tensor& x, int stride, int pad,
                               const std::vector<std::size_t>& kdims) {
    if (kdims.size() != 4) throw ShapeError("conv2d_kernel_grad: kernel dims must have rank 4");
    const ConvDims d = conv_dims(x.dims(), kdims, stride, pad);
    if (g.rank() != 3 || g.dims()[0] != d.co || g.dims()[1] != d.oh || g.dims()[2] != d.ow) {
        throw ShapeError("conv2d_kernel_grad: grad shape " + g.shape_str() +
                         " does not match expected " + Tensor::shape_to_string({d.co, d.oh, d.ow}));
    }
    Tensor out(kdims);
    const std::size_t s = std::size_t(stride);
    for (std::size_t co = 0; co < d.co; ++co) {
        const float* gch = g.data() + co * d.oh * d.ow;
        for (std::size_t ci = 0; ci < d.ci; ++ci) {
            const float* xch = x.data() + ci * d.h * d.w;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
                for (std::size_t kx = 0; kx < d.kw; ++kx) {
                    double acc = 0.0;
                    for (std::size_t oy = 0; oy < d.oh; ++oy) {
                        const long iy = long(oy * s + ky) - pad;
                        if (iy < 0 || iy >= long(d.h)) continue;
                        const float* grow = gch + oy * d.ow;
                        const float* xrow = xch + std::size_t(iy) * d.w;
                        if (s == 1) {
                            const long off = long(kx) - pad;
                            const std::size_t lo = std::size_t(std::max(0L, -off));
                            const std::size_t hi =
                                std::size_t(std::max(0L, std::min(long(d.ow), long(d.w) - off)));
                            for (std::size_t ox = lo; ox < hi; ++ox)
                                acc += double(grow[ox]) * double(xrow[std::size_t(long(ox) + off)]);
                        } else {
                            for (std::size_t ox = 0; ox < d.ow; ++ox) {
                                const long ix = long(ox * s + kx) - pad;
                                if (ix < 0 || ix >= long(d.w)) continue;
                                acc += double(grow[ox]) * double(xrow[std::size_t(ix)]);
                            }
                        }
                    }
                    out[((co * d.ci + ci) * d.kh + ky) * d.kw + kx] = float(acc);
                }
            }
        }
    }
    return out;
}

Tensor avg_pool2_kernel(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("avg_pool2: expected [CxHxW], got " + x.shape_str());
    const std::size_t c = x.dims()[0], h = x.dims()[1], w = x.dims()[2];
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("avg_pool2: spatial dims must be even, got " + x.shape_str());
    Tensor out({c, h / 2, w / 2});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* xc = x.data() + ch * h * w;
        float* oc = out.data() + ch * (h / 2) * (w / 2);
        for (std::size_t i = 0; i < h / 2; ++i) {
            for (std::size_t j = 0; j < w / 2; ++j) {
                const double s = double(xc[(2 * i) * w + 2 * j]) + double(xc[(2 * i) * w + 2 * j + 1]) +
                                 double(xc[(2 * i + 1) * w + 2 * j]) +
                                 double(xc[(2 * i + 1) * w + 2 * j + 1]);
                oc[i * (w / 2) + j] = float(s * 0.25);
            }
        }
    }
    return out;
}

// Adjoint of avg_pool2: each coarse cell spreads a quarter of its value.
Tensor upsample2q_kernel(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("upsample2q: expected [CxHxW], got " + x.shape_str());
    const std::size_t c = x.dims()[0], h = x.dims()[1], w = x.dims()[2];
    Tensor out({c, h * 2, w * 2});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* xc = x.data() + ch * h * w;
        float* oc = out.data() + ch * 4 * h * w;
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                const float v = xc[i * w + j] * 0.25f;
                oc[(2 * i) * (2 * w) + 2 * j] = v;
                oc[(2 * i) * (2 * w) + 2 * j + 1] = v;
                oc[(2 * i + 1) * (2 * w) + 2 * j] = v;
                oc[(2 * i + 1) * (2 * w) + 2 * j + 1] = v;
            }
        }
    }
    return out;
}

Tensor sum_kernel(const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += double(x[i]);
    return Tensor::scalar(float(s));
}

Tensor spatial_sum_kernel(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("spatial_sum: expected [CxHxW], got " + x.shape_str());
    const std::size_t c = x.dims()[0], hw = x.dims()[1] * x.dims()[2];
    Tensor out({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        const float* xc = x.data() + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) s += double(xc[i]);
        out[ch] = float(s);
    }
    return out;
}

Tensor softmax_kernel(const Tensor& x) {
    Tensor out(x.dims());
    float m = x[0];
    for (std::size_t i = 1; i < x.size(); ++i) m = std::max(m, x[i]);
    double z = 0.0;
    std::vector<double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        e[i] = std::exp(double(x[i]) - double(m));
        z += e[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = float(e[i] / z);
    return out;
}

Tensor log_softmax_kernel(const Tensor& x) {
    Tensor out(x.dims());
    float m = x[0];
    for (std::size_t i = 1; i < x.size(); ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) z += std::exp(double(x[i]) - double(m));
    const double lz = std::log(z);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = float(double(x[i]) - double(m) - lz);
    return out;
}

Tensor total_variation_kernel(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("total_variation: expected [CxHxW], got " + x.shape_str());
    const std::size_t c = x.dims()[0], h = x.dims()[1], w = x.dims()[2];
    if (h < 2 || w < 2)
        throw ShapeError("total_variation: spatial dims must be >= 2, got " + x.shape_str());
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* xc = x.data() + ch * h * w;
        for (std::size_t i = 0; i + 1 < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                s += std::fabs(double(xc[(i + 1) * w + j]) - double(xc[i * w + j]));
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j + 1 < w; ++j)
                s += std::fabs(double(xc[i * w + j + 1]) - double(xc[i * w + j]));
    }
    return Tensor::scalar(float(s));
}

// Subgradient of total variation, sign(0) = 0. Entries are small integer
// sums of signs, exact in float.
Tensor tv_sign_kernel(const Tensor& x) {
    const std::size_t c = x.dims()[0], h = x.dims()[1], w = x.dims()[2];
    Tensor out(x.dims());
    auto sgn = [](float d) { return d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f); };
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* xc = x.data() + ch * h * w;
        float* oc = out.data() + ch * h * w;
        for (std::size_t i = 0; i + 1 < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                const float s = sgn(xc[(i + 1) * w + j] - xc[i * w + j]);
                oc[(i + 1) * w + j] += s;
                oc[i * w + j] -= s;
            }
        }
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j + 1 < w; ++j) {
                const float s = sgn(xc[i * w + j + 1] - xc[i * w + j]);
                oc[i * w + j + 1] += s;
                oc[i * w + j] -= s;
            }
        }
    }
    return out;
}

Tensor ones_like(const Tensor& t) { return Tensor::full(t.dims(), 1.0f); }

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

NodePtr constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

NodePtr variable(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    return make_node(Op::kAdd, ew_binary(a->value, b->value, Op::kAdd, "add"), {a, b});
}
NodePtr sub(const NodePtr& a, const NodePtr& b) {
    return make_node(Op::kSub, ew_binary(a->value, b->value, Op::kSub, "sub"), {a, b});
}
NodePtr mul(const NodePtr& a, const NodePtr& b) {
    return make_node(Op::kMul, ew_binary(a->value, b->value, Op::kMul, "mul"), {a, b});
}
NodePtr div(const NodePtr& a, const NodePtr& b) {
    Tensor v = ew_binary(a->value, b->value, Op::kDiv, "div");
    require_finite(v, "div");
    return make_node(Op::kDiv, std::move(v), {a, b});
}

NodePtr scale(const NodePtr& a, float c) {
    Tensor v(a->value.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * c;
    auto n = make_node(Op::kScale, std::move(v), {a});
    n->scalar = c;
    return n;
}

NodePtr relu(const NodePtr& a) {
    Tensor v(a->value.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] > 0.0f ? a->value[i] : 0.0f;
    return make_node(Op::kRelu, std::move(v), {a});
}

NodePtr sigmoid(const NodePtr& a) {
    Tensor v(a->value.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(1.0 / (1.0 + std::exp(-double(a->value[i]))));
    return make_node(Op::kSigmoid, std::move(v), {a});
}

NodePtr tanh_(const NodePtr& a) {
    Tensor v(a->value.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(std::tanh(double(a->value[i])));
    return make_node(Op::kTanh, std::move(v), {a});
}

NodePtr exp_(const NodePtr& a) {
    Tensor v(a->value.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(std::exp(double(a->value[i])));
    require_finite(v, "exp");
    return make_node(Op::kExp, std::move(v), {a});
}

NodePtr log_(const NodePtr& a) {
    Tensor v(a->value.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(std::log(double(a->value[i])));
    require_finite(v, "log");
    return make_node(Op::kLog, std::move(v), {a});
}

NodePtr sqrt_(const NodePtr& a) {
    Tensor v(a->value.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(std::sqrt(double(a->value[i])));
    require_finite(v, "sqrt");
    return make_node(Op::kSqrt, std::move(v), {a});
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    return make_node(Op::kMatmul, matmul_kernel(a->value, b->value), {a, b});
}

NodePtr transpose(const NodePtr& a) {
    return make_node(Op::kTranspose, transpose_kernel(a->value), {a});
}

NodePtr conv2d(const NodePtr& input, const NodePtr& kernels, int stride, int pad) {
    auto n = make_node(Op::kConv2d, conv2d_kernel(input->value, kernels->value, stride, pad),
                       {input, kernels});
    n->stride = stride;
    n->pad = pad;
    return n;
}

NodePtr conv2d_input_grad(const NodePtr& grad_out, const NodePtr& kernels, int stride, int pad,
                          std::size_t in_h, std::size_t in_w) {
    auto n = make_node(
        Op::kConvInputGrad,
        conv_input_grad_kernel(grad_out->value, kernels->value, stride, pad, in_h, in_w),
        {grad_out, kernels});
    n->stride = stride;
    n->pad = pad;
    n->attr_dims = {in_h, in_w};
    return n;
}

NodePtr conv2d_kernel_grad(const NodePtr& grad_out, const NodePtr& input, int stride, int pad,
                           std::vector<std::size_t> kernel_dims) {
    auto n = make_node(
        Op::kConvKernelGrad,
        conv_kernel_grad_kernel(grad_out->value, input->value, stride, pad, kernel_dims),
        {grad_out, input});
    n->stride = stride;
    n->pad = pad;
    n->attr_dims = std::move(kernel_dims);
    return n;
}

NodePtr avg_pool2(const NodePtr& a) {
    return make_node(Op::kAvgPool2, avg_pool2_kernel(a->value), {a});
}

namespace {
NodePtr upsample2q(const NodePtr& a) {
    return make_node(Op::kUpsample2Q, upsample2q_kernel(a->value), {a});
}
}  // namespace

NodePtr reshape(const NodePtr& a, std::vector<std::size_t> dims) {
    Tensor v(dims, std::vector<float>(a->value.values().begin(), a->value.values().end()));
    return make_node(Op::kReshape, std::move(v), {a});
}

NodePtr sum(const NodePtr& a) { return make_node(Op::kSum, sum_kernel(a->value), {a}); }

NodePtr expand_scalar(const NodePtr& a, std::vector<std::size_t> dims) {
    if (a->value.size() != 1)
        throw ShapeError("expand_scalar: source must be scalar, got " + a->value.shape_str());
    return make_node(Op::kExpandScalar, Tensor::full(std::move(dims), a->value[0]), {a});
}

NodePtr spatial_sum(const NodePtr& a) {
    return make_node(Op::kSpatialSum, spatial_sum_kernel(a->value), {a});
}

NodePtr expand_channel(const NodePtr& a, std::size_t h, std::size_t w) {
    if (a->value.rank() != 1)
        throw ShapeError("expand_channel: source must be rank-1, got " + a->value.shape_str());
    const std::size_t c = a->value.dims()[0];
    Tensor v({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        float* vc = v.data() + ch * h * w;
        for (std::size_t i = 0; i < h * w; ++i) vc[i] = a->value[ch];
    }
    return make_node(Op::kExpandChannel, std::move(v), {a});
}

NodePtr softmax(const NodePtr& a) {
    return make_node(Op::kSoftmax, softmax_kernel(a->value), {a});
}

NodePtr log_softmax(const NodePtr& a) {
    return make_node(Op::kLogSoftmax, log_softmax_kernel(a->value), {a});
}

NodePtr softmax_cross_entropy(const NodePtr& logits, const NodePtr& target) {
    require_same_shape(logits->value, target->value, "softmax_cross_entropy");
    double s = 0.0;
    for (std::size_t i = 0; i < target->value.size(); ++i) {
        if (target->value[i] < 0.0f)
            throw ValidationError("softmax_cross_entropy: target has negative entry");
        s += double(target->value[i]);
    }
    if (std::fabs(s - 1.0) > 1e-6)
        throw ValidationError("softmax_cross_entropy: target sums to " + std::to_string(s) +
                              ", expected 1");
    return scale(sum(mul(target, log_softmax(logits))), -1.0f);
}

NodePtr total_variation(const NodePtr& a) {
    return make_node(Op::kTotalVariation, total_variation_kernel(a->value), {a});
}

namespace {

// Per-parent adjoints, expressed through the public ops so that the backward
// pass itself is differentiable. Entries may be null for parents that cannot
// receive gradients.
std::vector<NodePtr> backward(const NodePtr& n, const NodePtr& gy) {
    const auto& ps = n->parents;
    switch (n->op) {
        case Op::kAdd:
            return {gy, gy};
        case Op::kSub:
            return {gy, scale(gy, -1.0f)};
        case Op::kMul:
            return {mul(gy, ps[1]), mul(gy, ps[0])};
        case Op::kDiv:
            // d(a/b)/da = 1/b, d(a/b)/db = -(a/b)/b
            return {div(gy, ps[1]), scale(mul(gy, div(n, ps[1])), -1.0f)};
        case Op::kScale:
            return {scale(gy, n->scalar)};
        case Op::kRelu:
            // ReLU'(0) = 0; the mask is constant, second derivative vanishes.
            return {mul(gy, constant([&] {
                        Tensor m(ps[0]->value.dims());
                        for (std::size_t i = 0; i < m.size(); ++i)
                            m[i] = ps[0]->value[i] > 0.0f ? 1.0f : 0.0f;
                        return m;
                    }()))};
        case Op::kSigmoid:
            return {mul(gy, sub(n, mul(n, n)))};
        case Op::kTanh:
            return {mul(gy, sub(constant(ones_like(n->value)), mul(n, n)))};
        case Op::kExp:
            return {mul(gy, n)};
        case Op::kLog:
            return {div(gy, ps[0])};
        case Op::kSqrt:
            return {div(gy, scale(n, 2.0f))};
        case Op::kMatmul:
            return {matmul(gy, transpose(ps[1])), matmul(transpose(ps[0]), gy)};
        case Op::kTranspose:
            return {transpose(gy)};
        case Op::kConv2d: {
            const auto& xd = ps[0]->value.dims();
            return {conv2d_input_grad(gy, ps[1], n->stride, n->pad, xd[1], xd[2]),
                    conv2d_kernel_grad(gy, ps[0], n->stride, n->pad, ps[1]->value.dims())};
        }
        case Op::kConvInputGrad:
            // Bilinear in (grad_out, kernels); adjoints land back in the family.
            return {conv2d(gy, ps[1], n->stride, n->pad),
                    conv2d_kernel_grad(ps[0], gy, n->stride, n->pad, ps[1]->value.dims())};
        case Op::kConvKernelGrad: {
            const auto& xd = ps[1]->value.dims();
            return {conv2d(ps[1], gy, n->stride, n->pad),
                    conv2d_input_grad(ps[0], gy, n->stride, n->pad, xd[1], xd[2])};
        }
        case Op::kAvgPool2:
            return {upsample2q(gy)};
        case Op::kUpsample2Q:
            return {avg_pool2(gy)};
        case Op::kReshape:
            return {reshape(gy, ps[0]->value.dims())};
        case Op::kSum:
            return {expand_scalar(gy, ps[0]->value.dims())};
        case Op::kExpandScalar:
            return {sum(gy)};
        case Op::kSpatialSum: {
            const auto& xd = ps[0]->value.dims();
            return {expand_channel(gy, xd[1], xd[2])};
        }
        case Op::kExpandChannel:
            return {spatial_sum(gy)};
        case Op::kSoftmax: {
            NodePtr t = mul(n, gy);
            return {sub(t, mul(n, expand_scalar(sum(t), n->value.dims())))};
        }
        case Op::kLogSoftmax: {
            NodePtr s = softmax(ps[0]);
            return {sub(gy, mul(s, expand_scalar(sum(gy), n->value.dims())))};
        }
        case Op::kTotalVariation:
            return {mul(expand_scalar(gy, ps[0]->value.dims()), constant(tv_sign_kernel(ps[0]->value)))};
        case Op::kLeaf:
        default:
            throw Error("backward: leaf node has no rule");
    }
}

}  // namespace

std::vector<NodePtr> grad(const NodePtr& output, std::span<const NodePtr> wrt,
                          bool differentiable) {
    if (!output) throw Error("grad: null output");
    if (output->value.size() != 1)
        throw ShapeError("grad: output must be scalar, got " + output->value.shape_str());

    // Iterative post-order DFS over the requires_grad subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    {
        std::vector<std::pair<Node*, std::size_t>> stack;
        if (output->requires_grad) {
            stack.emplace_back(output.get(), 0);
            visited.insert(output.get());
        }
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                Node* p = node->parents[idx].get();
                ++idx;
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    for (const auto& w : wrt) {
        if (!w) throw Error("grad: null wrt node");
        if (w.get() != output.get() && !visited.count(w.get()))
            throw ValidationError("grad: wrt node is not reachable from the output");
    }

    std::unordered_map<Node*, NodePtr> adj;
    adj[output.get()] = constant(Tensor::scalar(1.0f));

    auto run = [&] {
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* node = *it;
            auto found = adj.find(node);
            if (found == adj.end() || node->parents.empty()) continue;
            std::vector<NodePtr> contribs = backward(node->shared_from_this(), found->second);
            for (std::size_t i = 0; i < node->parents.size(); ++i) {
                const NodePtr& parent = node->parents[i];
                if (!parent->requires_grad || !contribs[i]) continue;
                auto slot = adj.find(parent.get());
                if (slot == adj.end()) {
                    adj[parent.get()] = contribs[i];
                } else {
                    slot->second = add(slot->second, contribs[i]);
                }
            }
        }
    };

    if (differentiable) {
        run();
    } else {
        NoGradGuard guard;
        run();
    }

    std::vector<NodePtr> result;
    result.reserve(wrt.size());
    for (const auto& w : wrt) {
        auto found = adj.find(w.get());
        if (found != adj.end()) {
            result.push_back(found->second);
        } else {
            result.push_back(constant(Tensor::zeros(w->value.dims())));
        }
    }
    return result;
}

std::vector<Tensor> grad_values(const NodePtr& output, std::span<const NodePtr> wrt) {
    auto nodes = grad(output, wrt, /*differentiable=*/false);
    std::vector<Tensor> out;
    out.reserve(nodes.size());
    for (auto& n : nodes) out.push_back(std::move(n->value));
    return out;
}

}  // namespace fedleak::ad
