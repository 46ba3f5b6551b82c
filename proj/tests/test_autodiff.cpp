#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedleak/autodiff.hpp"
#include "fedleak/error.hpp"
#include "testutil.hpp"

using namespace fedleak;
using ad::NodePtr;
using testutil::finite_diff;
using testutil::random_tensor;
using testutil::rel_error;

namespace {

double eval_scalar(const std::function<NodePtr(NodePtr)>& build, const Tensor& x) {
    ad::NoGradGuard guard;
    return build(ad::constant(x))->value[0];
}

// first-order check of a scalar-valued graph builder at x
void check_gradient(const std::function<NodePtr(NodePtr)>& build, const Tensor& x,
                    double tol = 1e-3) {
    NodePtr leaf = ad::variable(x);
    NodePtr out = build(leaf);
    const NodePtr wrt[] = {leaf};
    Tensor g = ad::grad_values(out, wrt)[0];
    Tensor fd = finite_diff([&](const Tensor& t) { return eval_scalar(build, t); }, x);
    CHECK(rel_error(g, fd) < tol);
}

}  // namespace

TEST_CASE("matmul values") {
    // identity case
    NodePtr a = ad::constant(Tensor({2, 2}, {1, 2, 3, 4}));
    NodePtr eye = ad::constant(Tensor({2, 2}, {1, 0, 0, 1}));
    CHECK(ad::matmul(a, eye)->value.bit_equal(a->value));

    // hand-arithmetic oracle
    NodePtr b = ad::constant(Tensor({2, 2}, {5, 6, 7, 8}));
    Tensor ab = ad::matmul(a, b)->value;
    CHECK(ab[0] == 19.0f);
    CHECK(ab[1] == 22.0f);
    CHECK(ab[2] == 43.0f);
    CHECK(ab[3] == 50.0f);

    // zero case
    NodePtr z = ad::constant(Tensor({2, 3}));
    NodePtr c = ad::constant(Tensor({3, 4}, std::vector<float>(12, 2.5f)));
    Tensor zc = ad::matmul(z, c)->value;
    for (std::size_t i = 0; i < zc.size(); ++i) CHECK(zc[i] == 0.0f);

    CHECK_THROWS_AS(ad::matmul(a, c), ShapeError);
}

TEST_CASE("conv2d values") {
    // window-sum oracle: 3x3 input 1..9, 2x2 ones kernel
    Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k({1, 1, 2, 2}, {1, 1, 1, 1});
    Tensor y = ad::conv2d(ad::constant(x), ad::constant(k), 1, 0)->value;
    REQUIRE(y.dims() == std::vector<std::size_t>({1, 2, 2}));
    CHECK(y[0] == 12.0f);
    CHECK(y[1] == 16.0f);
    CHECK(y[2] == 24.0f);
    CHECK(y[3] == 28.0f);

    // zero kernel
    Tensor kz({2, 1, 2, 2});
    Tensor yz = ad::conv2d(ad::constant(x), ad::constant(kz), 1, 0)->value;
    for (std::size_t i = 0; i < yz.size(); ++i) CHECK(yz[i] == 0.0f);

    // 1x1 identity kernel reproduces the input
    Tensor k1({1, 1, 1, 1}, {1});
    CHECK(ad::conv2d(ad::constant(x), ad::constant(k1), 1, 0)->value.bit_equal(x));

    // kernel larger than padded input
    Tensor kbig({1, 1, 5, 5});
    CHECK_THROWS_AS(ad::conv2d(ad::constant(x), ad::constant(kbig), 1, 0), ShapeError);
}

TEST_CASE("elementwise values") {
    Tensor v({3}, {-1, 0, 2});
    Tensor r = ad::relu(ad::constant(v))->value;
    CHECK(r[0] == 0.0f);
    CHECK(r[1] == 0.0f);
    CHECK(r[2] == 2.0f);

    CHECK(ad::sigmoid(ad::constant(Tensor::scalar(0)))->value[0] == doctest::Approx(0.5));
    CHECK(ad::tanh_(ad::constant(Tensor::scalar(0)))->value[0] == doctest::Approx(0.0));
    // closed form: sigmoid(ln 3) = 0.75
    CHECK(ad::sigmoid(ad::constant(Tensor::scalar(std::log(3.0f))))->value[0] ==
          doctest::Approx(0.75).epsilon(1e-6));

    CHECK_THROWS_AS(ad::add(ad::constant(Tensor({2})), ad::constant(Tensor({3}))), ShapeError);
}

TEST_CASE("softmax cross entropy values") {
    // uniform logits, one-hot target -> ln K
    for (std::size_t K : {2, 5, 10}) {
        Tensor logits({K});
        Tensor target({K});
        target[0] = 1.0f;
        double loss =
            ad::softmax_cross_entropy(ad::constant(logits), ad::constant(target))->value[0];
        CHECK(loss == doctest::Approx(std::log(double(K))).epsilon(1e-6));
    }

    // saturated-correct limit
    double tiny = ad::softmax_cross_entropy(ad::constant(Tensor({2}, {20, 0})),
                                            ad::constant(Tensor({2}, {1, 0})))
                      ->value[0];
    CHECK(tiny < 1e-8);
    CHECK(tiny >= 0.0);

    // non-normalized target rejected
    CHECK_THROWS_AS(ad::softmax_cross_entropy(ad::constant(Tensor({2})),
                                              ad::constant(Tensor({2}, {0.5f, 0.6f}))),
                    ValidationError);
}

TEST_CASE("cross entropy gradient equals softmax minus target") {
    Tensor logits({3}, {1, 2, 3});
    Tensor target({3}, {0, 0, 1});
    NodePtr leaf = ad::variable(logits);
    NodePtr loss = ad::softmax_cross_entropy(leaf, ad::constant(target));
    const NodePtr wrt[] = {leaf};
    Tensor g = ad::grad_values(loss, wrt)[0];

    Tensor sm = ad::softmax(ad::constant(logits))->value;
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(g[i] == doctest::Approx(double(sm[i]) - double(target[i])).epsilon(1e-5));

    // finite-difference oracle
    auto build = [&](NodePtr x) { return ad::softmax_cross_entropy(x, ad::constant(target)); };
    check_gradient(build, logits);
}

TEST_CASE("simple gradients") {
    // f(x) = sum(x^2), grad = 2x
    Tensor x({3}, {1, 2, 3});
    NodePtr leaf = ad::variable(x);
    NodePtr f = ad::sum(ad::mul(leaf, leaf));
    const NodePtr wrt[] = {leaf};
    Tensor g = ad::grad_values(f, wrt)[0];
    CHECK(g[0] == doctest::Approx(2.0));
    CHECK(g[1] == doctest::Approx(4.0));
    CHECK(g[2] == doctest::Approx(6.0));

    // f constant in x (multiplied by zeros) -> zero gradient
    NodePtr fz = ad::sum(ad::mul(leaf, ad::constant(Tensor({3}))));
    Tensor gz = ad::grad_values(fz, wrt)[0];
    for (std::size_t i = 0; i < 3; ++i) CHECK(gz[i] == 0.0f);

    // unreachable wrt -> error
    NodePtr other = ad::variable(Tensor({2}));
    const NodePtr wrt2[] = {other};
    CHECK_THROWS_AS(ad::grad(f, wrt2, false), ValidationError);

    // non-scalar output -> error
    CHECK_THROWS_AS(ad::grad(ad::mul(leaf, leaf), wrt, false), ShapeError);
}

TEST_CASE("per-op finite difference suite: 100 random small inputs") {
    CounterRng rng(2024);
    int cases = 0;
    while (cases < 100) {
        const std::size_t n = 2 + rng.next_below(6);
        Tensor x = random_tensor({n}, rng, -1.5f, 1.5f);
        const int which = cases % 10;
        std::function<NodePtr(NodePtr)> build;
        switch (which) {
            case 0: build = [](NodePtr v) { return ad::sum(ad::sigmoid(v)); }; break;
            case 1: build = [](NodePtr v) { return ad::sum(ad::tanh_(v)); }; break;
            case 2: build = [](NodePtr v) { return ad::sum(ad::exp_(ad::scale(v, 0.5f))); }; break;
            case 3:
                // keep log/sqrt domains positive
                build = [](NodePtr v) {
                    return ad::sum(ad::log_(ad::add(ad::mul(v, v),
                                                    ad::constant(Tensor::full(v->value.dims(), 1.0f)))));
                };
                break;
            case 4:
                build = [](NodePtr v) {
                    return ad::sum(ad::sqrt_(ad::add(ad::mul(v, v),
                                                     ad::constant(Tensor::full(v->value.dims(), 0.5f)))));
                };
                break;
            case 5: build = [](NodePtr v) { return ad::sum(ad::softmax(v)); }; break;
            case 6: build = [](NodePtr v) { return ad::scale(ad::sum(ad::log_softmax(v)), 0.25f); }; break;
            case 7:
                build = [](NodePtr v) {
                    return ad::sum(ad::div(v, ad::constant(Tensor::full(v->value.dims(), 2.0f))));
                };
                break;
            case 8:
                build = [](NodePtr v) { return ad::sum(ad::mul(ad::sigmoid(v), ad::tanh_(v))); };
                break;
            default:
                build = [](NodePtr v) { return ad::sum(ad::mul(v, ad::sigmoid(v))); };
                break;
        }
        check_gradient(build, x);
        ++cases;
    }
}

TEST_CASE("matmul / transpose / reshape gradients") {
    CounterRng rng(7);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        auto build = [&](NodePtr v) {
            NodePtr prod = ad::matmul(v, ad::constant(b));
            return ad::sum(ad::mul(prod, prod));
        };
        check_gradient(build, a);

        auto build_b = [&](NodePtr v) {
            NodePtr prod = ad::matmul(ad::constant(a), v);
            return ad::sum(ad::mul(ad::transpose(prod), ad::transpose(prod)));
        };
        check_gradient(build_b, b);

        auto build_r = [&](NodePtr v) {
            return ad::sum(ad::sigmoid(ad::reshape(v, {12})));
        };
        check_gradient(build_r, a);
    }
}

TEST_CASE("conv family gradients (first order)") {
    CounterRng rng(11);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            Tensor x = random_tensor({2, 5, 5}, rng);
            Tensor k = random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f);
            auto build_x = [&](NodePtr v) {
                NodePtr y = ad::conv2d(v, ad::constant(k), stride, pad);
                return ad::sum(ad::mul(y, y));
            };
            check_gradient(build_x, x);
            auto build_k = [&](NodePtr v) {
                NodePtr y = ad::conv2d(ad::constant(x), v, stride, pad);
                return ad::sum(ad::mul(y, y));
            };
            check_gradient(build_k, k);
        }
    }
}

TEST_CASE("pool / expand / spatial ops gradients") {
    CounterRng rng(13);
    Tensor x = random_tensor({2, 4, 4}, rng);
    check_gradient([](NodePtr v) {
        NodePtr p = ad::avg_pool2(v);
        return ad::sum(ad::mul(p, p));
    }, x);
    check_gradient([](NodePtr v) {
        NodePtr s = ad::spatial_sum(v);
        return ad::sum(ad::mul(s, s));
    }, x);

    Tensor c = random_tensor({3}, rng);
    check_gradient([](NodePtr v) {
        NodePtr e = ad::expand_channel(v, 4, 5);
        return ad::sum(ad::sigmoid(e));
    }, c);

    Tensor s = random_tensor({1}, rng);
    check_gradient([](NodePtr v) {
        NodePtr e = ad::expand_scalar(v, {2, 3});
        return ad::sum(ad::mul(e, e));
    }, s);

    CHECK_THROWS_AS(ad::avg_pool2(ad::constant(Tensor({1, 3, 4}))), ShapeError);
}

TEST_CASE("total variation") {
    // constant image -> 0
    CHECK(ad::total_variation(ad::constant(Tensor::full({3, 4, 4}, 0.7f)))->value[0] == 0.0f);

    // direct-sum oracle: [[0,1],[0,1]] -> 2
    Tensor img({1, 2, 2}, {0, 1, 0, 1});
    CHECK(ad::total_variation(ad::constant(img))->value[0] == doctest::Approx(2.0));

    // homogeneity: TV(a x) = |a| TV(x)
    CounterRng rng(5);
    Tensor x = random_tensor({2, 5, 5}, rng);
    const double tv1 = ad::total_variation(ad::constant(x))->value[0];
    Tensor x7 = x;
    for (std::size_t i = 0; i < x7.size(); ++i) x7[i] *= -7.0f;
    const double tv7 = ad::total_variation(ad::constant(x7))->value[0];
    CHECK(tv7 == doctest::Approx(7.0 * tv1).epsilon(1e-5));

    CHECK_THROWS_AS(ad::total_variation(ad::constant(Tensor({1, 1, 4}))), ShapeError);

    // subgradient vs finite differences away from kinks
    Tensor far = random_tensor({1, 4, 4}, rng, 0.0f, 1.0f);
    check_gradient([](NodePtr v) { return ad::total_variation(v); }, far, 2e-3);
}

TEST_CASE("adjoint linearity") {
    CounterRng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor x = random_tensor({4}, rng);
        const float a = rng.next_uniform(-2, 2), b = rng.next_uniform(-2, 2);
        auto gf = [&](float ca, float cb) {
            NodePtr leaf = ad::variable(x);
            NodePtr f = ad::sum(ad::sigmoid(leaf));
            NodePtr g = ad::sum(ad::mul(leaf, leaf));
            NodePtr combo = ad::add(ad::scale(f, ca), ad::scale(g, cb));
            const NodePtr wrt[] = {leaf};
            return ad::grad_values(combo, wrt)[0];
        };
        Tensor combined = gf(a, b);
        Tensor fa = gf(1, 0), gb = gf(0, 1);
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(combined[i] == doctest::Approx(a * fa[i] + b * gb[i]).epsilon(1e-6).scale(1.0));
    }
}

TEST_CASE("tape replay determinism") {
    CounterRng rng(23);
    Tensor x = random_tensor({2, 6, 6}, rng);
    Tensor k = random_tensor({2, 2, 3, 3}, rng);
    auto run = [&] {
        NodePtr leaf = ad::variable(x);
        NodePtr y = ad::conv2d(leaf, ad::constant(k), 1, 1);
        NodePtr out = ad::sum(ad::mul(ad::sigmoid(y), y));
        const NodePtr wrt[] = {leaf};
        return std::make_pair(out->value, ad::grad_values(out, wrt)[0]);
    };
    auto [v1, g1] = run();
    auto [v2, g2] = run();
    CHECK(v1.bit_equal(v2));
    CHECK(g1.bit_equal(g2));
}

TEST_CASE("second order: differentiable backward on conv and matmul") {
    // D(x) = sum over params of ||dL/dtheta - g0||^2; dD/dx via the recorded
    // backward pass must match finite differences of the first-order map.
    CounterRng rng(31);
    Tensor x0 = random_tensor({1, 4, 4}, rng, 0.0f, 1.0f);
    Tensor k0 = random_tensor({2, 1, 3, 3}, rng, -0.4f, 0.4f);
    Tensor w0 = random_tensor({2, 8}, rng, -0.4f, 0.4f);
    Tensor target({2}, {1, 0});

    auto inner_grads = [&](const Tensor& x, bool differentiable,
                           std::vector<NodePtr>* params_out, NodePtr* x_out) {
        NodePtr xn = ad::variable(x);
        NodePtr kn = ad::variable(k0);
        NodePtr wn = ad::variable(w0);
        NodePtr h = ad::sigmoid(ad::conv2d(xn, kn, 1, 0));  // [2x2x2]
        NodePtr flat = ad::reshape(h, {8, 1});
        NodePtr logits = ad::reshape(ad::matmul(wn, flat), {2});
        NodePtr loss = ad::softmax_cross_entropy(logits, ad::constant(target));
        std::vector<NodePtr> params = {kn, wn};
        auto grads = ad::grad(loss, params, differentiable);
        if (params_out) *params_out = params;
        if (x_out) *x_out = xn;
        return grads;
    };

    // g0 from a different input
    Tensor x_ref = random_tensor({1, 4, 4}, rng, 0.0f, 1.0f);
    auto g0_nodes = inner_grads(x_ref, false, nullptr, nullptr);
    std::vector<Tensor> g0;
    for (auto& n : g0_nodes) g0.push_back(n->value);

    auto mismatch_value = [&](const Tensor& x) {
        auto gi = inner_grads(x, false, nullptr, nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < gi.size(); ++i) {
            for (std::size_t j = 0; j < gi[i]->value.size(); ++j) {
                const double d = double(gi[i]->value[j]) - double(g0[i][j]);
                s += d * d;
            }
        }
        return s;
    };

    NodePtr xn;
    std::vector<NodePtr> params;
    auto gi = inner_grads(x0, true, &params, &xn);
    NodePtr mismatch;
    for (std::size_t i = 0; i < gi.size(); ++i) {
        NodePtr d = ad::sub(gi[i], ad::constant(g0[i]));
        NodePtr term = ad::sum(ad::mul(d, d));
        mismatch = mismatch ? ad::add(mismatch, term) : term;
    }
    const NodePtr wrt[] = {xn};
    Tensor gx = ad::grad_values(mismatch, wrt)[0];
    Tensor fd = finite_diff(mismatch_value, x0);
    CHECK(rel_error(gx, fd) < 1e-3);

    // stationary point: x0 equal to the input that produced g0
    {
        NodePtr xs;
        std::vector<NodePtr> ps;
        auto gis = inner_grads(x_ref, true, &ps, &xs);
        NodePtr mm;
        for (std::size_t i = 0; i < gis.size(); ++i) {
            NodePtr d = ad::sub(gis[i], ad::constant(g0[i]));
            NodePtr term = ad::sum(ad::mul(d, d));
            mm = mm ? ad::add(mm, term) : term;
        }
        const NodePtr wrts[] = {xs};
        Tensor gzero = ad::grad_values(mm, wrts)[0];
        CHECK(l2_norm(gzero) < 1e-6);
    }
}

TEST_CASE("second order: hand-computed linear model") {
    // f(x) = w^T x, L = f^2 / 2, dL/dw = f x, D(x) = ||f x - g0||^2.
    // dD/dx_j = sum_i 2 (f x_i - g0_i) (w_j x_i + f delta_ij).
    Tensor w({2}, {0.5f, -1.0f});
    Tensor x({2}, {1.0f, 2.0f});
    Tensor g0({2}, {0.3f, -0.2f});

    NodePtr xn = ad::variable(x);
    NodePtr wn = ad::variable(w);
    NodePtr f = ad::sum(ad::mul(wn, xn));
    NodePtr loss = ad::scale(ad::mul(f, f), 0.5f);
    const NodePtr params[] = {wn};
    auto inner = ad::grad(loss, params, true);
    NodePtr d = ad::sub(inner[0], ad::constant(g0));
    NodePtr D = ad::sum(ad::mul(d, d));
    const NodePtr wrt[] = {xn};
    Tensor gx = ad::grad_values(D, wrt)[0];

    const double fv = 0.5 * 1.0 + (-1.0) * 2.0;  // -1.5
    for (std::size_t j = 0; j < 2; ++j) {
        double expect = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
            const double resid = fv * double(x[i]) - double(g0[i]);
            const double jac = double(w[j]) * double(x[i]) + (i == j ? fv : 0.0);
            expect += 2.0 * resid * jac;
        }
        CHECK(gx[j] == doctest::Approx(expect).epsilon(1e-4));
    }
}
