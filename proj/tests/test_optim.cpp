#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedleak/error.hpp"
#include "fedleak/optim.hpp"
#include "testutil.hpp"

using namespace fedleak;
using optim::OptimizerConfig;

namespace {

// direct Gaussian-elimination solve (the linear-solve oracle)
std::vector<double> solve3(double A[3][3], double b[3]) {
    double m[3][4];
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) m[i][j] = A[i][j];
        m[i][3] = b[i];
    }
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
        std::swap(m[col], m[piv]);
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double f = m[r][col] / m[col][col];
            for (int j = col; j < 4; ++j) m[r][j] -= f * m[col][j];
        }
    }
    return {m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};
}

}  // namespace

TEST_CASE("lbfgs: exact quadratic ||x - c||^2 in <= 5 iterations") {
    Tensor c({4}, {1.0f, -2.0f, 0.5f, 3.0f});
    auto fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& g) {
        g.assign(1, Tensor(xs[0].dims()));
        double v = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            const double d = double(xs[0][i]) - double(c[i]);
            v += d * d;
            g[0][i] = float(2.0 * d);
        }
        return v;
    };
    auto f = [&](std::span<const Tensor> xs) {
        std::vector<Tensor> g;
        return fg(xs, g);
    };
    OptimizerConfig cfg;
    cfg.max_iters = 5;
    cfg.tolerance = 1e-8;
    auto res = optim::lbfgs_minimize(fg, f, {Tensor({4}, {7, 7, 7, 7})}, cfg);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(std::fabs(double(res.x[0][i]) - double(c[i])) < 1e-6);
    CHECK(res.iterations <= 5);
}

TEST_CASE("lbfgs: SPD quadratic matches the direct linear solve") {
    double A[3][3] = {{4, 1, 0}, {1, 3, 1}, {0, 1, 2}};
    double b[3] = {1, 2, 3};
    auto expect = solve3(A, b);

    auto fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& g) {
        g.assign(1, Tensor({3}));
        double v = 0.0;
        double Ax[3] = {0, 0, 0};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) Ax[i] += A[i][j] * double(xs[0][std::size_t(j)]);
        for (int i = 0; i < 3; ++i) {
            v += 0.5 * double(xs[0][std::size_t(i)]) * Ax[i] - b[i] * double(xs[0][std::size_t(i)]);
            g[0][std::size_t(i)] = float(Ax[i] - b[i]);
        }
        return v;
    };
    auto f = [&](std::span<const Tensor> xs) {
        std::vector<Tensor> g;
        return fg(xs, g);
    };
    OptimizerConfig cfg;
    cfg.max_iters = 50;
    cfg.tolerance = 1e-9;
    auto res = optim::lbfgs_minimize(fg, f, {Tensor({3})}, cfg);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(std::fabs(double(res.x[0][i]) - expect[i]) < 1e-6);
}

TEST_CASE("lbfgs: Rosenbrock from (-1.2, 1) within 200 iterations") {
    auto fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& g) {
        const double x = xs[0][0], y = xs[0][1];
        g.assign(1, Tensor({2}));
        g[0][0] = float(-2.0 * (1.0 - x) - 400.0 * x * (y - x * x));
        g[0][1] = float(200.0 * (y - x * x));
        return (1.0 - x) * (1.0 - x) + 100.0 * (y - x * x) * (y - x * x);
    };
    auto f = [&](std::span<const Tensor> xs) {
        std::vector<Tensor> g;
        return fg(xs, g);
    };
    OptimizerConfig cfg;
    cfg.max_iters = 200;
    cfg.tolerance = 1e-9;
    auto res = optim::lbfgs_minimize(fg, f, {Tensor({2}, {-1.2f, 1.0f})}, cfg);
    CHECK(std::fabs(double(res.x[0][0]) - 1.0) < 1e-5);
    CHECK(std::fabs(double(res.x[0][1]) - 1.0) < 1e-5);
    CHECK(res.iterations <= 200);

    // Armijo descent: trace is non-increasing
    for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i] <= res.trace[i - 1]);
    CHECK(int(res.trace.size()) == res.iterations);
}

TEST_CASE("lbfgs: non-finite loss aborts with iteration index") {
    auto fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& g) {
        g.assign(1, Tensor({1}, {1.0f}));
        return std::log(double(xs[0][0]));  // nan for negative arguments
    };
    auto f = [&](std::span<const Tensor> xs) {
        std::vector<Tensor> g;
        return fg(xs, g);
    };
    OptimizerConfig cfg;
    cfg.max_iters = 10;
    try {
        (void)optim::lbfgs_minimize(fg, f, {Tensor({1}, {-1.0f})}, cfg);
        FAIL("expected OptimAbort");
    } catch (const OptimAbort& e) {
        CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
    }
}

TEST_CASE("adam: one analytic step on f(x) = x^2") {
    auto fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& g) {
        g.assign(1, Tensor({1}, {float(2.0 * xs[0][0])}));
        return double(xs[0][0]) * double(xs[0][0]);
    };
    OptimizerConfig cfg;
    cfg.kind = optim::OptKind::kAdam;
    cfg.max_iters = 1;
    cfg.lr = 0.1;
    cfg.tolerance = 0.0;
    auto res = optim::adam_minimize(fg, {Tensor({1}, {1.0f})}, cfg);
    // x1 = 1 - lr * mhat / (sqrt(vhat) + eps) = 1 - 0.1 * (2 / (2 + 1e-8))
    CHECK(double(res.x[0][0]) == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adam: zero gradient is a fixed point") {
    auto fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& g) {
        (void)xs;
        g.assign(1, Tensor({3}));
        return 1.0;
    };
    OptimizerConfig cfg;
    cfg.kind = optim::OptKind::kAdam;
    cfg.max_iters = 25;
    cfg.lr = 0.5;
    cfg.tolerance = 0.0;
    Tensor x0({3}, {1, 2, 3});
    auto res = optim::adam_minimize(fg, {x0}, cfg);
    CHECK(res.x[0].bit_equal(x0));
}

TEST_CASE("adam: reaches ||x|| < 1e-3 on a convex bowl within 500 steps") {
    auto fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& g) {
        g.assign(1, Tensor(xs[0].dims()));
        double v = 0.0;
        for (std::size_t i = 0; i < xs[0].size(); ++i) {
            v += double(xs[0][i]) * double(xs[0][i]);
            g[0][i] = float(2.0 * xs[0][i]);
        }
        return v;
    };
    OptimizerConfig cfg;
    cfg.kind = optim::OptKind::kAdam;
    cfg.max_iters = 500;
    cfg.lr = 0.05;
    cfg.tolerance = 0.0;
    auto res = optim::adam_minimize(fg, {Tensor({5}, {1, -2, 0.5f, 1.5f, -0.3f})}, cfg);
    double norm = 0.0;
    for (std::size_t i = 0; i < 5; ++i) norm += double(res.x[0][i]) * double(res.x[0][i]);
    CHECK(std::sqrt(norm) < 1e-3);
    CHECK(res.trace.back() <= res.trace.front());
}

TEST_CASE("optimizers are deterministic") {
    auto fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& g) {
        g.assign(1, Tensor(xs[0].dims()));
        double v = 0.0;
        for (std::size_t i = 0; i < xs[0].size(); ++i) {
            const double x = xs[0][i];
            v += std::sin(x) + 0.5 * x * x;
            g[0][i] = float(std::cos(x) + x);
        }
        return v;
    };
    auto f = [&](std::span<const Tensor> xs) {
        std::vector<Tensor> g;
        return fg(xs, g);
    };
    OptimizerConfig cfg;
    cfg.max_iters = 30;
    Tensor x0({4}, {2, -1, 0.5f, 1});
    auto a = optim::lbfgs_minimize(fg, f, {x0}, cfg);
    auto b = optim::lbfgs_minimize(fg, f, {x0}, cfg);
    CHECK(a.trace == b.trace);
    CHECK(a.x[0].bit_equal(b.x[0]));

    OptimizerConfig ca = cfg;
    ca.kind = optim::OptKind::kAdam;
    ca.lr = 0.05;
    auto c = optim::adam_minimize(fg, {x0}, ca);
    auto d = optim::adam_minimize(fg, {x0}, ca);
    CHECK(c.trace == d.trace);
    CHECK(c.x[0].bit_equal(d.x[0]));
}

TEST_CASE("clamped iterates stay inside [0,1]") {
    // minimum outside the box at x = 2; projected iterates must remain valid
    auto fg = [&](std::span<const Tensor> xs, std::vector<Tensor>& g) {
        g.assign(1, Tensor(xs[0].dims()));
        double v = 0.0;
        for (std::size_t i = 0; i < xs[0].size(); ++i) {
            const double d = double(xs[0][i]) - 2.0;
            v += d * d;
            g[0][i] = float(2.0 * d);
        }
        return v;
    };
    auto f = [&](std::span<const Tensor> xs) {
        std::vector<Tensor> g;
        return fg(xs, g);
    };
    OptimizerConfig cfg;
    cfg.max_iters = 40;
    auto res = optim::lbfgs_minimize(fg, f, {Tensor({3}, {0.5f, 0.1f, 0.9f})}, cfg, {true});
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(res.x[0][i] >= 0.0f);
        CHECK(res.x[0][i] <= 1.0f);
        CHECK(res.x[0][i] == doctest::Approx(1.0));  // box face nearest the minimum
    }
    for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i] <= res.trace[i - 1]);
}

TEST_CASE("sgd_step") {
    Tensor p({2}, {1, 1});
    Tensor g({2}, {1, -1});
    Tensor out = optim::sgd_step(p, g, 0.5f);
    CHECK(out[0] == 0.5f);
    CHECK(out[1] == 1.5f);

    // lr = 0 -> unchanged
    CHECK(optim::sgd_step(p, g, 0.0f).bit_equal(p));

    // two sequential steps ~ one step with summed gradients
    Tensor g2({2}, {0.3f, 0.7f});
    Tensor two = optim::sgd_step(optim::sgd_step(p, g, 0.1f), g2, 0.1f);
    Tensor sum({2}, {g[0] + g2[0], g[1] + g2[1]});
    Tensor one = optim::sgd_step(p, sum, 0.1f);
    CHECK(two[0] == doctest::Approx(one[0]).epsilon(1e-7));
    CHECK(two[1] == doctest::Approx(one[1]).epsilon(1e-7));

    CHECK_THROWS_AS(optim::sgd_step(p, Tensor({3}), 0.1f), ShapeError);
}

TEST_CASE("config validation") {
    OptimizerConfig cfg;
    cfg.max_iters = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.max_iters = 1;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.lr = 1.0;
    cfg.adam_beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
