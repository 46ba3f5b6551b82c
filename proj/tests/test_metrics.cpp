#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedleak/error.hpp"
#include "fedleak/metrics.hpp"
#include "testutil.hpp"

using namespace fedleak;
using testutil::random_tensor;

namespace {

// Independent direct-formula SSIM for single-channel images (global mode),
// written from the definition without reusing library internals.
double ssim_oracle(const Tensor& a, const Tensor& b) {
    const double c1 = 1e-4, c2 = 9e-4;
    const std::size_t n = a.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double va = 0, vb = 0, cov = 0;
    for (std::size_t i = 0; i < n; ++i) {
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
        cov += (a[i] - ma) * (b[i] - mb);
    }
    va /= double(n);
    vb /= double(n);
    cov /= double(n);
    return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

TEST_CASE("mse basics") {
    Tensor x({2}, {0, 1});
    CHECK(metrics::mse(x, x) == 0.0);
    CHECK(metrics::mse(Tensor({2}, {0, 1}), Tensor({2}, {1, 0})) == doctest::Approx(1.0));
    // constant shift by 0.5 -> 0.25
    CHECK(metrics::mse(Tensor::full({3, 4, 4}, 0.2f), Tensor::full({3, 4, 4}, 0.7f)) ==
          doctest::Approx(0.25));
    CHECK_THROWS_AS(metrics::mse(x, Tensor({3})), ShapeError);
}

TEST_CASE("mse is zero iff tensors are equal") {
    CounterRng rng(3);
    Tensor a = random_tensor({2, 3, 3}, rng, 0.0f, 1.0f);
    Tensor b = a;
    CHECK(metrics::mse(a, b) == 0.0);
    b[5] += 0.25f;
    CHECK(metrics::mse(a, b) > 0.0);
}

TEST_CASE("ssim identities and formula cases") {
    CounterRng rng(9);
    Tensor x = random_tensor({3, 8, 8}, rng, 0.0f, 1.0f);
    CHECK(metrics::ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));

    // constant 0 vs constant 1: C1 / (1 + C1)
    Tensor zero({1, 4, 4});
    Tensor one = Tensor::full({1, 4, 4}, 1.0f);
    CHECK(metrics::ssim(zero, one) == doctest::Approx(1e-4 / 1.0001).epsilon(1e-9));

    // zero-mean x vs -x with variance >> C2 gives negative SSIM
    Tensor pm({1, 4, 4});
    for (std::size_t i = 0; i < pm.size(); ++i) pm[i] = (i % 2 == 0) ? 0.5f : -0.5f;
    Tensor mm = pm;
    for (std::size_t i = 0; i < mm.size(); ++i) mm[i] = -mm[i];
    CHECK(metrics::ssim(pm, mm) < 0.0);

    CHECK_THROWS_AS(metrics::ssim(x, Tensor({3, 4, 4})), ShapeError);
}

TEST_CASE("ssim matches the direct-formula oracle on 100 random pairs") {
    CounterRng rng(123);
    for (int rep = 0; rep < 100; ++rep) {
        Tensor a = random_tensor({1, 4, 4}, rng, 0.0f, 1.0f);
        Tensor b = random_tensor({1, 4, 4}, rng, 0.0f, 1.0f);
        CHECK(metrics::ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-9));
        // symmetry
        CHECK(metrics::ssim(a, b) == doctest::Approx(metrics::ssim(b, a)).epsilon(1e-9));
        // range
        CHECK(metrics::ssim(a, b) >= -1.0);
        CHECK(metrics::ssim(a, b) <= 1.0);
    }
}

TEST_CASE("windowed ssim with full-size window equals global") {
    CounterRng rng(77);
    Tensor a = random_tensor({3, 6, 6}, rng, 0.0f, 1.0f);
    Tensor b = random_tensor({3, 6, 6}, rng, 0.0f, 1.0f);
    CHECK(metrics::ssim(a, b, metrics::SsimMode::kWindowed, 6) ==
          doctest::Approx(metrics::ssim(a, b)).epsilon(1e-9));
    // smaller windows still land in range
    const double w = metrics::ssim(a, b, metrics::SsimMode::kWindowed, 3);
    CHECK(w >= -1.0);
    CHECK(w <= 1.0);
}

TEST_CASE("asr") {
    std::vector<double> all_one(5, 1.0);
    CHECK(metrics::asr(all_one, 0.9) == 1.0);

    std::vector<double> low(4, 0.1);
    CHECK(metrics::asr(low, 0.9) == 0.0);

    // 49 of 100 at or above 0.9 -> 0.49
    std::vector<double> mixed;
    for (int i = 0; i < 49; ++i) mixed.push_back(0.95);
    for (int i = 0; i < 51; ++i) mixed.push_back(0.5);
    CHECK(metrics::asr(mixed, 0.9) == doctest::Approx(0.49));

    CHECK_THROWS_AS(metrics::asr({}, 0.9), ValidationError);
    CHECK_THROWS_AS(metrics::asr(all_one, 0.0), ValidationError);
}

TEST_CASE("asr monotone non-increasing in threshold") {
    CounterRng rng(5);
    std::vector<double> vals;
    for (int i = 0; i < 50; ++i) vals.push_back(rng.next_unit());
    double prev = 1.0;
    for (double th = 0.05; th <= 1.0; th += 0.05) {
        const double a = metrics::asr(vals, th);
        CHECK(a <= prev + 1e-12);
        prev = a;
    }
}

TEST_CASE("psnr") {
    // mse 0.01 -> 20 dB
    Tensor a = Tensor::full({1, 2, 2}, 0.5f);
    Tensor b = Tensor::full({1, 2, 2}, 0.6f);
    CHECK(metrics::psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));

    // mse 1 -> 0 dB
    CHECK(metrics::psnr(Tensor({1, 2, 2}), Tensor::full({1, 2, 2}, 1.0f)) ==
          doctest::Approx(0.0).epsilon(1e-9));

    // identical -> +inf
    CHECK(std::isinf(metrics::psnr(a, a)));

    // strictly decreasing in mse
    Tensor c = Tensor::full({1, 2, 2}, 0.8f);
    CHECK(metrics::psnr(a, b) > metrics::psnr(a, c));
}

TEST_CASE("make_report consistency") {
    std::vector<metrics::MetricRow> rows(4);
    rows[0].ssim = 0.95;
    rows[1].ssim = 0.85;
    rows[2].ssim = 0.91;
    rows[3].ssim = 0.2;
    auto rep = metrics::make_report(rows, 0.9);
    CHECK(rep.asr == doctest::Approx(0.5));
    for (const auto& r : rep.per_image) CHECK(r.success == (r.ssim >= rep.threshold));
}
