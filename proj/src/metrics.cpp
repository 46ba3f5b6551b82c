#include "fedleak/metrics.hpp"

#include <cmath>
#include <limits>

#include "fedleak/error.hpp"

namespace fedleak::metrics {

namespace {

constexpr double kC1 = 0.01 * 0.01;  // (0.01 L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

struct ChannelView {
    const float* data;
    std::size_t h, w;
};

// Channels of a [CxHxW] tensor; rank-2 and rank-1 tensors are treated as a
// single channel.
std::vector<ChannelView> channels_of(const Tensor& t) {
    if (t.empty()) throw ShapeError("ssim: empty tensor");
    std::vector<ChannelView> out;
    if (t.rank() == 3) {
        const std::size_t c = t.dims()[0], h = t.dims()[1], w = t.dims()[2];
        for (std::size_t ch = 0; ch < c; ++ch) out.push_back({t.data() + ch * h * w, h, w});
    } else if (t.rank() == 2) {
        out.push_back({t.data(), t.dims()[0], t.dims()[1]});
    } else {
        out.push_back({t.data(), 1, t.size()});
    }
    return out;
}

double ssim_window(const ChannelView& a, const ChannelView& b, std::size_t y0, std::size_t x0,
                   std::size_t wh, std::size_t ww) {
    const double n = double(wh * ww);
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < wh; ++i) {
        for (std::size_t j = 0; j < ww; ++j) {
            sa += double(a.data[(y0 + i) * a.w + (x0 + j)]);
            sb += double(b.data[(y0 + i) * b.w + (x0 + j)]);
        }
    }
    const double mu_a = sa / n, mu_b = sb / n;
    double va = 0.0, vb = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < wh; ++i) {
        for (std::size_t j = 0; j < ww; ++j) {
            const double da = double(a.data[(y0 + i) * a.w + (x0 + j)]) - mu_a;
            const double db = double(b.data[(y0 + i) * b.w + (x0 + j)]) - mu_b;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    }
    va /= n;
    vb /= n;
    cov /= n;
    return ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
           ((mu_a * mu_a + mu_b * mu_b + kC1) * (va + vb + kC2));
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    if (a.empty()) throw ShapeError("mse: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s / double(a.size());
}

double ssim(const Tensor& a, const Tensor& b, SsimMode mode, int window) {
    require_same_shape(a, b, "ssim");
    auto ca = channels_of(a);
    auto cb = channels_of(b);
    double total = 0.0;
    for (std::size_t ch = 0; ch < ca.size(); ++ch) {
        const auto& va = ca[ch];
        const auto& vb = cb[ch];
        if (mode == SsimMode::kGlobal) {
            total += ssim_window(va, vb, 0, 0, va.h, va.w);
        } else {
            const std::size_t w = std::size_t(window);
            if (window < 1 || w > va.h || w > va.w)
                throw ShapeError("ssim: window does not fit image");
            double acc = 0.0;
            std::size_t count = 0;
            for (std::size_t y = 0; y + w <= va.h; ++y) {
                for (std::size_t x = 0; x + w <= va.w; ++x) {
                    acc += ssim_window(va, vb, y, x, w, w);
                    ++count;
                }
            }
            total += acc / double(count);
        }
    }
    return total / double(ca.size());
}

double asr(std::span<const double> ssim_values, double threshold) {
    if (ssim_values.empty()) throw ValidationError("asr: empty value list");
    if (threshold <= 0.0 || threshold > 1.0)
        throw ValidationError("asr: threshold must lie in (0, 1]");
    std::size_t hits = 0;
    for (double v : ssim_values)
        if (v >= threshold) ++hits;
    return double(hits) / double(ssim_values.size());
}

double psnr(const Tensor& a, const Tensor& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

MetricReport make_report(std::vector<MetricRow> rows, double threshold) {
    MetricReport rep;
    rep.threshold = threshold;
    std::vector<double> ssims;
    ssims.reserve(rows.size());
    for (auto& r : rows) {
        r.success = r.ssim >= threshold;
        ssims.push_back(r.ssim);
    }
    rep.per_image = std::move(rows);
    rep.asr = asr(ssims, threshold);
    return rep;
}

}  // namespace fedleak::metrics
