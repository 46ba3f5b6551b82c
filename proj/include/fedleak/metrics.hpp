#pragma once

#include <span>
#include <string>
#include <vector>

#include "fedleak/tensor.hpp"

namespace fedleak::metrics {

/// Mean squared elementwise difference; inputs on [0,1] display scale.
double mse(const Tensor& a, const Tensor& b);

enum class SsimMode { kGlobal, kWindowed };

/// Structural similarity with C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = 1.
/// Global mode uses one window covering the whole image per channel;
/// windowed mode averages all w x w uniform windows with stride 1.
/// Multi-channel statistics are computed per channel, then averaged.
double ssim(const Tensor& a, const Tensor& b, SsimMode mode = SsimMode::kGlobal, int window = 8);

/// Fraction of SSIM values at or above the success threshold.
double asr(std::span<const double> ssim_values, double threshold);

/// 10 log10(1 / mse); +infinity for identical inputs (serialized as "inf").
double psnr(const Tensor& a, const Tensor& b);

struct MetricRow {
    std::string image_id;
    double mse = 0.0;
    double ssim = 0.0;
    double psnr = 0.0;
    bool success = false;
};

struct MetricReport {
    std::vector<MetricRow> per_image;
    double asr = 0.0;
    double threshold = 0.9;
};

MetricReport make_report(std::vector<MetricRow> rows, double threshold);

}  // namespace fedleak::metrics
