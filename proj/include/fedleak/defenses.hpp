#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "fedleak/nn.hpp"

namespace fedleak::defenses {

enum class DefenseKind { kNone, kLaplace, kGaussian, kTopk };

std::string kind_name(DefenseKind k);

/// Client-side gradient transformation applied before sharing. Noise kinds
/// take either a raw scale (b or sigma) or a paper-style level; exactly one
/// of the two must be set.
struct DefenseConfig {
    DefenseKind kind = DefenseKind::kNone;
    std::optional<double> scale;
    std::optional<int> level;
    double keep_fraction = 1.0;

    /// Raw noise scale after resolving an optional level.
    double resolved_scale() const;
    void validate() const;
};

/// b = level * 1e-4; a fixed convention for level-style configuration.
double level_to_scale(int level);

nn::GradientUpdate laplace_perturb(const nn::GradientUpdate& update, double b, std::uint64_t seed);
nn::GradientUpdate gaussian_perturb(const nn::GradientUpdate& update, double sigma,
                                    std::uint64_t seed);

/// Keeps the ceil(keep_fraction * n) largest-magnitude entries per parameter
/// tensor and zeroes the rest; magnitude ties keep the lower flat index.
nn::GradientUpdate topk_compress(const nn::GradientUpdate& update, double keep_fraction);

nn::GradientUpdate apply_defense(const nn::GradientUpdate& update, const DefenseConfig& cfg,
                                 std::uint64_t seed);

}  // namespace fedleak::defenses
