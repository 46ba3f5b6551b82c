#include "fedleak/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedleak/error.hpp"
#include "fedleak/rng.hpp"

namespace fedleak::defenses {

std::string kind_name(DefenseKind k) {
    switch (k) {
        case DefenseKind::kNone: return "none";
        case DefenseKind::kLaplace: return "laplace";
        case DefenseKind::kGaussian: return "gaussian";
        case DefenseKind::kTopk: return "topk";
    }
    return "?";
}

double level_to_scale(int level) {
    if (level <= 0) throw ValidationError("defense: noise level must be > 0");
    return double(level) * 1e-4;
}

double DefenseConfig::resolved_scale() const {
    if (kind != DefenseKind::kLaplace && kind != DefenseKind::kGaussian) return 0.0;
    if (level.has_value()) return level_to_scale(*level);
    return scale.value_or(0.0);
}

void DefenseConfig::validate() const {
    if (kind == DefenseKind::kLaplace || kind == DefenseKind::kGaussian) {
        if (scale.has_value() == level.has_value())
            throw ValidationError("defense: exactly one of scale/level must be set for " +
                                  kind_name(kind));
        if (scale.has_value() && *scale < 0.0)
            throw ValidationError("defense: noise scale must be >= 0");
        if (level.has_value() && *level <= 0)
            throw ValidationError("defense: noise level must be > 0");
    }
    if (kind == DefenseKind::kTopk && (keep_fraction <= 0.0 || keep_fraction > 1.0))
        throw ValidationError("defense: keep_fraction must lie in (0, 1]");
}

namespace {

// Noise is drawn per entry across the flattened update, one stream per
// (update, seed), so the realization is independent of tensor boundaries.
template <typename DrawFn>
nn::GradientUpdate add_noise(const nn::GradientUpdate& update, DrawFn&& draw) {
    nn::GradientUpdate out = update;
    for (auto& [name, t] : out.entries)
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += draw();
    return out;
}

}  // namespace

nn::GradientUpdate laplace_perturb(const nn::GradientUpdate& update, double b, std::uint64_t seed) {
    if (b < 0.0) throw ValidationError("laplace_perturb: scale must be >= 0");
    if (b == 0.0) return update;
    CounterRng rng(seed_hash({0x6c61706cULL, seed}));
    return add_noise(update, [&] { return rng.next_laplace(float(b)); });
}

nn::GradientUpdate gaussian_perturb(const nn::GradientUpdate& update, double sigma,
                                    std::uint64_t seed) {
    if (sigma < 0.0) throw ValidationError("gaussian_perturb: sigma must be >= 0");
    if (sigma == 0.0) return update;
    CounterRng rng(seed_hash({0x67617573ULL, seed}));
    return add_noise(update, [&] { return rng.next_gaussian(0.0f, float(sigma)); });
}

nn::GradientUpdate topk_compress(const nn::GradientUpdate& update, double keep_fraction) {
    if (keep_fraction <= 0.0 || keep_fraction > 1.0)
        throw ValidationError("topk_compress: keep_fraction must lie in (0, 1]");
    nn::GradientUpdate out = update;
    for (auto& [name, t] : out.entries) {
        const std::size_t n = t.size();
        const std::size_t k = std::min(n, std::size_t(std::ceil(keep_fraction * double(n))));
        if (k == n) continue;
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              const float ma = std::fabs(t[a]), mb = std::fabs(t[b]);
                              if (ma != mb) return ma > mb;
                              return a < b;  // ties keep the lower flat index
                          });
        Tensor kept(t.dims());
        for (std::size_t i = 0; i < k; ++i) kept[idx[i]] = t[idx[i]];
        t = std::move(kept);
    }
    return out;
}

nn::GradientUpdate apply_defense(const nn::GradientUpdate& update, const DefenseConfig& cfg,
                                 std::uint64_t seed) {
    cfg.validate();
    switch (cfg.kind) {
        case DefenseKind::kNone: return update;
        case DefenseKind::kLaplace: return laplace_perturb(update, cfg.resolved_scale(), seed);
        case DefenseKind::kGaussian: return gaussian_perturb(update, cfg.resolved_scale(), seed);
        case DefenseKind::kTopk: return topk_compress(update, cfg.keep_fraction);
    }
    return update;
}

}  // namespace fedleak::defenses
