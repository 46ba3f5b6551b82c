#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedleak/tensor.hpp"

namespace fedleak::data {

/// One image with its class label; pixels in [0,1], C in {1,3}.
struct ImageSample {
    Tensor image;  // [CxHxW]
    int label = 0;
    std::string source_id;
};

/// Loads a binary PGM (P5) or PPM (P6) file with maxval 255. Pixels map to
/// [0,1] by v/255; comments and arbitrary header whitespace are tolerated.
ImageSample load_image(const std::string& path);

/// Writes [0,1] pixels with round-half-up quantization; single-channel
/// images become P5, three-channel images P6.
void save_image(const Tensor& image, const std::string& path);

/// Bilinear resize with half-pixel centers: s = (d + 0.5) * in/out - 0.5,
/// clamped to the valid source range.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

Tensor normalize(const Tensor& image, std::span<const float> mean, std::span<const float> stdev);
Tensor denormalize(const Tensor& image, std::span<const float> mean, std::span<const float> stdev);

/// Per-channel mean and standard deviation over a set of images.
std::pair<std::vector<float>, std::vector<float>> channel_stats(std::span<const ImageSample> set);

/// Deterministic 3x32x32 synthetic image: smooth low-frequency background
/// plus class-dependent geometry with seeded jitter.
///   class 0: one bright ellipse      class 1: two ellipses
///   class 2: ring                    class 3: ring with interior blob
ImageSample generate_phantom(int class_id, std::uint64_t seed);

constexpr int kPhantomClasses = 4;

// ---- binary tensor container (MPFT) ----
// magic "MPFT" | version u8=1 | dtype u8=0 (f32) | reserved u16=0 |
// ndim u32 LE | ndim x u32 LE dims | row-major f32 LE payload.

void write_tensor(const Tensor& t, const std::string& path);
Tensor read_tensor(const std::string& path);

/// Multiple named records in one file: u32 name length + name bytes + one
/// MPFT block per record (used for parameter sets and round records).
void write_named_tensors(std::span<const std::pair<std::string, Tensor>> entries,
                         const std::string& path);
std::vector<std::pair<std::string, Tensor>> read_named_tensors(const std::string& path);

// ---- dataset directory layout: root/<class_name>/<id>.ppm ----

void write_dataset_dir(const std::string& root, std::span<const ImageSample> samples,
                       std::span<const std::string> class_names);

/// Scans class subdirectories in sorted order; labels follow that order.
std::vector<ImageSample> load_dataset_dir(const std::string& root);

}  // namespace fedleak::data
