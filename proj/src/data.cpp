#include "fedleak/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fedleak/error.hpp"
#include "fedleak/rng.hpp"

namespace fs = std::filesystem;

namespace fedleak::data {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

struct HeaderScanner {
    const std::vector<std::uint8_t>& b;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(msg + " at byte " + std::to_string(pos));
    }

    void skip_space_and_comments() {
        while (pos < b.size()) {
            if (std::isspace(b[pos])) {
                ++pos;
            } else if (b[pos] == '#') {
                while (pos < b.size() && b[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    }

    unsigned read_uint() {
        skip_space_and_comments();
        if (pos >= b.size() || !std::isdigit(b[pos])) fail("pnm: expected integer");
        unsigned v = 0;
        while (pos < b.size() && std::isdigit(b[pos])) {
            v = v * 10 + unsigned(b[pos] - '0');
            if (v > 1000000) fail("pnm: integer out of range");
            ++pos;
        }
        return v;
    }
};

}  // namespace

ImageSample load_image(const std::string& path) {
    const auto bytes = read_file(path);
    HeaderScanner sc{bytes};
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw ParseError("pnm: bad magic in '" + path + "' at byte 0");
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    sc.pos = 2;
    const unsigned w = sc.read_uint();
    const unsigned h = sc.read_uint();
    const unsigned maxval = sc.read_uint();
    if (maxval != 255) sc.fail("pnm: maxval " + std::to_string(maxval) + " unsupported (need 255)");
    if (sc.pos >= bytes.size() || !std::isspace(bytes[sc.pos])) sc.fail("pnm: expected whitespace");
    ++sc.pos;  // exactly one whitespace byte separates header and payload

    const std::size_t need = std::size_t(w) * h * channels;
    const std::size_t have = bytes.size() - sc.pos;
    if (have < need) {
        throw ParseError("pnm: truncated payload in '" + path + "': expected " +
                         std::to_string(need) + " bytes, found " + std::to_string(have) +
                         " at byte " + std::to_string(sc.pos));
    }

    ImageSample out;
    out.image = Tensor({channels, h, w});
    const std::uint8_t* p = bytes.data() + sc.pos;
    // payload is interleaved per pixel; tensor layout is planar
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                out.image[c * h * w + y * w + x] = float(p[(y * w + x) * channels + c]) / 255.0f;
    out.source_id = fs::path(path).stem().string();
    return out;
}

void save_image(const Tensor& image, const std::string& path) {
    if (image.rank() != 3 || (image.dims()[0] != 1 && image.dims()[0] != 3))
        throw ShapeError("save_image: expected [1xHxW] or [3xHxW], got " + image.shape_str());
    const std::size_t c = image.dims()[0], h = image.dims()[1], w = image.dims()[2];
    std::string header = std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " +
                         std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + c * h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const float v = std::min(1.0f, std::max(0.0f, image[ch * h * w + y * w + x]));
                bytes.push_back(std::uint8_t(std::floor(v * 255.0f + 0.5f)));
            }
        }
    }
    write_file(path, bytes);
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
    if (image.rank() != 3) throw ShapeError("resize: expected [CxHxW], got " + image.shape_str());
    if (out_h == 0 || out_w == 0) throw ValidationError("resize: target dims must be positive");
    const std::size_t c = image.dims()[0], h = image.dims()[1], w = image.dims()[2];
    if (h == out_h && w == out_w) return image;
    Tensor out({c, out_h, out_w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* src = image.data() + ch * h * w;
        float* dst = out.data() + ch * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            double sy = (double(y) + 0.5) * double(h) / double(out_h) - 0.5;
            sy = std::min(double(h - 1), std::max(0.0, sy));
            const std::size_t y0 = std::size_t(sy);
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            const double fy = sy - double(y0);
            for (std::size_t x = 0; x < out_w; ++x) {
                double sx = (double(x) + 0.5) * double(w) / double(out_w) - 0.5;
                sx = std::min(double(w - 1), std::max(0.0, sx));
                const std::size_t x0 = std::size_t(sx);
                const std::size_t x1 = std::min(x0 + 1, w - 1);
                const double fx = sx - double(x0);
                const double v = (1.0 - fy) * ((1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1]) +
                                 fy * ((1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
                dst[y * out_w + x] = float(v);
            }
        }
    }
    return out;
}

namespace {
void check_norm_args(const Tensor& image, std::span<const float> mean, std::span<const float> stdev) {
    if (image.rank() != 3) throw ShapeError("normalize: expected [CxHxW], got " + image.shape_str());
    if (mean.size() != image.dims()[0] || stdev.size() != image.dims()[0])
        throw ShapeError("normalize: mean/std size must match channel count");
    for (float s : stdev)
        if (s <= 0.0f) throw ValidationError("normalize: std entries must be > 0");
}
}  // namespace

Tensor normalize(const Tensor& image, std::span<const float> mean, std::span<const float> stdev) {
    check_norm_args(image, mean, stdev);
    const std::size_t c = image.dims()[0], hw = image.dims()[1] * image.dims()[2];
    Tensor out(image.dims());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i)
            out[ch * hw + i] = (image[ch * hw + i] - mean[ch]) / stdev[ch];
    return out;
}

Tensor denormalize(const Tensor& image, std::span<const float> mean, std::span<const float> stdev) {
    check_norm_args(image, mean, stdev);
    const std::size_t c = image.dims()[0], hw = image.dims()[1] * image.dims()[2];
    Tensor out(image.dims());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i)
            out[ch * hw + i] = image[ch * hw + i] * stdev[ch] + mean[ch];
    return out;
}

std::pair<std::vector<float>, std::vector<float>> channel_stats(std::span<const ImageSample> set) {
    if (set.empty()) throw ValidationError("channel_stats: empty sample set");
    const std::size_t c = set[0].image.dims()[0];
    std::vector<double> sum(c, 0.0), sumsq(c, 0.0);
    std::vector<std::size_t> count(c, 0);
    for (const auto& s : set) {
        const std::size_t hw = s.image.dims()[1] * s.image.dims()[2];
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < hw; ++i) {
                const double v = s.image[ch * hw + i];
                sum[ch] += v;
                sumsq[ch] += v * v;
            }
            count[ch] += hw;
        }
    }
    std::vector<float> mean(c), stdev(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double m = sum[ch] / double(count[ch]);
        mean[ch] = float(m);
        stdev[ch] = float(std::sqrt(std::max(1e-12, sumsq[ch] / double(count[ch]) - m * m)));
    }
    return {mean, stdev};
}

namespace {

struct Blob {
    double cx, cy, rx, ry, intensity;
    bool ring = false;
    double ring_inner = 0.0;  // fraction of r
};

double coverage(const Blob& b, double u, double v) {
    const double du = (u - b.cx) / b.rx;
    const double dv = (v - b.cy) / b.ry;
    const double d = std::sqrt(du * du + dv * dv);
    auto soft = [](double dist) { return std::min(1.0, std::max(0.0, (1.08 - dist) / 0.16)); };
    if (!b.ring) return soft(d);
    return std::max(0.0, soft(d) - soft(d / b.ring_inner));
}

}  // namespace

ImageSample generate_phantom(int class_id, std::uint64_t seed) {
    if (class_id < 0 || class_id >= kPhantomClasses)
        throw ValidationError("generate_phantom: unknown class " + std::to_string(class_id));
    constexpr std::size_t kSize = 32;
    CounterRng rng(seed_hash({0x7068616e746f6dULL, std::uint64_t(class_id), seed}));

    const double base = 0.16 + rng.next_unit() * 0.02;
    const double amp = 0.02 + rng.next_unit() * 0.015;
    const double fx = 0.5 + rng.next_unit();
    const double fy = 0.5 + rng.next_unit();
    const double phx = rng.next_unit() * 2.0 * M_PI;
    const double phy = rng.next_unit() * 2.0 * M_PI;

    auto jitter = [&](double lo, double hi) { return lo + rng.next_unit() * (hi - lo); };

    std::vector<Blob> blobs;
    const double intensity = jitter(0.70, 0.80);
    switch (class_id) {
        case 0:
            blobs.push_back({jitter(0.44, 0.56), jitter(0.44, 0.56), jitter(0.14, 0.17),
                             jitter(0.14, 0.17), intensity});
            break;
        case 1:
            blobs.push_back({jitter(0.26, 0.34), jitter(0.45, 0.55), jitter(0.17, 0.20),
                             jitter(0.17, 0.20), intensity});
            blobs.push_back({jitter(0.66, 0.74), jitter(0.45, 0.55), jitter(0.17, 0.20),
                             jitter(0.17, 0.20), intensity});
            break;
        case 2:
            blobs.push_back({jitter(0.46, 0.54), jitter(0.46, 0.54), jitter(0.28, 0.33),
                             jitter(0.28, 0.33), intensity, true, jitter(0.55, 0.65)});
            break;
        case 3:
            blobs.push_back({jitter(0.46, 0.54), jitter(0.46, 0.54), jitter(0.26, 0.31),
                             jitter(0.26, 0.31), intensity, true, jitter(0.55, 0.65)});
            blobs.push_back({jitter(0.47, 0.53), jitter(0.47, 0.53), jitter(0.08, 0.11),
                             jitter(0.08, 0.11), intensity * 0.9});
            break;
    }

    const double tint[3] = {1.0, 0.85, 0.70};
    const double bg_tint[3] = {1.0, 0.95, 0.90};
    ImageSample out;
    out.label = class_id;
    out.source_id = "phantom_c" + std::to_string(class_id) + "_s" + std::to_string(seed);
    out.image = Tensor({3, kSize, kSize});
    for (std::size_t y = 0; y < kSize; ++y) {
        for (std::size_t x = 0; x < kSize; ++x) {
            const double u = (double(x) + 0.5) / kSize;
            const double v = (double(y) + 0.5) / kSize;
            const double bg =
                base + amp * std::cos(2.0 * M_PI * fx * u + phx) * std::cos(2.0 * M_PI * fy * v + phy);
            double shape = 0.0;
            for (const auto& b : blobs) shape += coverage(b, u, v) * b.intensity;
            for (std::size_t c = 0; c < 3; ++c) {
                const double val = bg * bg_tint[c] + shape * tint[c];
                out.image[c * kSize * kSize + y * kSize + x] =
                    float(std::min(1.0, std::max(0.0, val)));
            }
        }
    }
    return out;
}

// ---- MPFT container ----

namespace {

constexpr char kMagic[4] = {'M', 'P', 'F', 'T'};

void put_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(std::uint8_t(v & 0xff));
    out.push_back(std::uint8_t(v >> 8));
}

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32le(const std::vector<std::uint8_t>& b, std::size_t& pos,
                        const std::string& what) {
    if (pos + 4 > b.size())
        throw ParseError("mpft: truncated " + what + " at byte " + std::to_string(pos));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[pos + std::size_t(i)]) << (8 * i);
    pos += 4;
    return v;
}

void append_tensor_block(std::vector<std::uint8_t>& out, const Tensor& t) {
    if (!t.all_finite()) throw ValidationError("mpft: refusing to write non-finite tensor");
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(1);  // version
    out.push_back(0);  // dtype f32
    put_u16le(out, 0);
    put_u32le(out, std::uint32_t(t.rank()));
    for (std::size_t d : t.dims()) put_u32le(out, std::uint32_t(d));
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t bits;
        const float v = t[i];
        std::memcpy(&bits, &v, 4);
        put_u32le(out, bits);
    }
}

Tensor parse_tensor_block(const std::vector<std::uint8_t>& b, std::size_t& pos) {
    if (pos + 8 > b.size())
        throw ParseError("mpft: truncated header at byte " + std::to_string(pos));
    if (std::memcmp(b.data() + pos, kMagic, 4) != 0)
        throw ParseError("mpft: bad magic at byte " + std::to_string(pos));
    pos += 4;
    if (b[pos] != 1)
        throw ParseError("mpft: unsupported version " + std::to_string(b[pos]) + " at byte " +
                         std::to_string(pos));
    if (b[pos + 1] != 0)
        throw ParseError("mpft: unsupported dtype " + std::to_string(b[pos + 1]) + " at byte " +
                         std::to_string(pos + 1));
    pos += 4;  // version, dtype, reserved
    const std::uint32_t ndim = get_u32le(b, pos, "ndim");
    if (ndim > 8) throw ParseError("mpft: implausible ndim " + std::to_string(ndim));
    std::vector<std::size_t> dims(ndim);
    std::size_t count = 1;
    for (auto& d : dims) {
        d = get_u32le(b, pos, "dims");
        count *= d;
    }
    const std::size_t need = count * 4;
    if (pos + need > b.size()) {
        throw ParseError("mpft: payload expected " + std::to_string(need) + " bytes, found " +
                         std::to_string(b.size() - pos) + " at byte " + std::to_string(pos));
    }
    Tensor t(dims);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= std::uint32_t(b[pos + 4 * i + std::size_t(k)]) << (8 * k);
        float v;
        std::memcpy(&v, &bits, 4);
        t[i] = v;
    }
    pos += need;
    return t;
}

}  // namespace

void write_tensor(const Tensor& t, const std::string& path) {
    std::vector<std::uint8_t> out;
    append_tensor_block(out, t);
    write_file(path, out);
}

Tensor read_tensor(const std::string& path) {
    const auto bytes = read_file(path);
    std::size_t pos = 0;
    Tensor t = parse_tensor_block(bytes, pos);
    if (pos != bytes.size())
        throw ParseError("mpft: trailing bytes after tensor at byte " + std::to_string(pos));
    return t;
}

void write_named_tensors(std::span<const std::pair<std::string, Tensor>> entries,
                         const std::string& path) {
    std::vector<std::uint8_t> out;
    for (const auto& [name, t] : entries) {
        put_u32le(out, std::uint32_t(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        append_tensor_block(out, t);
    }
    write_file(path, out);
}

std::vector<std::pair<std::string, Tensor>> read_named_tensors(const std::string& path) {
    const auto bytes = read_file(path);
    std::vector<std::pair<std::string, Tensor>> out;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::uint32_t len = get_u32le(bytes, pos, "name length");
        if (len > 4096 || pos + len > bytes.size())
            throw ParseError("mpft: bad record name at byte " + std::to_string(pos));
        std::string name(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + len));
        pos += len;
        out.emplace_back(std::move(name), parse_tensor_block(bytes, pos));
    }
    return out;
}

// ---- dataset directory ----

void write_dataset_dir(const std::string& root, std::span<const ImageSample> samples,
                       std::span<const std::string> class_names) {
    fs::create_directories(root);
    for (const auto& name : class_names) fs::create_directories(fs::path(root) / name);
    std::size_t count = 0;
    for (const auto& s : samples) {
        if (s.label < 0 || std::size_t(s.label) >= class_names.size())
            throw ValidationError("write_dataset_dir: label out of range for sample " + s.source_id);
        const char* ext = s.image.dims()[0] == 1 ? ".pgm" : ".ppm";
        save_image(s.image, (fs::path(root) / class_names[std::size_t(s.label)] /
                             (s.source_id + ext)).string());
        ++count;
    }
    std::string manifest = "{\n  \"classes\": [";
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        if (i) manifest += ", ";
        manifest += "\"" + class_names[i] + "\"";
    }
    manifest += "],\n  \"count\": " + std::to_string(count) + "\n}\n";
    std::ofstream mf(fs::path(root) / "manifest.json");
    mf << manifest;
}

std::vector<ImageSample> load_dataset_dir(const std::string& root) {
    if (!fs::is_directory(root)) throw IoError("dataset directory '" + root + "' not found");
    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw IoError("dataset directory '" + root + "' has no class subdirectories");

    std::vector<ImageSample> out;
    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[label])) {
            const auto ext = e.path().extension().string();
            if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm"))
                files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            ImageSample s = load_image(f);
            s.label = int(label);
            s.source_id = class_dirs[label] + "/" + fs::path(f).stem().string();
            out.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace fedleak::data
