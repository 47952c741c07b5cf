#include "foodrec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "foodrec/augment.hpp"
#include "foodrec/binio.hpp"
#include "foodrec/error.hpp"
#include "foodrec/image_io.hpp"

namespace fs = std::filesystem;

namespace foodrec {

Tensor PackedDataset::record_tensor(std::size_t i) const {
    const Record& r = records[i];
    Tensor t({height, width, channels});
    float* out = t.data();
    const std::size_t n = r.pixels.size();
    for (std::size_t j = 0; j < n; ++j)
        out[j] = static_cast<float>(r.pixels[j]) / 255.0f;
    return t;
}

std::vector<int> PackedDataset::labels() const {
    std::vector<int> out(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) out[i] = records[i].label;
    return out;
}

DatasetManifest ingest_directory(const std::string& root) {
    if (!fs::is_directory(root)) raise(Errc::io_error, "not a directory: " + root);
    std::vector<std::string> classes;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) classes.push_back(entry.path().filename().string());
    std::sort(classes.begin(), classes.end()); // bytewise, deterministic indices
    if (classes.empty()) raise(Errc::empty_input, "no class subdirectories in " + root);

    DatasetManifest m;
    m.classes = classes;
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        std::vector<std::string> paths;
        for (const auto& entry : fs::directory_iterator(fs::path(root) / classes[ci])) {
            if (!entry.is_regular_file()) continue;
            const std::string p = entry.path().string();
            if (!has_image_extension(p)) continue;
            std::ifstream probe(p, std::ios::binary);
            if (!probe) {
                ++m.warnings;
                continue;
            }
            paths.push_back(p);
        }
        std::sort(paths.begin(), paths.end());
        if (paths.empty())
            raise(Errc::empty_input, "class directory has no readable images: " + classes[ci]);
        for (auto& p : paths) m.items.push_back({std::move(p), static_cast<int>(ci)});
    }
    return m;
}

Tensor load_resize(const std::string& path, int out_h, int out_w) {
    const RawImage raw = decode_image(path);
    Tensor img({raw.height, raw.width, 3});
    float* d = img.data();
    for (std::size_t i = 0; i < raw.rgb.size(); ++i)
        d[i] = static_cast<float>(raw.rgb[i]) / 255.0f;
    return resize_bilinear(img, out_h, out_w);
}

std::pair<std::vector<int>, std::vector<int>>
stratified_split_indices(const std::vector<int>& labels, int class_count, double train_frac,
                         std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0))
        raise(Errc::invalid_argument, "train_frac must be in (0,1)");
    std::vector<std::vector<int>> buckets(static_cast<std::size_t>(class_count));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count)
            raise(Errc::out_of_range, "label out of range: " + std::to_string(labels[i]));
        buckets[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
    }
    Rng rng(seed);
    std::vector<int> train, test;
    for (int c = 0; c < class_count; ++c) {
        auto& bucket = buckets[static_cast<std::size_t>(c)];
        if (bucket.size() < 2)
            raise(Errc::invalid_argument,
                  "class " + std::to_string(c) + " has fewer than 2 items");
        rng.shuffle(bucket);
        const auto n_train = static_cast<std::size_t>(
            std::floor(train_frac * static_cast<double>(bucket.size())));
        for (std::size_t i = 0; i < bucket.size(); ++i)
            (i < n_train ? train : test).push_back(bucket[i]);
    }
    return {std::move(train), std::move(test)};
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  double train_frac, std::uint64_t seed) {
    std::vector<int> labels(manifest.items.size());
    for (std::size_t i = 0; i < manifest.items.size(); ++i)
        labels[i] = manifest.items[i].class_index;
    auto [tr, te] = stratified_split_indices(labels, static_cast<int>(manifest.classes.size()),
                                             train_frac, seed);
    DatasetManifest a, b;
    a.classes = manifest.classes;
    b.classes = manifest.classes;
    for (int i : tr) a.items.push_back(manifest.items[static_cast<std::size_t>(i)]);
    for (int i : te) b.items.push_back(manifest.items[static_cast<std::size_t>(i)]);
    return {std::move(a), std::move(b)};
}

std::pair<PackedDataset, PackedDataset> split_packed(const PackedDataset& data,
                                                     double train_frac, std::uint64_t seed) {
    auto [tr, te] = stratified_split_indices(data.labels(),
                                             static_cast<int>(data.class_names.size()),
                                             train_frac, seed);
    PackedDataset a, b;
    a.width = b.width = data.width;
    a.height = b.height = data.height;
    a.channels = b.channels = data.channels;
    a.class_names = b.class_names = data.class_names;
    for (int i : tr) a.records.push_back(data.records[static_cast<std::size_t>(i)]);
    for (int i : te) b.records.push_back(data.records[static_cast<std::size_t>(i)]);
    return {std::move(a), std::move(b)};
}

PackedDataset pack_manifest(const DatasetManifest& manifest, int size) {
    PackedDataset out;
    out.width = static_cast<std::uint16_t>(size);
    out.height = static_cast<std::uint16_t>(size);
    out.channels = 3;
    out.class_names = manifest.classes;
    out.records.reserve(manifest.items.size());
    for (const auto& item : manifest.items) {
        const Tensor t = load_resize(item.path, size, size);
        PackedDataset::Record rec;
        rec.label = static_cast<std::uint8_t>(item.class_index);
        rec.pixels.resize(t.size());
        const float* d = t.data();
        for (std::size_t i = 0; i < t.size(); ++i) {
            float v = d[i] * 255.0f + 0.5f;
            if (v < 0.0f) v = 0.0f;
            if (v > 255.0f) v = 255.0f;
            rec.pixels[i] = static_cast<std::uint8_t>(v);
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

void pack(const DatasetManifest& manifest, const std::string& path, int size) {
    save_packed(pack_manifest(manifest, size), path);
}

namespace {
constexpr char kMagic[7] = "FIMG1";
} // magic is "FIMG1\0": the literal includes the terminating NUL

void save_packed(const PackedDataset& data, const std::string& path) {
    if (data.class_names.empty()) raise(Errc::empty_input, "packed dataset has no classes");
    auto os = binio::open_out(path);
    binio::write_bytes(os, kMagic, 6);
    binio::write_u32(os, static_cast<std::uint32_t>(data.records.size()));
    binio::write_u16(os, data.width);
    binio::write_u16(os, data.height);
    binio::write_u8(os, data.channels);
    binio::write_u8(os, static_cast<std::uint8_t>(data.class_names.size()));
    for (const auto& name : data.class_names) binio::write_string(os, name);
    const std::size_t px = data.pixel_count();
    for (const auto& rec : data.records) {
        if (rec.label >= data.class_names.size())
            raise(Errc::label_overflow, "record label exceeds class count");
        if (rec.pixels.size() != px)
            raise(Errc::shape_inconsistent, "record pixel size does not match header");
        binio::write_u8(os, rec.label);
        binio::write_bytes(os, rec.pixels.data(), px);
    }
    if (!os) raise(Errc::io_error, "write failed: " + path);
}

PackedDataset load_packed(const std::string& path) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, "FIMG1", "packed dataset");
    PackedDataset out;
    const std::uint32_t count = binio::read_u32(is, "record count");
    out.width = binio::read_u16(is, "width");
    out.height = binio::read_u16(is, "height");
    out.channels = binio::read_u8(is, "channels");
    const std::uint8_t nclasses = binio::read_u8(is, "class count");
    if (out.width == 0 || out.height == 0 || out.channels == 0 || nclasses == 0)
        raise(Errc::shape_inconsistent, "zero extent in packed dataset header");
    for (unsigned i = 0; i < nclasses; ++i)
        out.class_names.push_back(binio::read_string(is, "class name"));
    const std::size_t px = out.pixel_count();
    out.records.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto& rec = out.records[i];
        rec.label = binio::read_u8(is, "record label");
        if (rec.label >= nclasses)
            raise(Errc::label_overflow, "record " + std::to_string(i) + " label " +
                                            std::to_string(int(rec.label)) +
                                            " exceeds class count " + std::to_string(int(nclasses)));
        rec.pixels.resize(px);
        binio::read_bytes(is, rec.pixels.data(), px, "record pixels");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
    float r, g, b;
};

// Classes 0/1, 2/3 and 4/5 are shape twins with luma-matched colors
// (0.299r + 0.587g + 0.114b equal within the pair).
constexpr Rgb kClassColor[10] = {
    {0.80f, 0.10f, 0.10f},  // 0 disk, red        luma 0.309
    {0.10f, 0.4566f, 0.10f},// 1 disk, green      luma 0.309
    {0.15f, 0.15f, 0.90f},  // 2 ring, blue       luma 0.236
    {0.376f, 0.20f, 0.05f}, // 3 ring, brown      luma 0.236
    {0.60f, 0.10f, 0.60f},  // 4 triangle, magenta luma 0.307
    {0.10f, 0.374f, 0.50f}, // 5 triangle, teal    luma 0.307
    {0.75f, 0.75f, 0.75f},  // 6 checker (light cells)
    {0.85f, 0.85f, 0.85f},  // 7 diagonal stripes
    {0.85f, 0.75f, 0.20f},  // 8 cross, yellow
    {0.55f, 0.25f, 0.80f},  // 9 double bar, purple
};

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

// Signed distance to the class shape, in pixels; p is in shape-local
// coordinates (rotated/centered), radius r. Negative means inside.
float shape_distance(int cls, float px, float py, float r, bool& use_alt_tone) {
    use_alt_tone = false;
    const float len = std::sqrt(px * px + py * py);
    switch (cls) {
        case 0:
        case 1:
            return len - r; // disk
        case 2:
        case 3:
            return std::max(len - r, 0.55f * r - len); // ring
        case 4:
        case 5: {
            // equilateral triangle
            const float k = 1.7320508f; // sqrt(3)
            float x = std::fabs(px) - r;
            float y = py + r / k;
            if (x + k * y > 0.0f) {
                const float nx = (x - k * y) * 0.5f;
                const float ny = (-k * x - y) * 0.5f;
                x = nx;
                y = ny;
            }
            x -= std::min(std::max(x, -2.0f * r), 0.0f);
            const float d = std::sqrt(x * x + y * y);
            return y > 0.0f ? -d : d;
        }
        case 6: { // checker square
            const float d = std::max(std::fabs(px), std::fabs(py)) - r;
            if (d < 0.0f) {
                const float cell = std::max(r * 0.5f, 1.0f);
                const int ix = static_cast<int>(std::floor(px / cell));
                const int iy = static_cast<int>(std::floor(py / cell));
                use_alt_tone = ((ix + iy) & 1) != 0;
            }
            return d;
        }
        case 7: { // diagonal stripes inside a square window
            const float d = std::max(std::fabs(px), std::fabs(py)) - r;
            if (d < 0.0f) {
                const float period = std::max(r * 0.45f, 2.0f);
                const float s = px + py;
                const float phase = s - period * std::floor(s / period);
                if (phase > period * 0.5f) use_alt_tone = true;
            }
            return d;
        }
        case 8: { // cross: union of two axis-aligned bars
            const float hw = 0.32f * r;
            const float dh = std::max(std::fabs(px) - r, std::fabs(py) - hw);
            const float dv = std::max(std::fabs(px) - hw, std::fabs(py) - r);
            return std::min(dh, dv);
        }
        default: { // 9: two horizontal bars
            const float hh = 0.22f * r;
            const float off = 0.55f * r;
            const float d1 = std::max(std::fabs(px) - r, std::fabs(py - off) - hh);
            const float d2 = std::max(std::fabs(px) - r, std::fabs(py + off) - hh);
            return std::min(d1, d2);
        }
    }
}

} // namespace

PackedDataset make_synthetic(int classes, int per_class, std::uint64_t seed, int size) {
    if (classes != 10)
        raise(Errc::invalid_argument, "synthetic benchmark defines exactly 10 classes");
    if (per_class < 2) raise(Errc::invalid_argument, "per_class must be >= 2");
    if (size < 16) raise(Errc::invalid_argument, "synthetic size must be >= 16");

    PackedDataset out;
    out.width = static_cast<std::uint16_t>(size);
    out.height = static_cast<std::uint16_t>(size);
    out.channels = 3;
    for (int c = 0; c < classes; ++c) out.class_names.push_back("class" + std::to_string(c));
    out.records.reserve(static_cast<std::size_t>(classes) * per_class);

    // Placement, size and orientation vary widely (more than 40 samples per
    // class can cover), which is exactly the variation affine expansion can
    // synthesize. Pixel noise stays small so gradient descriptors see the
    // shape structure; a smooth ramp varies the background instead.
    Rng rng(seed);
    const float s = static_cast<float>(size);
    for (int cls = 0; cls < classes; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            const float cx = s * 0.5f + static_cast<float>(rng.next_range(-0.20, 0.20)) * s;
            const float cy = s * 0.5f + static_cast<float>(rng.next_range(-0.20, 0.20)) * s;
            const float radius = 0.26f * s * static_cast<float>(rng.next_range(0.55, 1.35));
            const float rot = static_cast<float>(rng.next_range(-0.52, 0.52)); // ~±30 deg
            const float jr = static_cast<float>(rng.next_range(-0.08, 0.08));
            const float jg = static_cast<float>(rng.next_range(-0.08, 0.08));
            const float jb = static_cast<float>(rng.next_range(-0.08, 0.08));
            const float bg = static_cast<float>(rng.next_range(0.10, 0.28));
            const float ramp_dir = static_cast<float>(rng.next_range(0.0, 6.2831853));
            const float ramp_amp = static_cast<float>(rng.next_range(0.0, 0.12));

            const Rgb base = kClassColor[cls];
            const Rgb fg{clamp01(base.r + jr), clamp01(base.g + jg), clamp01(base.b + jb)};
            const Rgb alt{clamp01(fg.r - 0.5f), clamp01(fg.g - 0.5f), clamp01(fg.b - 0.5f)};
            const float cr = std::cos(rot), sr = std::sin(rot);
            const float rdx = std::cos(ramp_dir) / s, rdy = std::sin(ramp_dir) / s;

            PackedDataset::Record rec;
            rec.label = static_cast<std::uint8_t>(cls);
            rec.pixels.resize(out.pixel_count());
            std::uint8_t* px = rec.pixels.data();
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const float dx = static_cast<float>(x) - cx;
                    const float dy = static_cast<float>(y) - cy;
                    const float lx = cr * dx + sr * dy;
                    const float ly = -sr * dx + cr * dy;
                    bool alt_tone = false;
                    const float d = shape_distance(cls, lx, ly, radius, alt_tone);
                    float alpha = 0.5f - d; // ~1px soft edge
                    alpha = alpha < 0.0f ? 0.0f : (alpha > 1.0f ? 1.0f : alpha);
                    const Rgb& col = alt_tone ? alt : fg;
                    const float noise = static_cast<float>(rng.next_range(-0.02, 0.02));
                    const float ramp =
                        ramp_amp * (rdx * static_cast<float>(x) + rdy * static_cast<float>(y));
                    const float bgv = bg + ramp + noise;
                    const float r = clamp01(bgv + alpha * (col.r - bgv));
                    const float g = clamp01(bgv + alpha * (col.g - bgv));
                    const float b = clamp01(bgv + alpha * (col.b - bgv));
                    *px++ = static_cast<std::uint8_t>(r * 255.0f + 0.5f);
                    *px++ = static_cast<std::uint8_t>(g * 255.0f + 0.5f);
                    *px++ = static_cast<std::uint8_t>(b * 255.0f + 0.5f);
                }
            }
            out.records.push_back(std::move(rec));
        }
    }
    return out;
}

} // namespace foodrec
