#include "foodrec/augment.hpp"

#include <cmath>

#include "foodrec/error.hpp"
#include "foodrec/parallel.hpp"

namespace foodrec {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void AugmentConfig::validate() const {
    if (!(max_rotation_deg >= 0.0) || !std::isfinite(max_rotation_deg))
        raise(Errc::invalid_argument, "max_rotation_deg must be finite and >= 0");
    if (!(max_translate_frac >= 0.0) || !std::isfinite(max_translate_frac))
        raise(Errc::invalid_argument, "max_translate_frac must be finite and >= 0");
    if (!(scale_min > 0.0) || !(scale_min <= 1.0) || !(scale_max >= 1.0) ||
        !(scale_min <= scale_max) || !std::isfinite(scale_max))
        raise(Errc::invalid_argument, "scale bounds must satisfy 0 < scale_min <= 1 <= scale_max");
    if (!(fill_value >= 0.0f) || !(fill_value <= 1.0f))
        raise(Errc::invalid_argument, "fill_value must be in [0,1]");
}

AffineParams sample_affine(const AugmentConfig& config, int width, int height, Rng& rng) {
    AffineParams p;
    p.rotation_deg = rng.next_range(-config.max_rotation_deg, config.max_rotation_deg);
    const double tx_bound = config.max_translate_frac * width;
    const double ty_bound = config.max_translate_frac * height;
    p.translate_x = rng.next_range(-tx_bound, tx_bound);
    p.translate_y = rng.next_range(-ty_bound, ty_bound);
    p.scale = rng.next_range(config.scale_min, config.scale_max);
    return p;
}

AffineMatrix affine_matrix(const AffineParams& params, int width, int height) {
    if (params.scale == 0.0) raise(Errc::invalid_argument, "affine scale must be nonzero");
    // src = R(-theta) * ((p - c) / s) + c - t
    const double cx = (width - 1) * 0.5;
    const double cy = (height - 1) * 0.5;
    const double theta = params.rotation_deg * kPi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double inv = 1.0 / params.scale;
    // R(-theta) = [cos  sin; -sin  cos]
    const double a = cs * inv, b = sn * inv;
    const double d = -sn * inv, e = cs * inv;
    AffineMatrix m;
    m[0] = a;
    m[1] = b;
    m[2] = cx - (a * cx + b * cy) - params.translate_x;
    m[3] = d;
    m[4] = e;
    m[5] = cy - (d * cx + e * cy) - params.translate_y;
    return m;
}

Tensor warp_bilinear(const Tensor& image, const AffineMatrix& m, float fill_value) {
    if (image.rank() != 3)
        raise(Errc::shape_mismatch, "warp expects (H,W,C), got " + image.shape_string());
    const int h = image.extent(0), w = image.extent(1), c = image.extent(2);
    Tensor out({h, w, c});
    const float* src = image.data();
    float* dst = out.data();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double sx = m[0] * x + m[1] * y + m[2];
            const double sy = m[3] * x + m[4] * y + m[5];
            float* po = dst + (static_cast<std::size_t>(y) * w + x) * c;
            if (sx < 0.0 || sx > w - 1 || sy < 0.0 || sy > h - 1) {
                for (int ch = 0; ch < c; ++ch) po[ch] = fill_value;
                continue;
            }
            const int x0 = static_cast<int>(sx);
            const int y0 = static_cast<int>(sy);
            const int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
            const int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
            const float fx = static_cast<float>(sx - x0);
            const float fy = static_cast<float>(sy - y0);
            const float w00 = (1.0f - fy) * (1.0f - fx);
            const float w01 = (1.0f - fy) * fx;
            const float w10 = fy * (1.0f - fx);
            const float w11 = fy * fx;
            const float* r0 = src + (static_cast<std::size_t>(y0) * w) * c;
            const float* r1 = src + (static_cast<std::size_t>(y1) * w) * c;
            for (int ch = 0; ch < c; ++ch) {
                po[ch] = w00 * r0[x0 * c + ch] + w01 * r0[x1 * c + ch] +
                         w10 * r1[x0 * c + ch] + w11 * r1[x1 * c + ch];
            }
        }
    }
    return out;
}

Tensor expand_batch(const Tensor& images, const AugmentConfig& config, Rng& rng) {
    if (images.rank() != 4)
        raise(Errc::shape_mismatch, "expand_batch expects (B,H,W,C), got " + images.shape_string());
    if (images.extent(0) == 0) raise(Errc::empty_input, "expand_batch: empty batch");
    config.validate();
    const int b = images.extent(0), h = images.extent(1), w = images.extent(2),
              c = images.extent(3);
    std::vector<AffineMatrix> mats(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i)
        mats[static_cast<std::size_t>(i)] = affine_matrix(sample_affine(config, w, h, rng), w, h);
    Tensor out({b, h, w, c});
    const std::size_t stride = static_cast<std::size_t>(h) * w * c;
    par::parallel_for(b, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
            Tensor img({h, w, c},
                       std::vector<float>(images.data() + i * stride,
                                          images.data() + (i + 1) * stride));
            Tensor warped = warp_bilinear(img, mats[static_cast<std::size_t>(i)],
                                          config.fill_value);
            std::copy(warped.data(), warped.data() + stride, out.data() + i * stride);
        }
    });
    return out;
}

ExpandedBatch expand_batch(const Tensor& images, std::vector<int> labels,
                           const AugmentConfig& config, Rng& rng) {
    if (images.rank() != 4 || images.extent(0) != static_cast<int>(labels.size()))
        raise(Errc::shape_mismatch, "expand_batch: label count does not match batch");
    return {expand_batch(images, config, rng), std::move(labels)};
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 3)
        raise(Errc::shape_mismatch, "resize expects (H,W,C), got " + image.shape_string());
    const int h = image.extent(0), w = image.extent(1), c = image.extent(2);
    if (out_h <= 0 || out_w <= 0) raise(Errc::invalid_argument, "resize target must be positive");
    if (out_h == h && out_w == w) return image;
    Tensor out({out_h, out_w, c});
    const float* src = image.data();
    float* dst = out.data();
    const double sy_scale = static_cast<double>(h) / out_h;
    const double sx_scale = static_cast<double>(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double sy = (y + 0.5) * sy_scale - 0.5;
        if (sy < 0.0) sy = 0.0;
        if (sy > h - 1) sy = h - 1;
        const int y0 = static_cast<int>(sy);
        const int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
        const float fy = static_cast<float>(sy - y0);
        for (int x = 0; x < out_w; ++x) {
            double sx = (x + 0.5) * sx_scale - 0.5;
            if (sx < 0.0) sx = 0.0;
            if (sx > w - 1) sx = w - 1;
            const int x0 = static_cast<int>(sx);
            const int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
            const float fx = static_cast<float>(sx - x0);
            const float w00 = (1.0f - fy) * (1.0f - fx);
            const float w01 = (1.0f - fy) * fx;
            const float w10 = fy * (1.0f - fx);
            const float w11 = fy * fx;
            const float* r0 = src + (static_cast<std::size_t>(y0) * w) * c;
            const float* r1 = src + (static_cast<std::size_t>(y1) * w) * c;
            float* po = dst + (static_cast<std::size_t>(y) * out_w + x) * c;
            for (int ch = 0; ch < c; ++ch)
                po[ch] = w00 * r0[x0 * c + ch] + w01 * r0[x1 * c + ch] +
                         w10 * r1[x0 * c + ch] + w11 * r1[x1 * c + ch];
        }
    }
    return out;
}

} // namespace foodrec
