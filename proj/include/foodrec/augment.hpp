#ifndef FOODREC_AUGMENT_HPP
#define FOODREC_AUGMENT_HPP

#include <array>
#include <vector>

#include "foodrec/rng.hpp"
#include "foodrec/tensor.hpp"

namespace foodrec {

/// Bounds for the random affine expansion of training images.
struct AugmentConfig {
    double max_rotation_deg = 20.0;
    double max_translate_frac = 0.10;
    double scale_min = 0.9;
    double scale_max = 1.1;
    float fill_value = 0.0f;

    void validate() const;
    bool is_identity() const {
        return max_rotation_deg == 0.0 && max_translate_frac == 0.0 && scale_min == 1.0 &&
               scale_max == 1.0;
    }
};

/// One sampled (rotation, translation, scale) triple.
struct AffineParams {
    double rotation_deg = 0.0;
    double translate_x = 0.0; // pixels
    double translate_y = 0.0; // pixels
    double scale = 1.0;
};

/// Row-major 2x3 matrix mapping output pixel coordinates (x, y, 1) to source
/// coordinates: sx = m[0]x + m[1]y + m[2], sy = m[3]x + m[4]y + m[5].
using AffineMatrix = std::array<double, 6>;

/// Draws rotation, translate_x, translate_y, scale: exactly four uniform
/// draws in that order, even for degenerate bounds.
AffineParams sample_affine(const AugmentConfig& config, int width, int height, Rng& rng);

/// Inverse warp about the image center ((w-1)/2, (h-1)/2): the forward
/// transform scales by s, rotates by rotation_deg, then translates.
AffineMatrix affine_matrix(const AffineParams& params, int width, int height);

/// Bilinear resample through the matrix. Source locations outside
/// [0,w-1]x[0,h-1] produce fill_value. Output shape equals input shape.
Tensor warp_bilinear(const Tensor& image, const AffineMatrix& m, float fill_value);

/// Per-image params are drawn sequentially from rng before the warps fan out,
/// so results are independent of the worker count.
Tensor expand_batch(const Tensor& images, const AugmentConfig& config, Rng& rng);

struct ExpandedBatch {
    Tensor images;
    std::vector<int> labels;
};

/// Labels ride along unchanged.
ExpandedBatch expand_batch(const Tensor& images, std::vector<int> labels,
                           const AugmentConfig& config, Rng& rng);

/// Bilinear resize with edge clamping (half-pixel centers). Used for the
/// fixed-resolution ingest path and for training at reduced input sizes.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

} // namespace foodrec

#endif
