#pragma once

#include <cstdint>
#include <vector>

#include "gradmix/datasets.hpp"

namespace gradmix {

// Procedural digit-style image generator: glyphs rendered at 28x28 under
// random affine distortion, sinusoidal warp, and stroke jitter. Fully
// self-contained, no external data.
struct DigitGenOptions {
    double max_rotation_deg = 14.0;
    double scale_jitter = 0.18;
    double shear_max = 0.20;
    double translate_max = 2.2;
    double warp_amp = 1.0;       // sinusoidal displacement amplitude, pixels
    double thickness_jitter = 0.14;
    double ink_min = 0.70;       // stroke intensity lower bound
};

LabeledDataset generate_digits(const std::vector<int>& classes, std::size_t per_class,
                               std::uint64_t seed, const DigitGenOptions& opts = {});

}  // namespace gradmix
