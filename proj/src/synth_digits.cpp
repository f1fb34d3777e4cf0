#include "gradmix/synth_digits.hpp"

#include <cmath>

#include "gradmix/rng.hpp"

namespace gradmix {

namespace {

constexpr std::size_t kImg = 28;
constexpr std::size_t kGlyphW = 5, kGlyphH = 7;

// 5x7 pixel font, one row string per glyph line.
constexpr const char* kGlyphs[10][kGlyphH] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},  // 0
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},  // 1
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},  // 2
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},  // 3
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},  // 4
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},  // 5
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},  // 6
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},  // 7
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},  // 8
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},  // 9
};

// Bilinear sample of the binary glyph grid; zero outside.
double glyph_sample(int digit, double gy, double gx) {
    const double fy = std::floor(gy), fx = std::floor(gx);
    const long iy = static_cast<long>(fy), ix = static_cast<long>(fx);
    const double wy = gy - fy, wx = gx - fx;
    auto cell = [&](long y, long x) -> double {
        if (y < 0 || x < 0 || y >= static_cast<long>(kGlyphH) || x >= static_cast<long>(kGlyphW))
            return 0.0;
        return kGlyphs[digit][y][x] == '1' ? 1.0 : 0.0;
    };
    return (1 - wy) * (1 - wx) * cell(iy, ix) + (1 - wy) * wx * cell(iy, ix + 1) +
           wy * (1 - wx) * cell(iy + 1, ix) + wy * wx * cell(iy + 1, ix + 1);
}

double smoothstep(double lo, double hi, double v) {
    const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

void render_digit(int digit, Rng& rng, const DigitGenOptions& o, double* out) {
    const double theta = rng.uniform(-o.max_rotation_deg, o.max_rotation_deg) * M_PI / 180.0;
    const double sx = 2.9 * (1.0 + rng.uniform(-o.scale_jitter, o.scale_jitter));
    const double sy = 2.9 * (1.0 + rng.uniform(-o.scale_jitter, o.scale_jitter));
    const double shear = rng.uniform(-o.shear_max, o.shear_max);
    const double tx = rng.uniform(-o.translate_max, o.translate_max);
    const double ty = rng.uniform(-o.translate_max, o.translate_max);
    const double thick = 0.40 + rng.uniform(-o.thickness_jitter, o.thickness_jitter);
    const double ink = rng.uniform(o.ink_min, 1.0);
    const double wfy = rng.uniform(0.6, 1.4), wfx = rng.uniform(0.6, 1.4);
    const double wpy = rng.uniform(0.0, 2.0 * M_PI), wpx = rng.uniform(0.0, 2.0 * M_PI);
    const double way = rng.uniform(0.3, 1.0) * o.warp_amp;
    const double wax = rng.uniform(0.3, 1.0) * o.warp_amp;

    const double c = std::cos(theta), s = std::sin(theta);
    const double cy_img = (kImg - 1) / 2.0 + ty;
    const double cx_img = (kImg - 1) / 2.0 + tx;
    const double cy_g = (kGlyphH - 1) / 2.0;
    const double cx_g = (kGlyphW - 1) / 2.0;

    double buf[kImg * kImg];
    for (std::size_t y = 0; y < kImg; ++y) {
        for (std::size_t x = 0; x < kImg; ++x) {
            // Sinusoidal warp in image space, then inverse affine into glyph space.
            const double yy = static_cast<double>(y) +
                              way * std::sin(2.0 * M_PI * (static_cast<double>(x) / kImg) * wfy + wpy);
            const double xx = static_cast<double>(x) +
                              wax * std::sin(2.0 * M_PI * (static_cast<double>(y) / kImg) * wfx + wpx);
            const double dy = yy - cy_img;
            const double dx = xx - cx_img;
            double u = c * dx + s * dy;   // rotate by -theta
            double v = -s * dx + c * dy;
            u -= shear * v;               // undo shear
            const double gx = u / sx + cx_g;
            const double gy = v / sy + cy_g;
            const double field = glyph_sample(digit, gy, gx);
            buf[y * kImg + x] = ink * smoothstep(thick - 0.22, thick + 0.22, field);
        }
    }

    // Separable [1 2 1]/4 blur to soften stroke edges.
    double tmp[kImg * kImg];
    for (std::size_t y = 0; y < kImg; ++y) {
        for (std::size_t x = 0; x < kImg; ++x) {
            const double l = x > 0 ? buf[y * kImg + x - 1] : 0.0;
            const double r = x + 1 < kImg ? buf[y * kImg + x + 1] : 0.0;
            tmp[y * kImg + x] = 0.25 * l + 0.5 * buf[y * kImg + x] + 0.25 * r;
        }
    }
    for (std::size_t y = 0; y < kImg; ++y) {
        for (std::size_t x = 0; x < kImg; ++x) {
            const double t = y > 0 ? tmp[(y - 1) * kImg + x] : 0.0;
            const double b = y + 1 < kImg ? tmp[(y + 1) * kImg + x] : 0.0;
            out[y * kImg + x] = std::clamp(0.25 * t + 0.5 * tmp[y * kImg + x] + 0.25 * b, 0.0, 1.0);
        }
    }
}

}  // namespace

LabeledDataset generate_digits(const std::vector<int>& classes, std::size_t per_class,
                               std::uint64_t seed, const DigitGenOptions& opts) {
    for (int c : classes) {
        if (c < 0 || c > 9) throw std::invalid_argument("generate_digits: classes must be 0..9");
    }
    if (per_class == 0) throw std::invalid_argument("generate_digits: per_class must be >= 1");

    LabeledDataset ds;
    ds.domain.name = "synthetic-digits";
    ds.domain.label_space = classes;
    const std::size_t n = classes.size() * per_class;
    ds.images = Tensor({n, kImg, kImg, 1});
    ds.labels.reserve(n);
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(classes[ci]) * 1000003ULL + i));
            render_digit(classes[ci], rng, opts, ds.images.data.data() + row * kImg * kImg);
            ds.labels.push_back(static_cast<int>(ci));
        }
    }
    return ds;
}

}  // namespace gradmix
