#pragma once

// Deterministic synthetic digits: seven-segment glyphs with translation,
// per-segment intensity, stroke-thickness variation and pixel noise. The
// per-sample stream is keyed on (seed, index, split), so regenerating any
// subset gives identical pixels.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mscnn/data.hpp"

namespace mscnn::synth {

// Segment layout:  a = top, b = top-right, c = bottom-right, d = bottom,
// e = bottom-left, f = top-left, g = middle.
inline const char* kSegments[10] = {"abcdef", "bc",     "abged",   "abgcd", "fgbc",
                                    "afgcd",  "afgedc", "abc",     "abcdefg", "abcdfg"};

inline void put(Sample& s, int x, int y, double v) {
    if (x < 0 || y < 0 || x >= s.width || y >= s.height) return;
    double& px = s.pixels[static_cast<std::size_t>(y) * s.width + x];
    px = std::max(px, v);
}

inline void stroke(Sample& s, double x0, double y0, double x1, double y1, double v,
                   int thick) {
    const int steps =
        static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) * 2 + 1;
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        for (int dx = 0; dx < thick; ++dx)
            for (int dy = 0; dy < thick; ++dy) put(s, x + dx, y + dy, v);
    }
}

inline Sample render_digit(int digit, int size, std::mt19937_64& rng) {
    Sample s;
    s.width = size;
    s.height = size;
    s.label = digit;
    s.pixels.assign(static_cast<std::size_t>(size) * size, 0.0);

    const double xl = 0.30 * size, xr = 0.68 * size;
    const double yt = 0.18 * size, ym = 0.50 * size, yb = 0.80 * size;

    std::uniform_int_distribution<int> shift(-size / 10, size / 10);
    const int dx = shift(rng), dy = shift(rng);
    std::uniform_real_distribution<double> ink(170.0, 255.0);
    std::bernoulli_distribution thicker(0.5);
    const int thick = std::max(1, size / 14) + (thicker(rng) ? 1 : 0);

    for (const char* seg = kSegments[digit]; *seg; ++seg) {
        const double v = ink(rng);
        switch (*seg) {
            case 'a': stroke(s, xl + dx, yt + dy, xr + dx, yt + dy, v, thick); break;
            case 'b': stroke(s, xr + dx, yt + dy, xr + dx, ym + dy, v, thick); break;
            case 'c': stroke(s, xr + dx, ym + dy, xr + dx, yb + dy, v, thick); break;
            case 'd': stroke(s, xl + dx, yb + dy, xr + dx, yb + dy, v, thick); break;
            case 'e': stroke(s, xl + dx, ym + dy, xl + dx, yb + dy, v, thick); break;
            case 'f': stroke(s, xl + dx, yt + dy, xl + dx, ym + dy, v, thick); break;
            case 'g': stroke(s, xl + dx, ym + dy, xr + dx, ym + dy, v, thick); break;
        }
    }

    std::normal_distribution<double> noise(0.0, 6.0);
    for (double& px : s.pixels) px = std::clamp(px + noise(rng), 0.0, 255.0);
    return s;
}

inline std::vector<Sample> render_split(int classes, int per_class, int size,
                                        std::uint64_t seed, int split_tag) {
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(classes) * per_class);
    for (int i = 0; i < per_class; ++i)
        for (int c = 0; c < classes; ++c) {
            std::mt19937_64 rng = sample_rng(seed, c * 1000000 + i, split_tag);
            out.push_back(render_digit(c, size, rng));
        }
    return out;
}

}  // namespace mscnn::synth
