#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "mscnn/data.hpp"

namespace mscnn {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
[[noreturn]] void io_fail(const std::string& msg) { throw std::runtime_error(msg); }

// ---- codecs ----------------------------------------------------------

Sample read_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        io_fail("cannot decode PNG " + path + ": " + image.message);
    image.format = PNG_FORMAT_GRAY;
    std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        io_fail("cannot decode PNG " + path + ": " + msg);
    }
    Sample s;
    s.width = static_cast<int>(image.width);
    s.height = static_cast<int>(image.height);
    s.pixels.assign(bytes.begin(), bytes.end());
    return s;
}

int pgm_token(std::istream& in, const std::string& path) {
    // whitespace and '#' comments may separate header fields
    for (;;) {
        const int c = in.peek();
        if (c == EOF) io_fail("truncated PGM header: " + path);
        if (std::isspace(c)) {
            in.get();
        } else if (c == '#') {
            std::string comment;
            std::getline(in, comment);
        } else {
            break;
        }
    }
    int v = 0;
    if (!(in >> v)) io_fail("bad PGM header: " + path);
    return v;
}

Sample read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail("cannot open image: " + path);
    char p = 0, kind = 0;
    in.get(p).get(kind);
    const int w = pgm_token(in, path);
    const int h = pgm_token(in, path);
    const int maxval = pgm_token(in, path);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
        io_fail("unsupported PGM geometry in " + path);

    Sample s;
    s.width = w;
    s.height = h;
    s.pixels.resize(static_cast<std::size_t>(w) * h);
    if (kind == '5') {
        in.get();  // single whitespace byte before the raster
        std::vector<unsigned char> bytes(s.pixels.size());
        if (!in.read(reinterpret_cast<char*>(bytes.data()),
                     static_cast<std::streamsize>(bytes.size())))
            io_fail("truncated PGM raster: " + path);
        for (std::size_t i = 0; i < bytes.size(); ++i)
            s.pixels[i] = bytes[i] * 255.0 / maxval;
    } else {
        for (double& v : s.pixels) {
            int raw = 0;
            if (!(in >> raw)) io_fail("truncated PGM raster: " + path);
            if (raw < 0 || raw > maxval) io_fail("PGM value out of range: " + path);
            v = raw * 255.0 / maxval;
        }
    }
    return s;
}

std::uint32_t le32(const std::vector<unsigned char>& b, std::size_t at, const std::string& path) {
    if (at + 4 > b.size()) io_fail("truncated BMP header: " + path);
    return std::uint32_t{b[at]} | (std::uint32_t{b[at + 1]} << 8) |
           (std::uint32_t{b[at + 2]} << 16) | (std::uint32_t{b[at + 3]} << 24);
}

std::uint16_t le16(const std::vector<unsigned char>& b, std::size_t at, const std::string& path) {
    if (at + 2 > b.size()) io_fail("truncated BMP header: " + path);
    return static_cast<std::uint16_t>(std::uint32_t{b[at]} | (std::uint32_t{b[at + 1]} << 8));
}

double luma(unsigned char r, unsigned char g, unsigned char b) {
    if (r == g && g == b) return r;  // gray stays exact
    return 0.299 * r + 0.587 * g + 0.114 * b;
}

Sample read_bmp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail("cannot open image: " + path);
    std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
    const std::uint32_t data_at = le32(b, 10, path);
    const std::uint32_t header_size = le32(b, 14, path);
    if (header_size < 40) io_fail("unsupported BMP header in " + path);
    const std::int32_t width = static_cast<std::int32_t>(le32(b, 18, path));
    const std::int32_t raw_height = static_cast<std::int32_t>(le32(b, 22, path));
    const std::uint16_t bits = le16(b, 28, path);
    const std::uint32_t compression = le32(b, 30, path);
    if (width < 1 || raw_height == 0) io_fail("bad BMP geometry in " + path);
    if (compression != 0 || (bits != 8 && bits != 24))
        io_fail("unsupported BMP encoding in " + path + " (only uncompressed 8/24-bit)");
    const bool bottom_up = raw_height > 0;
    const int height = bottom_up ? raw_height : -raw_height;

    std::vector<double> palette;
    if (bits == 8) {
        std::uint32_t colors = le32(b, 46, path);
        if (colors == 0) colors = 256;
        const std::size_t at = 14 + header_size;
        if (at + 4 * colors > b.size()) io_fail("truncated BMP palette: " + path);
        palette.resize(colors);
        for (std::uint32_t i = 0; i < colors; ++i)
            palette[i] = luma(b[at + 4 * i + 2], b[at + 4 * i + 1], b[at + 4 * i]);
    }

    const std::size_t stride = ((static_cast<std::size_t>(bits) * width + 31) / 32) * 4;
    Sample s;
    s.width = width;
    s.height = height;
    s.pixels.resize(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y) {
        const int file_row = bottom_up ? height - 1 - y : y;
        const std::size_t row_at = data_at + static_cast<std::size_t>(file_row) * stride;
        if (row_at + (bits == 8 ? width : 3 * static_cast<std::size_t>(width)) > b.size())
            io_fail("truncated BMP raster: " + path);
        for (int x = 0; x < width; ++x) {
            double v;
            if (bits == 8) {
                const unsigned char idx = b[row_at + static_cast<std::size_t>(x)];
                if (idx >= palette.size()) io_fail("BMP palette index out of range: " + path);
                v = palette[idx];
            } else {
                const std::size_t at = row_at + 3 * static_cast<std::size_t>(x);
                v = luma(b[at + 2], b[at + 1], b[at]);
            }
            s.pixels[static_cast<std::size_t>(y) * width + x] = v;
        }
    }
    return s;
}

// ---- raster helpers ---------------------------------------------------

struct Gray {
    int w = 0, h = 0;
    std::vector<double> v;

    double at(int x, int y) const {  // replicate border
        x = std::clamp(x, 0, w - 1);
        y = std::clamp(y, 0, h - 1);
        return v[static_cast<std::size_t>(y) * w + x];
    }
};

Gray median3(const Gray& g) {
    Gray out{g.w, g.h, std::vector<double>(g.v.size())};
    double win[9];
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
            int k = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) win[k++] = g.at(x + dx, y + dy);
            std::nth_element(win, win + 4, win + 9);
            out.v[static_cast<std::size_t>(y) * g.w + x] = win[4];
        }
    return out;
}

Gray gauss3(const Gray& g, double sigma) {
    const double k1 = std::exp(-1.0 / (2.0 * sigma * sigma));
    double w[3] = {k1, 1.0, k1};
    const double norm = k1 + 1.0 + k1;
    for (double& x : w) x /= norm;

    // separable: rows then columns
    Gray mid{g.w, g.h, std::vector<double>(g.v.size())};
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            mid.v[static_cast<std::size_t>(y) * g.w + x] =
                w[0] * g.at(x - 1, y) + w[1] * g.at(x, y) + w[2] * g.at(x + 1, y);
    Gray out{g.w, g.h, std::vector<double>(g.v.size())};
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            out.v[static_cast<std::size_t>(y) * g.w + x] =
                w[0] * mid.at(x, y - 1) + w[1] * mid.at(x, y) + w[2] * mid.at(x, y + 1);
    return out;
}

// Threshold bin maximizing between-class variance; ties take the lowest bin.
int otsu_threshold(const Gray& g) {
    std::size_t hist[256] = {};
    for (double v : g.v) ++hist[std::clamp<long>(std::lround(v), 0, 255)];
    const std::size_t total = g.v.size();
    double sum = 0.0;
    for (int b = 0; b < 256; ++b) sum += static_cast<double>(b) * static_cast<double>(hist[b]);

    double best = -1.0;
    int best_t = 0;
    double below_sum = 0.0;
    std::size_t below_n = 0;
    for (int t = 0; t < 255; ++t) {
        below_n += hist[t];
        below_sum += static_cast<double>(t) * static_cast<double>(hist[t]);
        const std::size_t above_n = total - below_n;
        if (below_n == 0 || above_n == 0) continue;
        const double mu0 = below_sum / static_cast<double>(below_n);
        const double mu1 = (sum - below_sum) / static_cast<double>(above_n);
        const double between = static_cast<double>(below_n) * static_cast<double>(above_n) *
                               (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    return best_t;
}

Gray resize_bilinear(const Gray& g, int ow, int oh) {
    Gray out{ow, oh, std::vector<double>(static_cast<std::size_t>(ow) * oh)};
    const double sx = static_cast<double>(g.w) / ow;
    const double sy = static_cast<double>(g.h) / oh;
    for (int y = 0; y < oh; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        const int y0 = static_cast<int>(std::floor(src_y));
        const double fy = src_y - y0;
        for (int x = 0; x < ow; ++x) {
            const double src_x = (x + 0.5) * sx - 0.5;
            const int x0 = static_cast<int>(std::floor(src_x));
            const double fx = src_x - x0;
            const double top = (1.0 - fx) * g.at(x0, y0) + fx * g.at(x0 + 1, y0);
            const double bot = (1.0 - fx) * g.at(x0, y0 + 1) + fx * g.at(x0 + 1, y0 + 1);
            out.v[static_cast<std::size_t>(y) * ow + x] = (1.0 - fy) * top + fy * bot;
        }
    }
    return out;
}

Gray pad_to_square(const Gray& g, double background) {
    if (g.w == g.h) return g;
    const int e = std::max(g.w, g.h);
    Gray out{e, e, std::vector<double>(static_cast<std::size_t>(e) * e, background)};
    const int ox = (e - g.w) / 2, oy = (e - g.h) / 2;
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            out.v[static_cast<std::size_t>(y + oy) * e + (x + ox)] =
                g.v[static_cast<std::size_t>(y) * g.w + x];
    return out;
}

// Bilinear tap with a constant fill outside the frame.
double sample_or_fill(const Gray& g, double x, double y, double fill) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto tap = [&](int xi, int yi) {
        if (xi < 0 || xi >= g.w || yi < 0 || yi >= g.h) return fill;
        return g.v[static_cast<std::size_t>(yi) * g.w + xi];
    };
    const double top = (1.0 - fx) * tap(x0, y0) + fx * tap(x0 + 1, y0);
    const double bot = (1.0 - fx) * tap(x0, y0 + 1) + fx * tap(x0 + 1, y0 + 1);
    return (1.0 - fy) * top + fy * bot;
}

Gray to_gray(const Sample& s) { return Gray{s.width, s.height, s.pixels}; }

Sample like(const Sample& s, Gray&& g) {
    Sample out;
    out.width = g.w;
    out.height = g.h;
    out.pixels = std::move(g.v);
    out.label = s.label;
    out.source = s.source;
    return out;
}

void check_sample(const Sample& s, const char* who) {
    if (s.width < 1 || s.height < 1)
        fail(std::string(who) + ": empty image from '" + s.source + "'");
    if (s.pixels.size() != static_cast<std::size_t>(s.width) * s.height)
        fail(std::string(who) + ": pixel count does not match extent for '" + s.source + "'");
    for (double v : s.pixels)
        if (!std::isfinite(v))
            fail(std::string(who) + ": non-finite pixel in '" + s.source + "'");
}

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

constexpr int kEdge = 32;

}  // namespace

Sample read_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) io_fail("cannot open image: " + path);
    unsigned char head[2] = {};
    probe.read(reinterpret_cast<char*>(head), 2);
    probe.close();
    if (head[0] == 0x89 && head[1] == 'P') return read_png(path);
    if (head[0] == 'B' && head[1] == 'M') return read_bmp(path);
    if (head[0] == 'P' && (head[1] == '5' || head[1] == '2')) return read_pgm(path);
    io_fail("unsupported image format: " + path);
}

void write_pgm(const std::string& path, const Sample& image) {
    check_sample(image, "write_pgm");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) io_fail("cannot open image for writing: " + path);
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> bytes(image.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::clamp<long>(std::lround(image.pixels[i]), 0, 255));
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) io_fail("failed to write image: " + path);
}

std::vector<Sample> load_image_dir(const std::string& root, DirReport* report,
                                   std::ostream* log) {
    namespace fs = std::filesystem;
    std::ostream& warn = log ? *log : std::cerr;
    if (!fs::is_directory(root)) io_fail("not a dataset directory: " + root);

    std::vector<fs::path> class_dirs;
    for (const fs::directory_entry& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) io_fail("no class subdirectories in " + root);

    std::vector<Sample> out;
    DirReport local;
    for (std::size_t k = 0; k < class_dirs.size(); ++k) {
        local.classes.push_back(class_dirs[k].filename().string());
        std::vector<fs::path> files;
        for (const fs::directory_entry& e : fs::directory_iterator(class_dirs[k]))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        std::size_t loaded = 0;
        for (const fs::path& f : files) {
            try {
                Sample s = read_image(f.string());
                s.label = static_cast<int>(k);
                s.source = local.classes.back() + "/" + f.filename().string();
                out.push_back(std::move(s));
                ++loaded;
            } catch (const std::exception& e) {
                warn << "load_image_dir: skipping " << f.string() << " (" << e.what() << ")\n";
                ++local.skipped;
            }
        }
        if (loaded == 0)
            warn << "load_image_dir: class '" << local.classes.back() << "' has no samples\n";
    }
    if (report) *report = std::move(local);
    return out;
}

Sample preprocess(const Sample& raw, const PreprocessOptions& opts) {
    check_sample(raw, "preprocess");
    Gray g = to_gray(raw);
    if (opts.denoise) g = gauss3(median3(g), 0.8);

    if (opts.binarize) {
        const auto [lo, hi] = std::minmax_element(g.v.begin(), g.v.end());
        if (*hi - *lo < 1e-9) throw BlankImageError(raw.source);
        const int t = otsu_threshold(g);
        std::size_t above = 0;
        for (double v : g.v) above += std::lround(v) > t;
        const std::size_t below = g.v.size() - above;
        // The ink is the minority side; it becomes white on black.
        const bool ink_above = above <= below;
        if ((ink_above ? above : below) == 0) throw BlankImageError(raw.source);

        int x0 = g.w, x1 = -1, y0 = g.h, y1 = -1;
        for (int y = 0; y < g.h; ++y)
            for (int x = 0; x < g.w; ++x) {
                const bool is_above = std::lround(g.v[static_cast<std::size_t>(y) * g.w + x]) > t;
                const bool ink = is_above == ink_above;
                g.v[static_cast<std::size_t>(y) * g.w + x] = ink ? 255.0 : 0.0;
                if (ink) {
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                    y0 = std::min(y0, y);
                    y1 = std::max(y1, y);
                }
            }
        Gray cropped{x1 - x0 + 1, y1 - y0 + 1,
                     std::vector<double>(static_cast<std::size_t>(x1 - x0 + 1) * (y1 - y0 + 1))};
        for (int y = 0; y < cropped.h; ++y)
            for (int x = 0; x < cropped.w; ++x)
                cropped.v[static_cast<std::size_t>(y) * cropped.w + x] =
                    g.v[static_cast<std::size_t>(y + y0) * g.w + (x + x0)];
        g = std::move(cropped);
    }

    g = resize_bilinear(pad_to_square(g, 0.0), kEdge, kEdge);
    for (double& v : g.v) v = normalize_gray(v);
    return like(raw, std::move(g));
}

Augment parse_augment(const std::string& name) {
    if (name == "none") return Augment::none;
    if (name == "jitter") return Augment::jitter;
    if (name == "hflip") return Augment::hflip;
    if (name == "vflip") return Augment::vflip;
    if (name == "random_crop") return Augment::random_crop;
    if (name == "rotation") return Augment::rotation;
    if (name == "affine") return Augment::affine;
    fail("unknown augmentation '" + name +
         "' (expected none, jitter, hflip, vflip, random_crop, rotation, affine)");
}

std::string to_string(Augment kind) {
    switch (kind) {
        case Augment::none: return "none";
        case Augment::jitter: return "jitter";
        case Augment::hflip: return "hflip";
        case Augment::vflip: return "vflip";
        case Augment::random_crop: return "random_crop";
        case Augment::rotation: return "rotation";
        case Augment::affine: return "affine";
    }
    fail("unknown augmentation kind");
}

Sample hflip(const Sample& s) {
    check_sample(s, "hflip");
    Sample out = s;
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x)
            out.pixels[static_cast<std::size_t>(y) * s.width + x] =
                s.pixels[static_cast<std::size_t>(y) * s.width + (s.width - 1 - x)];
    return out;
}

Sample vflip(const Sample& s) {
    check_sample(s, "vflip");
    Sample out = s;
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x)
            out.pixels[static_cast<std::size_t>(y) * s.width + x] =
                s.pixels[static_cast<std::size_t>(s.height - 1 - y) * s.width + x];
    return out;
}

Sample rotate(const Sample& s, double degrees) {
    check_sample(s, "rotate");
    const Gray g = to_gray(s);
    const double rad = degrees * M_PI / 180.0;
    const double c = std::cos(rad), sn = std::sin(rad);
    const double cx = (s.width - 1) / 2.0, cy = (s.height - 1) / 2.0;
    Gray out{s.width, s.height, std::vector<double>(g.v.size())};
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double src_x = cx + c * dx + sn * dy;
            const double src_y = cy - sn * dx + c * dy;
            out.v[static_cast<std::size_t>(y) * s.width + x] =
                sample_or_fill(g, src_x, src_y, -1.0);
        }
    return like(s, std::move(out));
}

Sample augment(const Sample& s, Augment kind, std::mt19937_64& rng) {
    check_sample(s, "augment");
    switch (kind) {
        case Augment::none:
            return s;
        case Augment::jitter: {
            std::uniform_real_distribution<double> factor(0.95, 1.05);
            const double brightness = factor(rng);
            const double contrast = factor(rng);
            factor(rng);  // saturation slot: cannot change a single channel
            Sample out = s;
            double mean = 0.0;
            for (double& v : out.pixels) {
                v = std::clamp((v * 0.5 + 0.5) * brightness, 0.0, 1.0);
                mean += v;
            }
            mean /= static_cast<double>(out.pixels.size());
            for (double& v : out.pixels) {
                v = std::clamp((v - mean) * contrast + mean, 0.0, 1.0);
                v = (v - 0.5) / 0.5;
            }
            return out;
        }
        case Augment::hflip: {
            std::bernoulli_distribution flip(0.5);
            return flip(rng) ? hflip(s) : s;
        }
        case Augment::vflip: {
            std::bernoulli_distribution flip(0.5);
            return flip(rng) ? vflip(s) : s;
        }
        case Augment::random_crop: {
            // pad 4 background pixels on every side, crop a window back out
            std::uniform_int_distribution<int> offset(0, 8);
            const int oy = offset(rng), ox = offset(rng);
            const Gray g = to_gray(s);
            Gray out{s.width, s.height, std::vector<double>(g.v.size())};
            for (int y = 0; y < s.height; ++y)
                for (int x = 0; x < s.width; ++x) {
                    const int sy = y + oy - 4, sx = x + ox - 4;
                    const bool inside = sx >= 0 && sx < s.width && sy >= 0 && sy < s.height;
                    out.v[static_cast<std::size_t>(y) * s.width + x] =
                        inside ? g.v[static_cast<std::size_t>(sy) * s.width + sx] : -1.0;
                }
            return like(s, std::move(out));
        }
        case Augment::rotation: {
            std::uniform_real_distribution<double> angle(-20.0, 20.0);
            return rotate(s, angle(rng));
        }
        case Augment::affine: {
            // center-invariant affine; only its rotation component is drawn
            std::uniform_real_distribution<double> angle(-45.0, 45.0);
            return rotate(s, angle(rng));
        }
    }
    fail("unknown augmentation kind");
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::int64_t index, std::int64_t epoch) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ static_cast<std::uint64_t>(index));
    h = mix64(h ^ static_cast<std::uint64_t>(epoch));
    return std::mt19937_64(h);
}

}  // namespace mscnn
