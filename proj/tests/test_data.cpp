#include <doctest.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "mscnn/data.hpp"

using namespace mscnn;
namespace fs = std::filesystem;

namespace {

// Scratch directory cleaned up when the test ends.
struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("mscnn_data_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

Sample flat_image(int w, int h, double value, int label = 0) {
    Sample s;
    s.width = w;
    s.height = h;
    s.pixels.assign(static_cast<std::size_t>(w) * h, value);
    s.label = label;
    s.source = "flat";
    return s;
}

// Bright square of the given extent centered on a dark canvas.
Sample centered_square(int canvas, int square, double ink = 255.0, double bg = 0.0) {
    Sample s = flat_image(canvas, canvas, bg);
    const int at = (canvas - square) / 2;
    for (int y = at; y < at + square; ++y)
        for (int x = at; x < at + square; ++x)
            s.pixels[static_cast<std::size_t>(y) * canvas + x] = ink;
    s.source = "square";
    return s;
}

std::vector<Sample> noise_samples(int n, int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pix(0, 255);
    std::vector<Sample> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Sample& s = out[static_cast<std::size_t>(i)];
        s.width = w;
        s.height = h;
        s.label = i % 7;
        s.source = "noise#" + std::to_string(i);
        s.pixels.resize(static_cast<std::size_t>(w) * h);
        for (double& v : s.pixels) v = pix(rng);
    }
    return out;
}

std::vector<std::string> sources(const std::vector<Sample>& v) {
    std::vector<std::string> out;
    for (const Sample& s : v) out.push_back(s.source);
    return out;
}

void put_le32(std::vector<unsigned char>& b, std::uint32_t v) {
    b.push_back(static_cast<unsigned char>(v));
    b.push_back(static_cast<unsigned char>(v >> 8));
    b.push_back(static_cast<unsigned char>(v >> 16));
    b.push_back(static_cast<unsigned char>(v >> 24));
}

void put_le16(std::vector<unsigned char>& b, std::uint16_t v) {
    b.push_back(static_cast<unsigned char>(v));
    b.push_back(static_cast<unsigned char>(v >> 8));
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// Minimal uncompressed 8-bit BMP with a grayscale palette, bottom-up rows.
void write_gray_bmp(const std::string& path, int w, int h,
                    const std::vector<unsigned char>& pix) {
    const std::size_t stride = ((static_cast<std::size_t>(w) + 3) / 4) * 4;
    std::vector<unsigned char> b;
    b.push_back('B');
    b.push_back('M');
    const std::uint32_t data_at = 14 + 40 + 256 * 4;
    put_le32(b, static_cast<std::uint32_t>(data_at + stride * h));
    put_le32(b, 0);
    put_le32(b, data_at);
    put_le32(b, 40);
    put_le32(b, static_cast<std::uint32_t>(w));
    put_le32(b, static_cast<std::uint32_t>(h));
    put_le16(b, 1);
    put_le16(b, 8);
    put_le32(b, 0);  // BI_RGB
    put_le32(b, static_cast<std::uint32_t>(stride * h));
    put_le32(b, 2835);
    put_le32(b, 2835);
    put_le32(b, 0);  // palette: all 256 entries
    put_le32(b, 0);
    for (int i = 0; i < 256; ++i) {
        b.push_back(static_cast<unsigned char>(i));
        b.push_back(static_cast<unsigned char>(i));
        b.push_back(static_cast<unsigned char>(i));
        b.push_back(0);
    }
    for (int y = h - 1; y >= 0; --y) {
        for (int x = 0; x < w; ++x) b.push_back(pix[static_cast<std::size_t>(y) * w + x]);
        for (std::size_t p = w; p < stride; ++p) b.push_back(0);
    }
    write_bytes(path, b);
}

void write_gray_png(const std::string& path, int w, int h,
                    const std::vector<unsigned char>& pix) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_GRAY;
    REQUIRE(png_image_write_to_file(&image, path.c_str(), 0, pix.data(), 0, nullptr) != 0);
}

}  // namespace

TEST_CASE("normalization constants") {
    CHECK(normalize_gray(127.5) == 0.0);
    CHECK(normalize_gray(0.0) == -1.0);
    CHECK(normalize_gray(255.0) == 1.0);
}

TEST_CASE("idx files round-trip") {
    TempDir dir;
    const std::vector<Sample> in = noise_samples(23, 9, 7, 3);
    write_idx(dir.file("img.idx"), dir.file("lab.idx"), in);
    const std::vector<Sample> back = load_idx(dir.file("img.idx"), dir.file("lab.idx"));
    REQUIRE(back.size() == in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        CHECK(back[i].width == 9);
        CHECK(back[i].height == 7);
        CHECK(back[i].label == in[i].label);
        CHECK(back[i].pixels == in[i].pixels);  // integers survive the byte cast
        CHECK(back[i].source == dir.file("img.idx") + "#" + std::to_string(i));
    }
}

TEST_CASE("idx loader rejects damage") {
    TempDir dir;
    const std::vector<Sample> in = noise_samples(5, 4, 4, 9);
    write_idx(dir.file("img.idx"), dir.file("lab.idx"), in);

    SUBCASE("missing files") {
        CHECK_THROWS_AS(load_idx(dir.file("nope.idx"), dir.file("lab.idx")), std::runtime_error);
        CHECK_THROWS_AS(load_idx(dir.file("img.idx"), dir.file("nope.idx")), std::runtime_error);
    }
    SUBCASE("bad magic") {
        std::fstream f(dir.file("img.idx"), std::ios::in | std::ios::out | std::ios::binary);
        f.put('\x42');
        f.close();
        CHECK_THROWS_WITH_AS(load_idx(dir.file("img.idx"), dir.file("lab.idx")),
                             doctest::Contains("magic"), std::runtime_error);
    }
    SUBCASE("count mismatch") {
        write_idx(dir.file("img3.idx"), dir.file("lab3.idx"), noise_samples(3, 4, 4, 9));
        CHECK_THROWS_WITH_AS(load_idx(dir.file("img.idx"), dir.file("lab3.idx")),
                             doctest::Contains("count mismatch"), std::runtime_error);
    }
    SUBCASE("truncated raster") {
        std::error_code ec;
        fs::resize_file(dir.file("img.idx"), 16 + 5 * 16 - 3, ec);
        REQUIRE(!ec);
        CHECK_THROWS_WITH_AS(load_idx(dir.file("img.idx"), dir.file("lab.idx")),
                             doctest::Contains("truncated"), std::runtime_error);
    }
    SUBCASE("writer validation") {
        CHECK_THROWS_AS(write_idx(dir.file("x.idx"), dir.file("y.idx"), {}),
                        std::invalid_argument);
        std::vector<Sample> mixed = noise_samples(2, 4, 4, 1);
        mixed[1].width = 5;
        mixed[1].pixels.resize(20);
        CHECK_THROWS_AS(write_idx(dir.file("x.idx"), dir.file("y.idx"), mixed),
                        std::invalid_argument);
        std::vector<Sample> big = noise_samples(1, 4, 4, 1);
        big[0].label = 256;
        CHECK_THROWS_AS(write_idx(dir.file("x.idx"), dir.file("y.idx"), big),
                        std::invalid_argument);
    }
}

TEST_CASE("preprocess rejects blank and malformed input") {
    CHECK_THROWS_AS(preprocess(flat_image(12, 12, 0.0)), BlankImageError);
    CHECK_THROWS_AS(preprocess(flat_image(12, 12, 200.0)), BlankImageError);
    try {
        preprocess(flat_image(8, 8, 7.0));
        FAIL("expected BlankImageError");
    } catch (const BlankImageError& e) {
        CHECK(e.source == "flat");
    }
    CHECK_THROWS_AS(preprocess(flat_image(0, 4, 1.0)), std::invalid_argument);
    Sample bad = flat_image(4, 4, 1.0);
    bad.pixels.pop_back();
    CHECK_THROWS_AS(preprocess(bad), std::invalid_argument);
    bad = flat_image(4, 4, 1.0);
    bad.pixels[3] = std::nan("");
    CHECK_THROWS_AS(preprocess(bad), std::invalid_argument);
}

TEST_CASE("preprocess crops the ink to fill the frame") {
    const Sample out = preprocess(centered_square(100, 10));
    REQUIRE(out.width == 32);
    REQUIRE(out.height == 32);
    CHECK(out.label == centered_square(100, 10).label);
    CHECK(out.source == "square");

    for (double v : out.pixels) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // the frame center is pure ink
    CHECK(out.pixels[16 * 32 + 16] == 1.0);
    // every border strip touches ink: the crop removed all margins
    double top = -1, bottom = -1, left = -1, right = -1;
    for (int i = 0; i < 32; ++i) {
        top = std::max(top, out.pixels[static_cast<std::size_t>(i)]);
        bottom = std::max(bottom, out.pixels[static_cast<std::size_t>(31 * 32 + i)]);
        left = std::max(left, out.pixels[static_cast<std::size_t>(i * 32)]);
        right = std::max(right, out.pixels[static_cast<std::size_t>(i * 32 + 31)]);
    }
    CHECK(top > 0.0);
    CHECK(bottom > 0.0);
    CHECK(left > 0.0);
    CHECK(right > 0.0);
    // and most of the frame is ink, not background
    int ink = 0;
    for (double v : out.pixels) ink += v > 0.0;
    CHECK(ink > 512);
}

TEST_CASE("preprocess is polarity blind") {
    // dark-on-light and light-on-dark renderings binarize to the same sample
    const Sample bright = preprocess(centered_square(60, 9, 255.0, 0.0));
    const Sample dark = preprocess(centered_square(60, 9, 0.0, 255.0));
    CHECK(bright.pixels == dark.pixels);
}

TEST_CASE("preprocess handles rectangular input without distortion") {
    // a full-width ink bar: crop keeps it, padding restores squareness
    Sample bar = flat_image(40, 8, 0.0);
    for (int x = 0; x < 40; ++x)
        for (int y = 2; y < 6; ++y) bar.pixels[static_cast<std::size_t>(y) * 40 + x] = 255.0;
    bar.source = "bar";
    const Sample out = preprocess(bar);
    REQUIRE(out.width == 32);
    // the bar spans the full width at the vertical center
    CHECK(out.pixels[16 * 32] > 0.0);
    CHECK(out.pixels[16 * 32 + 31] > 0.0);
    // but leaves background at the top and bottom (aspect preserved)
    CHECK(out.pixels[0 * 32 + 16] == -1.0);
    CHECK(out.pixels[31 * 32 + 16] == -1.0);
}

TEST_CASE("preprocess output is a fixed point of the geometric stages") {
    const Sample once = preprocess(centered_square(48, 17));
    Sample raw_again = once;
    for (double& v : raw_again.pixels) v = (v * 0.5 + 0.5) * 255.0;
    PreprocessOptions bypass;
    bypass.denoise = false;
    bypass.binarize = false;
    const Sample twice = preprocess(raw_again, bypass);
    REQUIRE(twice.pixels.size() == once.pixels.size());
    for (std::size_t i = 0; i < once.pixels.size(); ++i)
        CHECK(std::abs(twice.pixels[i] - once.pixels[i]) < 1e-6);
}

TEST_CASE("flips are exact involutions") {
    Sample s = flat_image(32, 32, 0.0, 4);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> pix(-1.0, 1.0);
    for (double& v : s.pixels) v = pix(rng);

    CHECK(hflip(hflip(s)).pixels == s.pixels);
    CHECK(vflip(vflip(s)).pixels == s.pixels);
    CHECK(hflip(s).pixels != s.pixels);
    // mirroring moves the (0,0) corner pixel to (31,0)
    CHECK(hflip(s).pixels[31] == s.pixels[0]);
    CHECK(vflip(s).pixels[31 * 32] == s.pixels[0]);
}

TEST_CASE("zero rotation is the identity") {
    const Sample s = preprocess(centered_square(50, 20));
    const Sample r = rotate(s, 0.0);
    for (std::size_t i = 0; i < s.pixels.size(); ++i)
        CHECK(std::abs(r.pixels[i] - s.pixels[i]) < 1e-6);
}

TEST_CASE("rotation keeps values in range and fills corners with background") {
    const Sample s = flat_image(32, 32, 255.0, 1);  // raw white frame
    Sample unit = s;
    for (double& v : unit.pixels) v = 1.0;
    const Sample r = rotate(unit, 45.0);
    for (double v : r.pixels) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK(r.pixels[0] == -1.0);  // corner leaves the frame under 45 degrees
    CHECK(r.pixels[16 * 32 + 16] == 1.0);
}

TEST_CASE("every augmentation preserves shape, label, and range") {
    const Sample s = preprocess(centered_square(64, 21));
    for (Augment kind : {Augment::none, Augment::jitter, Augment::hflip, Augment::vflip,
                         Augment::random_crop, Augment::rotation, Augment::affine}) {
        CAPTURE(to_string(kind));
        std::mt19937_64 rng = sample_rng(11, 3, 2);
        const Sample out = augment(s, kind, rng);
        CHECK(out.width == 32);
        CHECK(out.height == 32);
        CHECK(out.label == s.label);
        for (double v : out.pixels) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("augmentation draws are reproducible per (seed, index, epoch)") {
    const Sample s = preprocess(centered_square(64, 21));
    for (Augment kind : {Augment::jitter, Augment::random_crop, Augment::rotation}) {
        std::mt19937_64 a = sample_rng(5, 10, 3), b = sample_rng(5, 10, 3);
        CHECK(augment(s, kind, a).pixels == augment(s, kind, b).pixels);
    }
    // a different epoch gives a different stream
    std::mt19937_64 a = sample_rng(5, 10, 3), b = sample_rng(5, 10, 4);
    CHECK(augment(s, Augment::rotation, a).pixels != augment(s, Augment::rotation, b).pixels);
}

TEST_CASE("augment none is the identity and unknown kinds are rejected") {
    const Sample s = preprocess(centered_square(40, 13));
    std::mt19937_64 rng = sample_rng(1, 2, 3);
    CHECK(augment(s, Augment::none, rng).pixels == s.pixels);
    CHECK_THROWS_AS(parse_augment("blur"), std::invalid_argument);
    for (Augment kind : {Augment::none, Augment::jitter, Augment::hflip, Augment::vflip,
                         Augment::random_crop, Augment::rotation, Augment::affine})
        CHECK(parse_augment(to_string(kind)) == kind);
}

TEST_CASE("horizontal flips fire at rate one half") {
    Sample s = flat_image(32, 32, 0.0, 0);
    s.pixels[5] = 1.0;  // asymmetric, so a flip always changes the pixels
    int flips = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        std::mt19937_64 rng = sample_rng(42, i, 0);
        flips += augment(s, Augment::hflip, rng).pixels != s.pixels;
    }
    const double rate = static_cast<double>(flips) / draws;
    CHECK(rate >= 0.48);
    CHECK(rate <= 0.52);
}

TEST_CASE("jitter stays within its budget") {
    const Sample s = preprocess(centered_square(64, 21));
    std::mt19937_64 rng = sample_rng(8, 0, 0);
    const Sample out = augment(s, Augment::jitter, rng);
    // factors live in [0.95, 1.05]: unit-scale values move by at most ~0.1
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
        const double u0 = s.pixels[i] * 0.5 + 0.5;
        const double u1 = out.pixels[i] * 0.5 + 0.5;
        CHECK(std::abs(u1 - u0) <= 0.11);
    }
}

TEST_CASE("train/val split is disjoint, exhaustive, and seeded") {
    const std::vector<Sample> all = noise_samples(40, 4, 4, 77);
    auto [train, val] = split_train_val(all, 15, 123);
    CHECK(train.size() == 25);
    CHECK(val.size() == 15);

    std::vector<std::string> combined = sources(train);
    const std::vector<std::string> vs = sources(val);
    combined.insert(combined.end(), vs.begin(), vs.end());
    std::sort(combined.begin(), combined.end());
    std::vector<std::string> expected = sources(all);
    std::sort(expected.begin(), expected.end());
    CHECK(combined == expected);

    auto [train2, val2] = split_train_val(all, 15, 123);
    CHECK(sources(train2) == sources(train));
    CHECK(sources(val2) == sources(val));
    auto [train3, val3] = split_train_val(all, 15, 124);
    CHECK(sources(val3) != sources(val));

    auto [all_train, none] = split_train_val(all, 0, 1);
    CHECK(all_train.size() == 40);
    CHECK(none.empty());

    CHECK_THROWS_AS(split_train_val(all, 40, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_train_val(all, -1, 1), std::invalid_argument);
}

TEST_CASE("manifest round-trips and checks datasets") {
    TempDir dir;
    std::vector<Sample> train = noise_samples(12, 4, 4, 5);
    const std::vector<Sample> test = noise_samples(6, 4, 4, 6);

    DatasetManifest m;
    m.name = "noise";
    m.classes = 7;
    m.splits = {{"train", 12, source_checksum(train)}, {"test", 6, 0}};
    save_manifest(dir.file("manifest.txt"), m);
    const DatasetManifest back = load_manifest(dir.file("manifest.txt"));
    CHECK(back.name == "noise");
    CHECK(back.classes == 7);
    REQUIRE(back.splits.size() == 2);
    CHECK(back.splits[0].split == "train");
    CHECK(back.splits[0].count == 12);
    CHECK(back.splits[0].checksum == m.splits[0].checksum);
    CHECK(back.splits[1].checksum == 0);

    CHECK_NOTHROW(check_manifest(back, "train", train));
    CHECK_NOTHROW(check_manifest(back, "test", test));

    // checksum ignores sample order
    std::reverse(train.begin(), train.end());
    CHECK(source_checksum(train) == back.splits[0].checksum);
    CHECK_NOTHROW(check_manifest(back, "train", train));

    SUBCASE("count mismatch") {
        train.pop_back();
        CHECK_THROWS_WITH_AS(check_manifest(back, "train", train), doctest::Contains("expects"),
                             std::runtime_error);
    }
    SUBCASE("unknown split") {
        CHECK_THROWS_WITH_AS(check_manifest(back, "dev", train), doctest::Contains("no split"),
                             std::runtime_error);
    }
    SUBCASE("label outside class range") {
        train[0].label = 7;
        CHECK_THROWS_WITH_AS(check_manifest(back, "train", train), doctest::Contains("label"),
                             std::runtime_error);
    }
    SUBCASE("checksum mismatch") {
        train[0].source = "tampered";
        CHECK_THROWS_WITH_AS(check_manifest(back, "train", train), doctest::Contains("checksum"),
                             std::runtime_error);
    }
}

TEST_CASE("manifest parser rejects malformed files") {
    TempDir dir;
    auto write = [&](const std::string& text) {
        std::ofstream out(dir.file("m.txt"), std::ios::trunc);
        out << text;
    };
    write("# comment\nname x\nclasses 3\nsplit train 10 -\n");
    CHECK_NOTHROW(load_manifest(dir.file("m.txt")));
    write("classes 3\nsplit train 10 -\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir.file("m.txt")), doctest::Contains("name"),
                         std::runtime_error);
    write("name x\nsplit train 10 -\n");
    CHECK_THROWS_AS(load_manifest(dir.file("m.txt")), std::runtime_error);
    write("name x\nclasses 3\n");
    CHECK_THROWS_AS(load_manifest(dir.file("m.txt")), std::runtime_error);
    write("name x\nclasses 3\nsplit train 10 -\nsplit train 4 -\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir.file("m.txt")), doctest::Contains("duplicate"),
                         std::runtime_error);
    write("name x\nclasses 3\nbogus 1\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir.file("m.txt")), doctest::Contains("unknown"),
                         std::runtime_error);
    write("name x\nclasses 3\nsplit train 10 xyzzy\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir.file("m.txt")), doctest::Contains("hex"),
                         std::runtime_error);
    CHECK_THROWS_AS(load_manifest(dir.file("missing.txt")), std::runtime_error);
}

TEST_CASE("image codecs agree on pixel values") {
    TempDir dir;
    const int w = 5, h = 3;
    std::vector<unsigned char> pix(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < pix.size(); ++i) pix[i] = static_cast<unsigned char>(10 + 16 * i);

    Sample ref;
    ref.width = w;
    ref.height = h;
    ref.pixels.assign(pix.begin(), pix.end());

    SUBCASE("pgm binary round-trip") {
        write_pgm(dir.file("a.pgm"), ref);
        const Sample got = read_image(dir.file("a.pgm"));
        CHECK(got.width == w);
        CHECK(got.height == h);
        CHECK(got.pixels == ref.pixels);
    }
    SUBCASE("pgm ascii with comments and rescaling") {
        std::ofstream out(dir.file("a.pgm"));
        out << "P2\n# a comment\n2 2\n# another\n5\n0 1\n4 5\n";
        out.close();
        const Sample got = read_image(dir.file("a.pgm"));
        REQUIRE(got.pixels.size() == 4);
        CHECK(got.pixels[0] == 0.0);
        CHECK(got.pixels[1] == doctest::Approx(51.0));
        CHECK(got.pixels[3] == 255.0);
    }
    SUBCASE("png") {
        write_gray_png(dir.file("a.png"), w, h, pix);
        const Sample got = read_image(dir.file("a.png"));
        CHECK(got.width == w);
        CHECK(got.height == h);
        CHECK(got.pixels == ref.pixels);
    }
    SUBCASE("bmp with grayscale palette") {
        write_gray_bmp(dir.file("a.bmp"), w, h, pix);
        const Sample got = read_image(dir.file("a.bmp"));
        CHECK(got.width == w);
        CHECK(got.height == h);
        CHECK(got.pixels == ref.pixels);
    }
    SUBCASE("unsupported format") {
        std::ofstream out(dir.file("a.txt"));
        out << "not an image";
        out.close();
        CHECK_THROWS_WITH_AS(read_image(dir.file("a.txt")), doctest::Contains("unsupported"),
                             std::runtime_error);
        CHECK_THROWS_AS(read_image(dir.file("missing.png")), std::runtime_error);
    }
}

TEST_CASE("class directories load sorted with skips reported") {
    TempDir dir;
    // three classes named so sorted order differs from creation order
    fs::create_directories(dir.path / "beta");
    fs::create_directories(dir.path / "alpha");
    fs::create_directories(dir.path / "gamma");

    std::vector<unsigned char> pix(16, 128);
    write_gray_png((dir.path / "alpha" / "b.png").string(), 4, 4, pix);
    write_gray_png((dir.path / "alpha" / "a.png").string(), 4, 4, pix);
    write_gray_bmp((dir.path / "beta" / "one.bmp").string(), 4, 4, pix);
    Sample pgm;
    pgm.width = 4;
    pgm.height = 4;
    pgm.pixels.assign(16, 64.0);
    write_pgm((dir.path / "beta" / "two.pgm").string(), pgm);
    {
        std::ofstream bad((dir.path / "beta" / "broken.png").string(), std::ios::binary);
        bad << "\x89PNG garbage";
    }

    DirReport report;
    std::ostringstream log;
    const std::vector<Sample> got = load_image_dir(dir.path.string(), &report, &log);

    CHECK(report.classes == std::vector<std::string>{"alpha", "beta", "gamma"});
    CHECK(report.skipped == 1);
    CHECK(log.str().find("skipping") != std::string::npos);
    CHECK(log.str().find("gamma") != std::string::npos);  // empty class warned

    REQUIRE(got.size() == 4);
    CHECK(got[0].source == "alpha/a.png");
    CHECK(got[0].label == 0);
    CHECK(got[1].source == "alpha/b.png");
    CHECK(got[2].source == "beta/one.bmp");
    CHECK(got[2].label == 1);
    CHECK(got[3].source == "beta/two.pgm");
    CHECK(got[3].pixels[0] == 64.0);

    CHECK_THROWS_AS(load_image_dir((dir.path / "alpha" / "a.png").string()), std::runtime_error);
    TempDir empty;
    CHECK_THROWS_WITH_AS(load_image_dir(empty.path.string()),
                         doctest::Contains("no class subdirectories"), std::runtime_error);
}

TEST_CASE("preprocessed directory packs into a dataset") {
    TempDir dir;
    fs::create_directories(dir.path / "0");
    fs::create_directories(dir.path / "1");
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 3; ++i) {
            Sample img = centered_square(20, 6 + 4 * k);
            write_pgm((dir.path / std::to_string(k) / ("s" + std::to_string(i) + ".pgm")).string(),
                      img);
        }
    std::vector<Sample> raw = load_image_dir(dir.path.string());
    REQUIRE(raw.size() == 6);
    std::vector<Sample> ready;
    for (const Sample& s : raw) ready.push_back(preprocess(s));
    const Dataset d = pack(ready);
    CHECK(d.size() == 6);
    CHECK(d.extent() == 32);
    CHECK(d.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
}
