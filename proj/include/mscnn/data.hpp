#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mscnn/tensor.hpp"

namespace mscnn {

// One grayscale image with its class index. Loaders produce raw pixels in
// 0..255 at the source extent; preprocess() turns that into a 32x32 image
// with values in [-1, 1].
struct Sample {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;  // row-major, height * width
    int label = -1;
    std::string source;  // provenance: file path or "<container>:<row>"
};

// Training-ready form: every image packed into one untracked tensor so
// batches are plain row gathers.
struct Dataset {
    Tensor images;            // (n, 1, e, e)
    std::vector<int> labels;  // size n

    int size() const { return static_cast<int>(labels.size()); }
    int extent() const;
    // New dataset holding the given rows in the given order. Rows may repeat.
    Dataset gather(const std::vector<int>& rows) const;
};

// Packs samples into a Dataset. Every sample must be square and share one
// extent; labels must be non-negative.
Dataset pack(const std::vector<Sample>& samples);

// IDX containers (big-endian; magic 0x00000803 for u8 images, 0x00000801 for
// u8 labels). Image and label counts must agree.
std::vector<Sample> load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<Sample>& samples);

// Decodes one PNG, BMP, or PGM file to grayscale 0..255. The format comes
// from the file's magic bytes, not its name.
Sample read_image(const std::string& path);
void write_pgm(const std::string& path, const Sample& image);

struct DirReport {
    std::vector<std::string> classes;  // sorted subdirectory names
    int skipped = 0;                   // files that failed to decode
};

// Loads a tree of class subdirectories. Class indices follow the sorted
// subdirectory names; files inside a class load in sorted order. Undecodable
// files are skipped with a warning and counted; an empty subdirectory keeps
// its class index. Warnings go to `log` (std::cerr when null).
std::vector<Sample> load_image_dir(const std::string& root, DirReport* report = nullptr,
                                   std::ostream* log = nullptr);

// Raised when preprocessing finds no ink to crop.
struct BlankImageError : std::runtime_error {
    explicit BlankImageError(const std::string& src)
        : std::runtime_error("blank image: no foreground in '" + src + "'"), source(src) {}
    std::string source;
};

// (v/255 - 0.5) / 0.5: maps 0..255 onto [-1, 1].
inline double normalize_gray(double v) { return (v / 255.0 - 0.5) / 0.5; }

struct PreprocessOptions {
    bool denoise = true;   // 3x3 median, then 3x3 Gaussian (sigma 0.8)
    bool binarize = true;  // Otsu threshold; the minority side is the ink
};

// Raw grayscale in, 32x32 sample in [-1, 1] out: denoise, binarize with the
// ink side forced to white, crop to the tightest ink bounding box, pad to
// square with background, bilinear-resize to 32x32, normalize. Without
// binarization there is no ink mask, so the crop keeps the whole frame and
// the pipeline reduces to pad + resize + normalize.
Sample preprocess(const Sample& raw, const PreprocessOptions& opts = {});

enum class Augment { none, jitter, hflip, vflip, random_crop, rotation, affine };

Augment parse_augment(const std::string& name);
std::string to_string(Augment kind);

// Deterministic geometry on preprocessed samples; background fills with -1.
Sample hflip(const Sample& s);
Sample vflip(const Sample& s);
Sample rotate(const Sample& s, double degrees);  // about the image center

// One randomized variant of a preprocessed sample. jitter scales brightness
// and contrast by factors from [0.95, 1.05] (a saturation factor is drawn
// for the same stream layout but cannot change a single-channel image);
// hflip/vflip fire with probability 0.5; random_crop pads 4 background
// pixels and crops a random 32x32 window; rotation draws from [-20, 20]
// degrees and affine from [-45, 45]. Labels never change.
Sample augment(const Sample& s, Augment kind, std::mt19937_64& rng);

// Private augmentation stream for one sample at one epoch, so parallel or
// re-ordered execution sees the same draws.
std::mt19937_64 sample_rng(std::uint64_t seed, std::int64_t index, std::int64_t epoch);

// Seeded random split into (train, val) with |val| = val_size. Disjoint and
// exhaustive; val_size must leave at least one training sample.
std::pair<std::vector<Sample>, std::vector<Sample>> split_train_val(
    const std::vector<Sample>& samples, int val_size, std::uint64_t seed);

// Expected shape of a dataset on disk, checked after loading. The checksum
// covers the sorted sample sources (0 means unchecked).
struct SplitCount {
    std::string split;
    int count = 0;
    std::uint64_t checksum = 0;
};

struct DatasetManifest {
    std::string name;
    int classes = 0;
    std::vector<SplitCount> splits;
};

std::uint64_t source_checksum(const std::vector<Sample>& samples);
void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

// Count, label range, and (when recorded) checksum must match the named
// split's row.
void check_manifest(const DatasetManifest& manifest, const std::string& split,
                    const std::vector<Sample>& samples);

}  // namespace mscnn
