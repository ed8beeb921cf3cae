#include "mscnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mscnn {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
[[noreturn]] void io_fail(const std::string& msg) { throw std::runtime_error(msg); }

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) io_fail("truncated IDX file: " + path);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
           (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kIdxImages = 0x00000803;  // unsigned byte, rank 3
constexpr std::uint32_t kIdxLabels = 0x00000801;  // unsigned byte, rank 1

}  // namespace

int Dataset::extent() const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != s[3])
        throw std::logic_error("Dataset images must be (n, 1, e, e), got " + shape_str(s));
    return s[2];
}

Dataset Dataset::gather(const std::vector<int>& rows) const {
    const Shape& s = images.shape();
    if (s.size() != 4) throw std::logic_error("Dataset images must be rank 4");
    const int n = s[0];
    if (n != static_cast<int>(labels.size()))
        throw std::logic_error("Dataset image count does not match label count");
    const std::size_t row_elems =
        static_cast<std::size_t>(s[1]) * static_cast<std::size_t>(s[2]) * s[3];

    Dataset out;
    out.images = Tensor::zeros({static_cast<int>(rows.size()), s[1], s[2], s[3]});
    out.labels.reserve(rows.size());
    const double* src = images.data();
    double* dst = out.images.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int r = rows[i];
        if (r < 0 || r >= n)
            throw std::out_of_range("gather: row " + std::to_string(r) + " outside 0.." +
                                    std::to_string(n - 1));
        std::memcpy(dst + i * row_elems, src + static_cast<std::size_t>(r) * row_elems,
                    row_elems * sizeof(double));
        out.labels.push_back(labels[r]);
    }
    return out;
}

Dataset pack(const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("pack: no samples");
    const int e = samples[0].width;
    Dataset out;
    out.images = Tensor::zeros({static_cast<int>(samples.size()), 1, e, e});
    out.labels.reserve(samples.size());
    double* dst = out.images.data();
    const std::size_t row_elems = static_cast<std::size_t>(e) * e;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        if (s.width != e || s.height != e)
            throw std::invalid_argument("pack: sample " + std::to_string(i) + " is " +
                                        std::to_string(s.width) + "x" + std::to_string(s.height) +
                                        ", expected " + std::to_string(e) + "x" +
                                        std::to_string(e));
        if (s.pixels.size() != row_elems)
            throw std::invalid_argument("pack: sample " + std::to_string(i) +
                                        " pixel count does not match its extent");
        if (s.label < 0)
            throw std::invalid_argument("pack: sample " + std::to_string(i) + " has no label");
        std::memcpy(dst + i * row_elems, s.pixels.data(), row_elems * sizeof(double));
        out.labels.push_back(s.label);
    }
    return out;
}

std::vector<Sample> load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) io_fail("cannot open IDX file: " + images_path);
    const std::uint32_t magic = read_be32(imgs, images_path);
    if (magic != kIdxImages)
        io_fail("bad IDX image magic in " + images_path + ": got " + std::to_string(magic));
    const std::uint32_t n = read_be32(imgs, images_path);
    const std::uint32_t h = read_be32(imgs, images_path);
    const std::uint32_t w = read_be32(imgs, images_path);
    if (n == 0 || h == 0 || w == 0 || h > 65536 || w > 65536)
        io_fail("implausible IDX image header in " + images_path);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n) * h * w);
    if (!imgs.read(reinterpret_cast<char*>(bytes.data()),
                   static_cast<std::streamsize>(bytes.size())))
        io_fail("truncated IDX file: " + images_path);

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) io_fail("cannot open IDX file: " + labels_path);
    const std::uint32_t lmagic = read_be32(labs, labels_path);
    if (lmagic != kIdxLabels)
        io_fail("bad IDX label magic in " + labels_path + ": got " + std::to_string(lmagic));
    const std::uint32_t ln = read_be32(labs, labels_path);
    if (ln != n)
        io_fail("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(ln) +
                " labels");
    std::vector<unsigned char> labels(n);
    if (!labs.read(reinterpret_cast<char*>(labels.data()),
                   static_cast<std::streamsize>(labels.size())))
        io_fail("truncated IDX file: " + labels_path);

    std::vector<Sample> out(n);
    const std::size_t pix = static_cast<std::size_t>(h) * w;
    for (std::uint32_t i = 0; i < n; ++i) {
        Sample& s = out[i];
        s.width = static_cast<int>(w);
        s.height = static_cast<int>(h);
        s.label = labels[i];
        s.source = images_path + "#" + std::to_string(i);
        s.pixels.resize(pix);
        const unsigned char* row = bytes.data() + static_cast<std::size_t>(i) * pix;
        for (std::size_t p = 0; p < pix; ++p) s.pixels[p] = row[p];
    }
    return out;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<Sample>& samples) {
    if (samples.empty()) fail("write_idx: no samples");
    const int w = samples[0].width, h = samples[0].height;
    for (const Sample& s : samples) {
        if (s.width != w || s.height != h) fail("write_idx: samples must share one extent");
        if (s.pixels.size() != static_cast<std::size_t>(w) * h)
            fail("write_idx: pixel count does not match extent");
        if (s.label < 0 || s.label > 255) fail("write_idx: labels must be in 0..255");
    }

    std::ofstream imgs(images_path, std::ios::binary | std::ios::trunc);
    if (!imgs) io_fail("cannot open IDX file for writing: " + images_path);
    write_be32(imgs, kIdxImages);
    write_be32(imgs, static_cast<std::uint32_t>(samples.size()));
    write_be32(imgs, static_cast<std::uint32_t>(h));
    write_be32(imgs, static_cast<std::uint32_t>(w));
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * h);
    for (const Sample& s : samples) {
        for (std::size_t p = 0; p < row.size(); ++p)
            row[p] = static_cast<unsigned char>(
                std::clamp<long>(std::lround(s.pixels[p]), 0, 255));
        imgs.write(reinterpret_cast<const char*>(row.data()),
                   static_cast<std::streamsize>(row.size()));
    }
    imgs.flush();
    if (!imgs) io_fail("failed to write IDX file: " + images_path);

    std::ofstream labs(labels_path, std::ios::binary | std::ios::trunc);
    if (!labs) io_fail("cannot open IDX file for writing: " + labels_path);
    write_be32(labs, kIdxLabels);
    write_be32(labs, static_cast<std::uint32_t>(samples.size()));
    for (const Sample& s : samples) {
        const unsigned char b = static_cast<unsigned char>(s.label);
        labs.write(reinterpret_cast<const char*>(&b), 1);
    }
    labs.flush();
    if (!labs) io_fail("failed to write IDX file: " + labels_path);
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_train_val(
    const std::vector<Sample>& samples, int val_size, std::uint64_t seed) {
    const int n = static_cast<int>(samples.size());
    if (val_size < 0) fail("split_train_val: negative validation size");
    if (val_size >= n)
        fail("split_train_val: validation size " + std::to_string(val_size) +
             " leaves no training data out of " + std::to_string(n));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::pair<std::vector<Sample>, std::vector<Sample>> out;
    out.second.reserve(static_cast<std::size_t>(val_size));
    out.first.reserve(static_cast<std::size_t>(n - val_size));
    for (int i = 0; i < n; ++i) {
        const Sample& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        (i < val_size ? out.second : out.first).push_back(s);
    }
    return out;
}

std::uint64_t source_checksum(const std::vector<Sample>& samples) {
    std::vector<std::string> ids;
    ids.reserve(samples.size());
    for (const Sample& s : samples) ids.push_back(s.source);
    std::sort(ids.begin(), ids.end());
    // FNV-1a over the sorted ids, NUL-separated.
    std::uint64_t h = 14695981039346656037ull;
    for (const std::string& id : ids) {
        for (const char c : id) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        h *= 1099511628211ull;  // NUL separator: XOR with 0 leaves h, the multiply advances it
    }
    return h;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    if (manifest.name.empty() || manifest.name.find_first_of(" \t\n") != std::string::npos)
        fail("manifest name must be a single non-empty token");
    if (manifest.classes < 1) fail("manifest needs at least one class");
    if (manifest.splits.empty()) fail("manifest needs at least one split");
    std::ofstream out(path, std::ios::trunc);
    if (!out) io_fail("cannot open manifest for writing: " + path);
    out << "name " << manifest.name << "\n";
    out << "classes " << manifest.classes << "\n";
    for (const SplitCount& sc : manifest.splits) {
        if (sc.split.empty() || sc.split.find_first_of(" \t\n") != std::string::npos)
            fail("manifest split name must be a single non-empty token");
        if (sc.count < 0) fail("manifest split count must be non-negative");
        out << "split " << sc.split << " " << sc.count << " ";
        if (sc.checksum == 0) {
            out << "-\n";
        } else {
            char hex[17];
            std::snprintf(hex, sizeof hex, "%016llx",
                          static_cast<unsigned long long>(sc.checksum));
            out << hex << "\n";
        }
    }
    out.flush();
    if (!out) io_fail("failed to write manifest: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) io_fail("cannot open manifest: " + path);
    DatasetManifest m;
    bool saw_classes = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream row(line);
        std::string key;
        if (!(row >> key) || key[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(lineno);
        if (key == "name") {
            if (!(row >> m.name)) io_fail("manifest name missing: " + where);
        } else if (key == "classes") {
            if (!(row >> m.classes) || m.classes < 1)
                io_fail("manifest classes must be a positive count: " + where);
            saw_classes = true;
        } else if (key == "split") {
            SplitCount sc;
            std::string sum;
            if (!(row >> sc.split >> sc.count >> sum) || sc.count < 0)
                io_fail("manifest split row needs <name> <count> <checksum|->: " + where);
            if (sum != "-") {
                std::size_t used = 0;
                try {
                    sc.checksum = std::stoull(sum, &used, 16);
                } catch (const std::exception&) {
                    io_fail("manifest checksum is not hex: " + where);
                }
                if (used != sum.size()) io_fail("manifest checksum is not hex: " + where);
            }
            for (const SplitCount& prev : m.splits)
                if (prev.split == sc.split) io_fail("duplicate manifest split: " + where);
            m.splits.push_back(sc);
        } else {
            io_fail("unknown manifest key '" + key + "': " + where);
        }
    }
    if (m.name.empty()) io_fail("manifest has no name: " + path);
    if (!saw_classes) io_fail("manifest has no class count: " + path);
    if (m.splits.empty()) io_fail("manifest has no splits: " + path);
    return m;
}

void check_manifest(const DatasetManifest& manifest, const std::string& split,
                    const std::vector<Sample>& samples) {
    const SplitCount* row = nullptr;
    for (const SplitCount& sc : manifest.splits)
        if (sc.split == split) row = &sc;
    if (!row) io_fail("manifest '" + manifest.name + "' has no split '" + split + "'");
    if (static_cast<int>(samples.size()) != row->count)
        io_fail("manifest '" + manifest.name + "' expects " + std::to_string(row->count) + " " +
                split + " samples, loaded " + std::to_string(samples.size()));
    for (const Sample& s : samples)
        if (s.label < 0 || s.label >= manifest.classes)
            io_fail("sample '" + s.source + "' has label " + std::to_string(s.label) +
                    " outside the manifest's " + std::to_string(manifest.classes) + " classes");
    if (row->checksum != 0 && row->checksum != source_checksum(samples))
        io_fail("manifest '" + manifest.name + "' checksum mismatch for split '" + split + "'");
}

}  // namespace mscnn
