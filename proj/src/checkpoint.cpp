#include "mscnn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mscnn {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) fail("truncated checkpoint: " + path);
    return v;
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) fail("truncated checkpoint: " + path);
    return v;
}

std::string read_bytes(std::istream& in, std::size_t n, const std::string& path) {
    std::string s(n, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(n)))
        fail("truncated checkpoint: " + path);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, Network& net, int epoch) {
    if (epoch < 0) fail("epoch counter must be non-negative");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot open checkpoint for writing: " + path);

    out.write(kMagic, sizeof kMagic);
    write_u32(out, kVersion);
    write_u64(out, net.seed());
    write_u32(out, static_cast<std::uint32_t>(epoch));

    const std::string cfg = describe_config(net.config());
    write_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    auto state = net.named_state();
    write_u32(out, static_cast<std::uint32_t>(state.size()));
    for (const NamedTensor& nt : state) {
        write_u32(out, static_cast<std::uint32_t>(nt.name.size()));
        out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        write_u32(out, static_cast<std::uint32_t>(nt.tensor.ndim()));
        for (int d : nt.tensor.shape()) {
            const std::int32_t extent = d;
            out.write(reinterpret_cast<const char*>(&extent), sizeof extent);
        }
        out.write(reinterpret_cast<const char*>(nt.tensor.data()),
                  static_cast<std::streamsize>(nt.tensor.size() * sizeof(double)));
    }
    if (!out) fail("write failed: " + path);
}

LoadedNetwork load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open checkpoint: " + path);

    char magic[4];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        fail("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != kVersion)
        fail("unsupported checkpoint version " + std::to_string(version) + ": " + path);

    const std::uint64_t seed = read_u64(in, path);
    const int epoch = static_cast<int>(read_u32(in, path));
    const std::string cfg_text = read_bytes(in, read_u32(in, path), path);

    LoadedNetwork loaded{Network(parse_config_text(cfg_text), seed), epoch};
    auto state = loaded.net.named_state();
    const std::uint32_t count = read_u32(in, path);
    if (count != state.size())
        fail("checkpoint holds " + std::to_string(count) + " tensors, network expects " +
             std::to_string(state.size()) + ": " + path);
    for (NamedTensor& nt : state) {
        const std::string name = read_bytes(in, read_u32(in, path), path);
        if (name != nt.name)
            fail("checkpoint tensor '" + name + "' where '" + nt.name + "' expected: " + path);
        const std::uint32_t rank = read_u32(in, path);
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) {
            std::int32_t extent = 0;
            if (!in.read(reinterpret_cast<char*>(&extent), sizeof extent))
                fail("truncated checkpoint: " + path);
            shape[i] = extent;
        }
        if (shape != nt.tensor.shape())
            fail("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                 ", network expects " + shape_str(nt.tensor.shape()) + ": " + path);
        if (!in.read(reinterpret_cast<char*>(nt.tensor.data()),
                     static_cast<std::streamsize>(nt.tensor.size() * sizeof(double))))
            fail("truncated checkpoint: " + path);
    }
    return loaded;
}

}  // namespace mscnn
