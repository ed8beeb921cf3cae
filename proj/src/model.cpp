#include "mscnn/model.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

#include "kv.hpp"

namespace mscnn {

namespace {

constexpr int kInputExtent = 32;
constexpr int kInputFlat = kInputExtent * kInputExtent;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

bool has_local(Variant v, int level) { return v == Variant::local_only ? level == 2 : true; }

bool has_fuse(Variant v, int k) {
    if (v == Variant::proposed || v == Variant::baseline3) return true;
    return v == Variant::local_only && k == 2;
}

bool has_raw(Variant v) {
    return v == Variant::proposed || v == Variant::baseline3 || v == Variant::baseline2;
}

bool has_column_fuse(Variant v) { return v == Variant::baseline2; }

void validate(const NetworkConfig& cfg) {
    if (cfg.classes < 2) fail("class count must be at least 2, got " + std::to_string(cfg.classes));
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
        fail("dropout must be in [0,1), got " + std::to_string(cfg.dropout));
    if (cfg.final_fc < 1) fail("final FC width must be positive");
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) {
            const LevelSpec& l = cfg.columns[static_cast<std::size_t>(j)]
                                     .levels[static_cast<std::size_t>(i)];
            const std::string at =
                "col" + std::to_string(j + 1) + ".lvl" + std::to_string(i + 1);
            if (l.channels < 1) fail(at + ": channels must be positive");
            if (l.stride < 1) fail(at + ": stride must be positive");
            if (l.kernel < 1 || l.kernel % 2 == 0)
                fail(at + ": kernel extent must be odd, got " + std::to_string(l.kernel));
            if (has_local(cfg.variant, i) && l.local_fc < 1)
                fail(at + ": local FC width must be positive");
        }
    for (int k = 0; k < 3; ++k)
        if (has_fuse(cfg.variant, k) && cfg.fusion_fc[static_cast<std::size_t>(k)] < 1)
            fail("fusion FC widths must be positive");
    if (has_raw(cfg.variant) && cfg.raw_fc < 1) fail("raw-tap FC width must be positive");
    if (has_column_fuse(cfg.variant))
        for (int w : cfg.column_fc)
            if (w < 1) fail("column FC widths must be positive");
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

ColumnSpec column(LevelSpec a, LevelSpec b, LevelSpec c) { return ColumnSpec{{a, b, c}}; }

}  // namespace

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::proposed: return "proposed";
        case Variant::local_only: return "local_only";
        case Variant::baseline1: return "baseline1";
        case Variant::baseline2: return "baseline2";
        case Variant::baseline3: return "baseline3";
    }
    fail("unknown variant");
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::proposed, Variant::local_only, Variant::baseline1,
                      Variant::baseline2, Variant::baseline3})
        if (name == variant_name(v)) return v;
    fail("unknown variant name: " + name);
}

NetworkConfig full_config(Variant v, int classes) {
    NetworkConfig cfg;
    cfg.variant = v;
    cfg.classes = classes;
    cfg.columns[0] = column({32, 2, true, 3, 1024}, {64, 1, false, 5, 2048},
                            {256, 1, true, 7, 1024});
    cfg.columns[1] = column({32, 1, true, 5, 3584}, {64, 1, false, 7, 5120},
                            {256, 2, true, 3, 2048});
    cfg.columns[2] = column({32, 1, true, 7, 2560}, {64, 1, false, 3, 8192},
                            {256, 1, true, 5, 8192});
    cfg.fusion_fc = {3584, 8192, 5120};
    cfg.raw_fc = 512;
    cfg.final_fc = 2048;
    cfg.column_fc = {2048, 5120, 8192};
    return cfg;
}

NetworkConfig small_config(Variant v, int classes) {
    NetworkConfig cfg;
    cfg.variant = v;
    cfg.classes = classes;
    cfg.columns[0] = column({8, 2, true, 3, 64}, {16, 1, false, 5, 96}, {32, 1, true, 7, 64});
    cfg.columns[1] = column({8, 1, true, 5, 160}, {16, 1, false, 7, 192}, {32, 2, true, 3, 96});
    cfg.columns[2] = column({8, 1, true, 7, 128}, {16, 1, false, 3, 256}, {32, 1, true, 5, 256});
    cfg.fusion_fc = {192, 256, 192};
    cfg.raw_fc = 32;
    cfg.final_fc = 128;
    cfg.column_fc = {96, 192, 256};
    return cfg;
}

std::string describe_config(const NetworkConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "variant=" << variant_name(cfg.variant) << '\n';
    os << "classes=" << cfg.classes << '\n';
    os << "dropout=" << cfg.dropout << '\n';
    os << "raw_fc=" << cfg.raw_fc << '\n';
    os << "final_fc=" << cfg.final_fc << '\n';
    os << "fusion_fc=" << cfg.fusion_fc[0] << ',' << cfg.fusion_fc[1] << ',' << cfg.fusion_fc[2]
       << '\n';
    os << "column_fc=" << cfg.column_fc[0] << ',' << cfg.column_fc[1] << ',' << cfg.column_fc[2]
       << '\n';
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) {
            const LevelSpec& l = cfg.columns[static_cast<std::size_t>(j)]
                                     .levels[static_cast<std::size_t>(i)];
            const std::string at =
                "col" + std::to_string(j + 1) + ".lvl" + std::to_string(i + 1);
            os << at << ".channels=" << l.channels << '\n';
            os << at << ".stride=" << l.stride << '\n';
            os << at << ".pool=" << (l.pool ? 1 : 0) << '\n';
            os << at << ".kernel=" << l.kernel << '\n';
            os << at << ".fc=" << l.local_fc << '\n';
        }
    return os.str();
}

NetworkConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> m;
    for (auto& [k, v] : detail::parse_kv(text))
        if (!m.emplace(k, v).second) fail("duplicate config key: " + k);
    auto take = [&m](const std::string& key) {
        auto it = m.find(key);
        if (it == m.end()) fail("missing config key: " + key);
        std::string v = it->second;
        m.erase(it);
        return v;
    };
    auto take_int3 = [&take](const std::string& key) {
        auto parts = detail::split_list(take(key));
        if (parts.size() != 3) fail(key + " needs exactly 3 values");
        return std::array<int, 3>{std::stoi(parts[0]), std::stoi(parts[1]),
                                  std::stoi(parts[2])};
    };

    NetworkConfig cfg;
    cfg.variant = variant_from_name(take("variant"));
    cfg.classes = std::stoi(take("classes"));
    cfg.dropout = std::stod(take("dropout"));
    cfg.raw_fc = std::stoi(take("raw_fc"));
    cfg.final_fc = std::stoi(take("final_fc"));
    cfg.fusion_fc = take_int3("fusion_fc");
    cfg.column_fc = take_int3("column_fc");
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) {
            LevelSpec& l =
                cfg.columns[static_cast<std::size_t>(j)].levels[static_cast<std::size_t>(i)];
            const std::string at =
                "col" + std::to_string(j + 1) + ".lvl" + std::to_string(i + 1);
            l.channels = std::stoi(take(at + ".channels"));
            l.stride = std::stoi(take(at + ".stride"));
            l.pool = std::stoi(take(at + ".pool")) != 0;
            l.kernel = std::stoi(take(at + ".kernel"));
            l.local_fc = std::stoi(take(at + ".fc"));
        }
    if (!m.empty()) fail("unknown config key: " + m.begin()->first);
    return cfg;
}

WidthReport infer_widths(const NetworkConfig& cfg) {
    validate(cfg);
    WidthReport r{};
    for (int j = 0; j < 3; ++j) {
        int extent = kInputExtent;
        int ch = 1;
        for (int i = 0; i < 3; ++i) {
            const LevelSpec& l = cfg.columns[static_cast<std::size_t>(j)]
                                     .levels[static_cast<std::size_t>(i)];
            int in_extent = extent;
            int in_ch = ch;
            if (i == 2) {
                if (cfg.variant == Variant::baseline3) {
                    // conv-level skip: align the level-1 and level-2 maps by
                    // pooling the larger, then stack their channels
                    int e1 = r.spatial[0][static_cast<std::size_t>(j)];
                    int e2 = r.spatial[1][static_cast<std::size_t>(j)];
                    while (e1 != e2) {
                        if (e1 > e2)
                            e1 = ceil_div(e1, 2);
                        else
                            e2 = ceil_div(e2, 2);
                    }
                    in_extent = e1;
                    in_ch = r.channels[0][static_cast<std::size_t>(j)] +
                            r.channels[1][static_cast<std::size_t>(j)];
                }
                r.level3_in_channels[static_cast<std::size_t>(j)] = in_ch;
            }
            extent = ceil_div(in_extent, l.stride);
            if (l.pool) extent = ceil_div(extent, 2);
            ch = l.channels;
            r.spatial[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = extent;
            r.channels[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = ch;
            r.x_flat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                ch * extent * extent;
            r.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = l.local_fc;
        }
    }
    for (int k = 0; k < 3; ++k)
        r.w[static_cast<std::size_t>(k)] = r.y[static_cast<std::size_t>(k)][0] +
                                           r.y[static_cast<std::size_t>(k)][1] +
                                           r.y[static_cast<std::size_t>(k)][2];
    for (int j = 0; j < 3; ++j)
        r.column_concat[static_cast<std::size_t>(j)] = r.y[0][static_cast<std::size_t>(j)] +
                                                       r.y[1][static_cast<std::size_t>(j)] +
                                                       r.y[2][static_cast<std::size_t>(j)];
    r.descriptor = cfg.final_fc;
    switch (cfg.variant) {
        case Variant::proposed:
        case Variant::baseline3:
            r.g = cfg.raw_fc + cfg.fusion_fc[0] + cfg.fusion_fc[1] + cfg.fusion_fc[2];
            break;
        case Variant::local_only:
            r.g = cfg.fusion_fc[2];
            break;
        case Variant::baseline1:
            r.g = r.column_concat[0] + r.column_concat[1] + r.column_concat[2];
            break;
        case Variant::baseline2:
            r.g = cfg.raw_fc + cfg.column_fc[0] + cfg.column_fc[1] + cfg.column_fc[2];
            break;
    }
    return r;
}

std::size_t parameter_count(const NetworkConfig& cfg) {
    const WidthReport wr = infer_widths(cfg);
    auto fc = [](int in, int out) {
        // weight + bias + batchnorm gamma/beta
        return static_cast<std::size_t>(out) * in + 3u * static_cast<std::size_t>(out);
    };
    std::size_t total = 0;
    for (int j = 0; j < 3; ++j) {
        int in_ch = 1;
        for (int i = 0; i < 3; ++i) {
            const LevelSpec& l = cfg.columns[static_cast<std::size_t>(j)]
                                     .levels[static_cast<std::size_t>(i)];
            if (i == 2) in_ch = wr.level3_in_channels[static_cast<std::size_t>(j)];
            total += static_cast<std::size_t>(l.channels) * in_ch * l.kernel * l.kernel +
                     3u * static_cast<std::size_t>(l.channels);
            in_ch = l.channels;
        }
    }
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i)
            if (has_local(cfg.variant, i))
                total += fc(wr.x_flat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                            wr.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    for (int k = 0; k < 3; ++k)
        if (has_fuse(cfg.variant, k))
            total += fc(wr.w[static_cast<std::size_t>(k)],
                        cfg.fusion_fc[static_cast<std::size_t>(k)]);
    if (has_raw(cfg.variant)) total += fc(kInputFlat, cfg.raw_fc);
    if (has_column_fuse(cfg.variant))
        for (int j = 0; j < 3; ++j)
            total += fc(wr.column_concat[static_cast<std::size_t>(j)],
                        cfg.column_fc[static_cast<std::size_t>(j)]);
    total += fc(wr.g, cfg.final_fc);
    total += static_cast<std::size_t>(cfg.classes) * cfg.final_fc +
             static_cast<std::size_t>(cfg.classes);
    return total;
}

Tensor ConvBlock::forward(const Tensor& x, Mode mode) {
    Tensor t = conv(x);
    if (pool) t = maxpool2d(t);
    t = bn(t, mode);
    return relu(t);
}

Tensor FcBlock::forward(const Tensor& x, Mode mode, double rate, std::mt19937_64* rng) {
    Tensor t = relu(bn(fc(x), mode));
    if (dropped && mode == Mode::train && rate > 0.0) {
        if (!rng) fail("train-mode forward with dropout needs an rng");
        t = dropout(t, rate, mode, *rng);
    }
    return t;
}

void Network::set_dropout(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) fail("dropout rate must be in [0,1)");
    cfg_.dropout = rate;
}

Network::Network(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    validate(cfg_);
    const WidthReport wr = infer_widths(cfg_);
    std::mt19937_64 rng(seed);

    for (int j = 0; j < 3; ++j) {
        int in_ch = 1;
        for (int i = 0; i < 3; ++i) {
            const LevelSpec& l = cfg_.columns[static_cast<std::size_t>(j)]
                                     .levels[static_cast<std::size_t>(i)];
            if (i == 2) in_ch = wr.level3_in_channels[static_cast<std::size_t>(j)];
            conv_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
                ConvBlock{Conv2d(in_ch, l.channels, l.kernel, l.stride, rng),
                          BatchNorm(l.channels), l.pool};
            in_ch = l.channels;
        }
    }
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i)
            if (has_local(cfg_.variant, i)) {
                const int in = wr.x_flat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                const int out = wr.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                local_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
                    FcBlock{Linear(in, out, rng), BatchNorm(out), true};
            }
    for (int k = 0; k < 3; ++k)
        if (has_fuse(cfg_.variant, k))
            fuse_[static_cast<std::size_t>(k)] =
                FcBlock{Linear(wr.w[static_cast<std::size_t>(k)],
                               cfg_.fusion_fc[static_cast<std::size_t>(k)], rng),
                        BatchNorm(cfg_.fusion_fc[static_cast<std::size_t>(k)]), true};
    if (has_raw(cfg_.variant))
        raw_ = FcBlock{Linear(kInputFlat, cfg_.raw_fc, rng), BatchNorm(cfg_.raw_fc), true};
    if (has_column_fuse(cfg_.variant))
        for (int j = 0; j < 3; ++j)
            column_fuse_[static_cast<std::size_t>(j)] =
                FcBlock{Linear(wr.column_concat[static_cast<std::size_t>(j)],
                               cfg_.column_fc[static_cast<std::size_t>(j)], rng),
                        BatchNorm(cfg_.column_fc[static_cast<std::size_t>(j)]), true};
    final_ = FcBlock{Linear(wr.g, cfg_.final_fc, rng), BatchNorm(cfg_.final_fc), false};
    head_ = Linear(cfg_.final_fc, cfg_.classes, rng);
}

Tensor Network::conv_cascade(int column, const Tensor& batch, Mode mode,
                             std::array<Tensor, 3>* taps) {
    Tensor t = batch;
    for (int i = 0; i < 3; ++i) {
        if (cfg_.variant == Variant::baseline3 && i == 2) {
            Tensor a = (*taps)[0];
            Tensor b = (*taps)[1];
            while (a.dim(2) != b.dim(2)) {
                if (a.dim(2) > b.dim(2))
                    a = maxpool2d(a);
                else
                    b = maxpool2d(b);
            }
            t = concat({a, b}, 1);
        }
        t = conv_[static_cast<std::size_t>(column)][static_cast<std::size_t>(i)].forward(t, mode);
        (*taps)[static_cast<std::size_t>(i)] = t;
    }
    return t;
}

namespace {

Tensor flat2d(const Tensor& t) {
    return reshape(t, {t.dim(0), t.dim(1) * t.dim(2) * t.dim(3)});
}

}  // namespace

FeatureBundle Network::forward(const Tensor& batch, Mode mode, std::mt19937_64* rng) {
    if (batch.ndim() != 4 || batch.dim(1) != 1 || batch.dim(2) != kInputExtent ||
        batch.dim(3) != kInputExtent)
        fail("forward expects (b,1,32,32), got " + shape_str(batch.shape()));
    const Mode conv_mode = frozen_convs_ ? Mode::eval : mode;
    const double rate = cfg_.dropout;
    FeatureBundle fb;

    for (int j = 0; j < 3; ++j) {
        std::array<Tensor, 3> taps;
        conv_cascade(j, batch, conv_mode, &taps);
        for (int i = 0; i < 3; ++i)
            fb.x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                taps[static_cast<std::size_t>(i)];
    }
    auto local_out = [&](int i, int j) {
        return local_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]->forward(
            flat2d(fb.x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]), mode, rate,
            rng);
    };

    switch (cfg_.variant) {
        case Variant::proposed:
        case Variant::baseline3: {
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i)
                    fb.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                        local_out(i, j);
            for (int k = 0; k < 3; ++k)
                fb.w[static_cast<std::size_t>(k)] =
                    concat({fb.y[static_cast<std::size_t>(k)][0],
                            fb.y[static_cast<std::size_t>(k)][1],
                            fb.y[static_cast<std::size_t>(k)][2]},
                           1);
            fb.f1 = fuse_[0]->forward(fb.w[0], mode, rate, rng);
            fb.f2 = fuse_[1]->forward(fb.w[1], mode, rate, rng);
            fb.f3 = fuse_[2]->forward(fb.w[2], mode, rate, rng);
            fb.f0 = raw_->forward(flat2d(batch), mode, rate, rng);
            fb.g = concat({fb.f0, fb.f1, fb.f2, fb.f3}, 1);
            break;
        }
        case Variant::local_only: {
            for (int j = 0; j < 3; ++j)
                fb.y[2][static_cast<std::size_t>(j)] = local_out(2, j);
            fb.w[2] = concat({fb.y[2][0], fb.y[2][1], fb.y[2][2]}, 1);
            fb.f3 = fuse_[2]->forward(fb.w[2], mode, rate, rng);
            fb.g = fb.f3;
            break;
        }
        case Variant::baseline1: {
            std::vector<Tensor> parts;
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    fb.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                        local_out(i, j);
                    parts.push_back(fb.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
                }
            fb.g = concat(parts, 1);
            break;
        }
        case Variant::baseline2: {
            std::array<Tensor, 3> fused;  // column-fusion outputs, stored in f1..f3
            for (int j = 0; j < 3; ++j) {
                for (int i = 0; i < 3; ++i)
                    fb.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                        local_out(i, j);
                Tensor cj = concat({fb.y[0][static_cast<std::size_t>(j)],
                                    fb.y[1][static_cast<std::size_t>(j)],
                                    fb.y[2][static_cast<std::size_t>(j)]},
                                   1);
                fused[static_cast<std::size_t>(j)] =
                    column_fuse_[static_cast<std::size_t>(j)]->forward(cj, mode, rate, rng);
            }
            fb.f0 = raw_->forward(flat2d(batch), mode, rate, rng);
            fb.f1 = fused[0];
            fb.f2 = fused[1];
            fb.f3 = fused[2];
            fb.g = concat({fb.f0, fb.f1, fb.f2, fb.f3}, 1);
            break;
        }
    }
    fb.descriptor = final_.forward(fb.g, mode, rate, rng);
    fb.logits = head_(fb.descriptor);
    return fb;
}

Tensor Network::forward_local_only(const Tensor& batch, Mode mode, std::mt19937_64* rng) {
    if (cfg_.variant != Variant::local_only)
        fail(std::string("network variant is ") + variant_name(cfg_.variant) +
             ", expected local_only");
    return forward(batch, mode, rng).logits;
}

Tensor Network::forward_baseline(const Tensor& batch, Variant variant, Mode mode,
                                 std::mt19937_64* rng) {
    if (variant != Variant::baseline1 && variant != Variant::baseline2 &&
        variant != Variant::baseline3)
        fail(std::string("not a baseline variant: ") + variant_name(variant));
    if (cfg_.variant != variant)
        fail(std::string("network variant is ") + variant_name(cfg_.variant) + ", expected " +
             variant_name(variant));
    return forward(batch, mode, rng).logits;
}

Tensor Network::forward_column_deep(int column, const Tensor& batch, Mode mode,
                                    std::mt19937_64* rng) {
    if (column < 0 || column > 2) fail("column index out of range");
    const Mode conv_mode = frozen_convs_ ? Mode::eval : mode;
    std::array<Tensor, 3> taps;
    Tensor deep = conv_cascade(column, batch, conv_mode, &taps);
    return local_[static_cast<std::size_t>(column)][2]->forward(flat2d(deep), mode,
                                                                cfg_.dropout, rng);
}

std::vector<double> Network::extract_descriptor(const Tensor& image) {
    if (image.size() != static_cast<std::size_t>(kInputFlat))
        fail("descriptor extraction expects one 32x32 image, got " + shape_str(image.shape()));
    Tensor batch = reshape(image, {1, 1, kInputExtent, kInputExtent});
    FeatureBundle fb = forward(batch, Mode::eval);
    return fb.descriptor.values();
}

Tensor Network::descriptors(const Tensor& batch) { return forward(batch, Mode::eval).descriptor; }

namespace {

void add_block(std::vector<NamedTensor>& out, const std::string& prefix, const Linear& fc,
               BatchNorm& bn, bool with_stats) {
    out.push_back({prefix + ".weight", fc.weight});
    out.push_back({prefix + ".bias", fc.bias});
    out.push_back({prefix + ".bn.gamma", bn.gamma});
    out.push_back({prefix + ".bn.beta", bn.beta});
    if (with_stats) {
        out.push_back({prefix + ".bn.running_mean", bn.running_mean});
        out.push_back({prefix + ".bn.running_var", bn.running_var});
    }
}

void add_block(std::vector<NamedTensor>& out, const std::string& prefix, const Conv2d& conv,
               BatchNorm& bn, bool with_stats) {
    out.push_back({prefix + ".weight", conv.weight});
    out.push_back({prefix + ".bias", conv.bias});
    out.push_back({prefix + ".bn.gamma", bn.gamma});
    out.push_back({prefix + ".bn.beta", bn.beta});
    if (with_stats) {
        out.push_back({prefix + ".bn.running_mean", bn.running_mean});
        out.push_back({prefix + ".bn.running_var", bn.running_var});
    }
}

}  // namespace

std::vector<NamedTensor> Network::named_state() {
    std::vector<NamedTensor> out;
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) {
            ConvBlock& b = conv_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
            const std::string at =
                "col" + std::to_string(j + 1) + ".lvl" + std::to_string(i + 1);
            add_block(out, at + ".conv", b.conv, b.bn, true);
        }
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i)
            if (auto& b = local_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]; b) {
                const std::string at =
                    "col" + std::to_string(j + 1) + ".lvl" + std::to_string(i + 1);
                add_block(out, at + ".local", b->fc, b->bn, true);
            }
    for (int k = 0; k < 3; ++k)
        if (auto& b = fuse_[static_cast<std::size_t>(k)]; b)
            add_block(out, "fuse" + std::to_string(k + 1), b->fc, b->bn, true);
    if (raw_) add_block(out, "raw", raw_->fc, raw_->bn, true);
    for (int j = 0; j < 3; ++j)
        if (auto& b = column_fuse_[static_cast<std::size_t>(j)]; b)
            add_block(out, "colfuse" + std::to_string(j + 1), b->fc, b->bn, true);
    add_block(out, "final", final_.fc, final_.bn, true);
    out.push_back({"head.weight", head_.weight});
    out.push_back({"head.bias", head_.bias});
    return out;
}

std::vector<NamedTensor> Network::named_parameters() {
    std::vector<NamedTensor> out;
    for (NamedTensor& nt : named_state())
        if (nt.name.find(".running_") == std::string::npos) out.push_back(std::move(nt));
    return out;
}

std::vector<Tensor> Network::parameters() {
    std::vector<Tensor> out;
    for (NamedTensor& nt : named_parameters()) out.push_back(std::move(nt.tensor));
    return out;
}

void Network::zero_grad() {
    for (Tensor& t : parameters()) t.zero_grad();
}

void Network::drop_grads() {
    for (Tensor& t : parameters()) t.drop_grad();
}

void Network::freeze_convs(bool frozen) {
    frozen_convs_ = frozen;
    for (auto& col : conv_)
        for (ConvBlock& b : col) {
            b.conv.weight.set_requires_grad(!frozen);
            b.conv.bias.set_requires_grad(!frozen);
            b.bn.gamma.set_requires_grad(!frozen);
            b.bn.beta.set_requires_grad(!frozen);
        }
}

Network build_network(const NetworkConfig& cfg, std::uint64_t seed) {
    return Network(cfg, seed);
}

FeatureBundle forward(Network& net, const Tensor& batch, Mode mode, std::mt19937_64* rng) {
    return net.forward(batch, mode, rng);
}

}  // namespace mscnn
