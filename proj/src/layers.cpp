#include "mscnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include "blas.hpp"

namespace mscnn {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

const std::vector<double>* out_grad(const std::shared_ptr<detail::TensorImpl>& out) {
    return out->grad.empty() ? nullptr : &out->grad;
}

bool wants_grad(const std::shared_ptr<detail::TensorImpl>& t) {
    return t->requires_grad || t->tracked;
}

// Unpacks one sample's (c,h,w) block into a (c*k*k, ho*wo) patch matrix.
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad,
            int ho, int wo, double* col) {
    const std::size_t hw = static_cast<std::size_t>(ho) * wo;
    for (int ci = 0; ci < c; ++ci)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                double* row = col + (static_cast<std::size_t>(ci) * k * k + ki * k + kj) * hw;
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    double* dst = row + static_cast<std::size_t>(oi) * wo;
                    if (ii < 0 || ii >= h) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<std::size_t>(ci) * h + ii) * w;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        dst[oj] = (jj >= 0 && jj < w) ? src[jj] : 0.0;
                    }
                }
            }
}

// Scatter-adds a patch-matrix gradient back onto the (c,h,w) input block.
void col2im_add(const double* col, int c, int h, int w, int k, int stride, int pad,
                int ho, int wo, double* dx) {
    const std::size_t hw = static_cast<std::size_t>(ho) * wo;
    for (int ci = 0; ci < c; ++ci)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const double* row = col + (static_cast<std::size_t>(ci) * k * k + ki * k + kj) * hw;
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    double* dst = dx + (static_cast<std::size_t>(ci) * h + ii) * w;
                    const double* src = row + static_cast<std::size_t>(oi) * wo;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (jj >= 0 && jj < w) dst[jj] += src[oj];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
    if (x.ndim() != 4) fail("conv2d input must be (n,c,h,w), got " + shape_str(x.shape()));
    if (weight.ndim() != 4 || weight.dim(2) != weight.dim(3))
        fail("conv2d weight must be (oc,ic,k,k), got " + shape_str(weight.shape()));
    if (weight.dim(1) != x.dim(1))
        fail("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs weight " +
             shape_str(weight.shape()));
    if (bias.ndim() != 1 || bias.dim(0) != weight.dim(0))
        fail("conv2d bias must be (oc), got " + shape_str(bias.shape()));
    if (stride < 1) fail("conv2d stride must be positive");

    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oc = weight.dim(0), k = weight.dim(2), pad = k / 2;
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    const int hw = ho * wo, ckk = c * k * k;
    const std::size_t in_block = static_cast<std::size_t>(c) * h * w;
    const std::size_t out_block = static_cast<std::size_t>(oc) * hw;

    Tensor out = Tensor::zeros({n, oc, ho, wo});
    std::vector<double> col(static_cast<std::size_t>(ckk) * hw);
    for (int si = 0; si < n; ++si) {
        im2col(x.data() + si * in_block, c, h, w, k, stride, pad, ho, wo, col.data());
        detail::gemm(false, false, oc, hw, ckk, 1.0, weight.data(), ckk, col.data(), hw, 0.0,
                     out.data() + si * out_block, hw);
        for (int o = 0; o < oc; ++o) {
            double* plane = out.data() + si * out_block + static_cast<std::size_t>(o) * hw;
            const double b = bias.data()[o];
            for (int p = 0; p < hw; ++p) plane[p] += b;
        }
    }
    detail::check_finite(out, "conv2d");

    if (detail::should_track({&x, &weight, &bias})) {
        detail::mark_tracked(out);
        auto ix = x.impl(), iw = weight.impl(), ib = bias.impl(), io = out.impl();
        Tape::active()->record(
            {"conv2d",
             {ix->id, iw->id, ib->id},
             io->id,
             [ix, iw, ib, io, n, c, h, w, oc, k, pad, stride, ho, wo, hw, ckk, in_block,
              out_block] {
                 const auto* g = out_grad(io);
                 if (!g) return;
                 std::vector<double> col(static_cast<std::size_t>(ckk) * hw);
                 if (wants_grad(iw)) {
                     std::vector<double> dw(iw->data.size(), 0.0);
                     for (int si = 0; si < n; ++si) {
                         im2col(ix->data.data() + si * in_block, c, h, w, k, stride, pad, ho, wo,
                                col.data());
                         detail::gemm(false, true, oc, ckk, hw, 1.0, g->data() + si * out_block,
                                      hw, col.data(), hw, 1.0, dw.data(), ckk);
                     }
                     detail::accumulate_grad(iw, dw.data(), dw.size());
                 }
                 if (wants_grad(ib)) {
                     std::vector<double> db(static_cast<std::size_t>(oc), 0.0);
                     for (int si = 0; si < n; ++si)
                         for (int o = 0; o < oc; ++o) {
                             const double* plane =
                                 g->data() + si * out_block + static_cast<std::size_t>(o) * hw;
                             for (int p = 0; p < hw; ++p) db[static_cast<std::size_t>(o)] += plane[p];
                         }
                     detail::accumulate_grad(ib, db.data(), db.size());
                 }
                 if (wants_grad(ix)) {
                     std::vector<double> dx(ix->data.size(), 0.0);
                     for (int si = 0; si < n; ++si) {
                         detail::gemm(true, false, ckk, hw, oc, 1.0, iw->data.data(), ckk,
                                      g->data() + si * out_block, hw, 0.0, col.data(), hw);
                         col2im_add(col.data(), c, h, w, k, stride, pad, ho, wo,
                                    dx.data() + si * in_block);
                     }
                     detail::accumulate_grad(ix, dx.data(), dx.size());
                 }
             }});
    }
    return out;
}

Tensor maxpool2d(const Tensor& x, int extent, int stride) {
    if (x.ndim() != 4) fail("maxpool2d input must be (n,c,h,w), got " + shape_str(x.shape()));
    if (extent < 1 || stride < 1) fail("maxpool2d extent and stride must be positive");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = (h + stride - 1) / stride;
    const int wo = (w + stride - 1) / stride;

    Tensor out = Tensor::zeros({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    double* po = out.data();
    std::size_t oi_flat = 0;
    for (int si = 0; si < n; ++si)
        for (int ci = 0; ci < c; ++ci) {
            const double* plane =
                x.data() + (static_cast<std::size_t>(si) * c + ci) * h * w;
            const std::int64_t base = (static_cast<std::int64_t>(si) * c + ci) * h * w;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox, ++oi_flat) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_at = -1;
                    for (int ky = 0; ky < extent; ++ky) {
                        const int iy = oy * stride + ky;
                        if (iy >= h) break;
                        for (int kx = 0; kx < extent; ++kx) {
                            const int ix = ox * stride + kx;
                            if (ix >= w) break;
                            const double v = plane[iy * w + ix];
                            if (v > best) {
                                best = v;
                                best_at = base + iy * w + ix;
                            }
                        }
                    }
                    po[oi_flat] = best;
                    (*argmax)[oi_flat] = best_at;
                }
        }
    detail::check_finite(out, "maxpool2d");

    if (detail::should_track({&x})) {
        detail::mark_tracked(out);
        auto ix = x.impl(), io = out.impl();
        Tape::active()->record({"maxpool2d",
                                {ix->id},
                                io->id,
                                [ix, io, argmax] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    std::vector<double> dx(ix->data.size(), 0.0);
                                    for (std::size_t i = 0; i < g->size(); ++i)
                                        dx[static_cast<std::size_t>((*argmax)[i])] += (*g)[i];
                                    detail::accumulate_grad(ix, dx.data(), dx.size());
                                }});
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::max(0.0, x.data()[i]);
    if (detail::should_track({&x})) {
        detail::mark_tracked(out);
        auto ix = x.impl(), io = out.impl();
        Tape::active()->record({"relu",
                                {ix->id},
                                io->id,
                                [ix, io] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    std::vector<double> dx(g->size());
                                    for (std::size_t i = 0; i < dx.size(); ++i)
                                        dx[i] = ix->data[i] > 0.0 ? (*g)[i] : 0.0;
                                    detail::accumulate_grad(ix, dx.data(), dx.size());
                                }});
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.ndim() != 2) fail("linear input must be (n,features), got " + shape_str(x.shape()));
    if (weight.ndim() != 2 || weight.dim(1) != x.dim(1))
        fail("linear shape mismatch: input " + shape_str(x.shape()) + " vs weight " +
             shape_str(weight.shape()));
    if (bias.ndim() != 1 || bias.dim(0) != weight.dim(0))
        fail("linear bias must be (out), got " + shape_str(bias.shape()));

    const int n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
    Tensor out = Tensor::zeros({n, out_f});
    detail::gemm(false, true, n, out_f, in, 1.0, x.data(), in, weight.data(), in, 0.0,
                 out.data(), out_f);
    for (int si = 0; si < n; ++si) {
        double* row = out.data() + static_cast<std::size_t>(si) * out_f;
        for (int o = 0; o < out_f; ++o) row[o] += bias.data()[o];
    }
    detail::check_finite(out, "linear");

    if (detail::should_track({&x, &weight, &bias})) {
        detail::mark_tracked(out);
        auto ix = x.impl(), iw = weight.impl(), ib = bias.impl(), io = out.impl();
        Tape::active()->record(
            {"linear", {ix->id, iw->id, ib->id}, io->id, [ix, iw, ib, io, n, in, out_f] {
                 const auto* g = out_grad(io);
                 if (!g) return;
                 if (wants_grad(iw)) {
                     std::vector<double> dw(iw->data.size());
                     detail::gemm(true, false, out_f, in, n, 1.0, g->data(), out_f,
                                  ix->data.data(), in, 0.0, dw.data(), in);
                     detail::accumulate_grad(iw, dw.data(), dw.size());
                 }
                 if (wants_grad(ib)) {
                     std::vector<double> db(static_cast<std::size_t>(out_f), 0.0);
                     for (int si = 0; si < n; ++si)
                         for (int o = 0; o < out_f; ++o)
                             db[static_cast<std::size_t>(o)] +=
                                 (*g)[static_cast<std::size_t>(si) * out_f + o];
                     detail::accumulate_grad(ib, db.data(), db.size());
                 }
                 if (wants_grad(ix)) {
                     std::vector<double> dx(ix->data.size());
                     detail::gemm(false, false, n, in, out_f, 1.0, g->data(), out_f,
                                  iw->data.data(), in, 0.0, dx.data(), in);
                     detail::accumulate_grad(ix, dx.data(), dx.size());
                 }
             }});
    }
    return out;
}

namespace {

struct NormAxes {
    int features;
    std::size_t plane;  // spatial elements per (sample, feature)
    std::size_t count;  // elements pooled per feature
};

NormAxes norm_axes(const Tensor& x) {
    if (x.ndim() != 2 && x.ndim() != 4)
        fail("batchnorm input must be (n,f) or (n,c,h,w), got " + shape_str(x.shape()));
    NormAxes a;
    a.features = x.dim(1);
    a.plane = x.ndim() == 4 ? static_cast<std::size_t>(x.dim(2)) * x.dim(3) : 1;
    a.count = static_cast<std::size_t>(x.dim(0)) * a.plane;
    return a;
}

void check_norm_params(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& rm, const Tensor& rv, int features) {
    for (const Tensor* t : {&gamma, &beta, &rm, &rv})
        if (t->ndim() != 1 || t->dim(0) != features)
            fail("batchnorm parameter shape " + shape_str(t->shape()) + " does not match input " +
                 shape_str(x.shape()));
}

}  // namespace

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       Tensor& running_mean, Tensor& running_var, double momentum, double eps) {
    const NormAxes ax = norm_axes(x);
    check_norm_params(x, gamma, beta, running_mean, running_var, ax.features);
    const int n = x.dim(0), f = ax.features;
    const std::size_t plane = ax.plane;
    const double inv_count = 1.0 / static_cast<double>(ax.count);

    auto mean = std::make_shared<std::vector<double>>(f, 0.0);
    auto inv_std = std::make_shared<std::vector<double>>(f, 0.0);
    std::vector<double> var(static_cast<std::size_t>(f), 0.0);
    for (int si = 0; si < n; ++si)
        for (int ci = 0; ci < f; ++ci) {
            const double* p = x.data() + (static_cast<std::size_t>(si) * f + ci) * plane;
            double acc = 0.0;
            for (std::size_t e = 0; e < plane; ++e) acc += p[e];
            (*mean)[static_cast<std::size_t>(ci)] += acc;
        }
    for (double& m : *mean) m *= inv_count;
    for (int si = 0; si < n; ++si)
        for (int ci = 0; ci < f; ++ci) {
            const double* p = x.data() + (static_cast<std::size_t>(si) * f + ci) * plane;
            const double m = (*mean)[static_cast<std::size_t>(ci)];
            double acc = 0.0;
            for (std::size_t e = 0; e < plane; ++e) acc += (p[e] - m) * (p[e] - m);
            var[static_cast<std::size_t>(ci)] += acc;
        }
    for (int ci = 0; ci < f; ++ci) {
        var[static_cast<std::size_t>(ci)] *= inv_count;
        (*inv_std)[static_cast<std::size_t>(ci)] =
            1.0 / std::sqrt(var[static_cast<std::size_t>(ci)] + eps);
    }

    Tensor out = Tensor::zeros(x.shape());
    for (int si = 0; si < n; ++si)
        for (int ci = 0; ci < f; ++ci) {
            const std::size_t off = (static_cast<std::size_t>(si) * f + ci) * plane;
            const double m = (*mean)[static_cast<std::size_t>(ci)];
            const double is = (*inv_std)[static_cast<std::size_t>(ci)];
            const double gm = gamma.data()[ci], bt = beta.data()[ci];
            for (std::size_t e = 0; e < plane; ++e)
                out.data()[off + e] = gm * (x.data()[off + e] - m) * is + bt;
        }
    detail::check_finite(out, "batchnorm_train");

    // the running average sees the unbiased variance
    const double bessel =
        ax.count > 1 ? static_cast<double>(ax.count) / static_cast<double>(ax.count - 1) : 1.0;
    for (int ci = 0; ci < f; ++ci) {
        running_mean.data()[ci] = (1.0 - momentum) * running_mean.data()[ci] +
                                  momentum * (*mean)[static_cast<std::size_t>(ci)];
        running_var.data()[ci] = (1.0 - momentum) * running_var.data()[ci] +
                                 momentum * var[static_cast<std::size_t>(ci)] * bessel;
    }

    if (detail::should_track({&x, &gamma, &beta})) {
        detail::mark_tracked(out);
        auto ix = x.impl(), ig = gamma.impl(), ib = beta.impl(), io = out.impl();
        Tape::active()->record(
            {"batchnorm", {ix->id, ig->id, ib->id}, io->id,
             [ix, ig, ib, io, mean, inv_std, n, f, plane, inv_count] {
                 const auto* g = out_grad(io);
                 if (!g) return;
                 std::vector<double> sum_g(static_cast<std::size_t>(f), 0.0);
                 std::vector<double> sum_gx(static_cast<std::size_t>(f), 0.0);
                 for (int si = 0; si < n; ++si)
                     for (int ci = 0; ci < f; ++ci) {
                         const std::size_t off = (static_cast<std::size_t>(si) * f + ci) * plane;
                         const double m = (*mean)[static_cast<std::size_t>(ci)];
                         for (std::size_t e = 0; e < plane; ++e) {
                             sum_g[static_cast<std::size_t>(ci)] += (*g)[off + e];
                             sum_gx[static_cast<std::size_t>(ci)] +=
                                 (*g)[off + e] * (ix->data[off + e] - m);
                         }
                     }
                 if (wants_grad(ig) || wants_grad(ib)) {
                     std::vector<double> dgm(static_cast<std::size_t>(f));
                     for (int ci = 0; ci < f; ++ci)
                         dgm[static_cast<std::size_t>(ci)] =
                             sum_gx[static_cast<std::size_t>(ci)] *
                             (*inv_std)[static_cast<std::size_t>(ci)];
                     detail::accumulate_grad(ig, dgm.data(), dgm.size());
                     detail::accumulate_grad(ib, sum_g.data(), sum_g.size());
                 }
                 if (wants_grad(ix)) {
                     std::vector<double> dx(ix->data.size());
                     for (int si = 0; si < n; ++si)
                         for (int ci = 0; ci < f; ++ci) {
                             const std::size_t off =
                                 (static_cast<std::size_t>(si) * f + ci) * plane;
                             const double m = (*mean)[static_cast<std::size_t>(ci)];
                             const double is = (*inv_std)[static_cast<std::size_t>(ci)];
                             const double gm = ig->data[static_cast<std::size_t>(ci)];
                             const double mg = sum_g[static_cast<std::size_t>(ci)] * inv_count;
                             const double mgx =
                                 sum_gx[static_cast<std::size_t>(ci)] * is * inv_count;
                             for (std::size_t e = 0; e < plane; ++e) {
                                 const double xhat = (ix->data[off + e] - m) * is;
                                 dx[off + e] = gm * is * ((*g)[off + e] - mg - xhat * mgx);
                             }
                         }
                     detail::accumulate_grad(ix, dx.data(), dx.size());
                 }
             }});
    }
    return out;
}

Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Tensor& running_mean, const Tensor& running_var, double eps) {
    const NormAxes ax = norm_axes(x);
    check_norm_params(x, gamma, beta, running_mean, running_var, ax.features);
    const int n = x.dim(0), f = ax.features;
    const std::size_t plane = ax.plane;

    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(f));
    for (int ci = 0; ci < f; ++ci)
        (*inv_std)[static_cast<std::size_t>(ci)] = 1.0 / std::sqrt(running_var.data()[ci] + eps);

    Tensor out = Tensor::zeros(x.shape());
    for (int si = 0; si < n; ++si)
        for (int ci = 0; ci < f; ++ci) {
            const std::size_t off = (static_cast<std::size_t>(si) * f + ci) * plane;
            const double m = running_mean.data()[ci];
            const double is = (*inv_std)[static_cast<std::size_t>(ci)];
            const double gm = gamma.data()[ci], bt = beta.data()[ci];
            for (std::size_t e = 0; e < plane; ++e)
                out.data()[off + e] = gm * (x.data()[off + e] - m) * is + bt;
        }
    detail::check_finite(out, "batchnorm_eval");

    if (detail::should_track({&x, &gamma, &beta})) {
        detail::mark_tracked(out);
        auto ix = x.impl(), ig = gamma.impl(), ib = beta.impl(), io = out.impl();
        auto mean = std::make_shared<std::vector<double>>(running_mean.values());
        Tape::active()->record(
            {"batchnorm_eval", {ix->id, ig->id, ib->id}, io->id,
             [ix, ig, ib, io, mean, inv_std, n, f, plane] {
                 const auto* g = out_grad(io);
                 if (!g) return;
                 if (wants_grad(ig) || wants_grad(ib)) {
                     std::vector<double> dgm(static_cast<std::size_t>(f), 0.0);
                     std::vector<double> dbt(static_cast<std::size_t>(f), 0.0);
                     for (int si = 0; si < n; ++si)
                         for (int ci = 0; ci < f; ++ci) {
                             const std::size_t off =
                                 (static_cast<std::size_t>(si) * f + ci) * plane;
                             const double m = (*mean)[static_cast<std::size_t>(ci)];
                             const double is = (*inv_std)[static_cast<std::size_t>(ci)];
                             for (std::size_t e = 0; e < plane; ++e) {
                                 dgm[static_cast<std::size_t>(ci)] +=
                                     (*g)[off + e] * (ix->data[off + e] - m) * is;
                                 dbt[static_cast<std::size_t>(ci)] += (*g)[off + e];
                             }
                         }
                     detail::accumulate_grad(ig, dgm.data(), dgm.size());
                     detail::accumulate_grad(ib, dbt.data(), dbt.size());
                 }
                 if (wants_grad(ix)) {
                     std::vector<double> dx(ix->data.size());
                     for (int si = 0; si < n; ++si)
                         for (int ci = 0; ci < f; ++ci) {
                             const std::size_t off =
                                 (static_cast<std::size_t>(si) * f + ci) * plane;
                             const double scale = ig->data[static_cast<std::size_t>(ci)] *
                                                  (*inv_std)[static_cast<std::size_t>(ci)];
                             for (std::size_t e = 0; e < plane; ++e)
                                 dx[off + e] = (*g)[off + e] * scale;
                         }
                     detail::accumulate_grad(ix, dx.data(), dx.size());
                 }
             }});
    }
    return out;
}

Tensor dropout(const Tensor& x, double rate, Mode mode, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0)
        fail("dropout rate must be in [0,1), got " + std::to_string(rate));
    if (mode == Mode::eval || rate == 0.0) return x;

    const double scale = 1.0 / (1.0 - rate);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    for (double& m : *mask) m = u(rng) < rate ? 0.0 : scale;

    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * (*mask)[i];
    if (detail::should_track({&x})) {
        detail::mark_tracked(out);
        auto ix = x.impl(), io = out.impl();
        Tape::active()->record({"dropout",
                                {ix->id},
                                io->id,
                                [ix, io, mask] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    std::vector<double> dx(g->size());
                                    for (std::size_t i = 0; i < dx.size(); ++i)
                                        dx[i] = (*g)[i] * (*mask)[i];
                                    detail::accumulate_grad(ix, dx.data(), dx.size());
                                }});
    }
    return out;
}

Tensor softmax(const Tensor& x) {
    if (x.ndim() != 2) fail("softmax input must be (n,k), got " + shape_str(x.shape()));
    const int n = x.dim(0), k = x.dim(1);
    Tensor out = Tensor::zeros(x.shape());
    for (int si = 0; si < n; ++si) {
        const double* row = x.data() + static_cast<std::size_t>(si) * k;
        double* po = out.data() + static_cast<std::size_t>(si) * k;
        const double m = *std::max_element(row, row + k);
        double total = 0.0;
        for (int j = 0; j < k; ++j) total += po[j] = std::exp(row[j] - m);
        for (int j = 0; j < k; ++j) po[j] /= total;
    }
    detail::check_finite(out, "softmax");

    if (detail::should_track({&x})) {
        detail::mark_tracked(out);
        auto ix = x.impl(), io = out.impl();
        Tape::active()->record({"softmax",
                                {ix->id},
                                io->id,
                                [ix, io, n, k] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    std::vector<double> dx(g->size());
                                    for (int si = 0; si < n; ++si) {
                                        const std::size_t off = static_cast<std::size_t>(si) * k;
                                        double dot = 0.0;
                                        for (int j = 0; j < k; ++j)
                                            dot += (*g)[off + j] * io->data[off + j];
                                        for (int j = 0; j < k; ++j)
                                            dx[off + j] =
                                                io->data[off + j] * ((*g)[off + j] - dot);
                                    }
                                    detail::accumulate_grad(ix, dx.data(), dx.size());
                                }});
    }
    return out;
}

Tensor he_weight(Shape shape, std::mt19937_64& rng) {
    if (shape.size() < 2) fail("he_weight needs at least 2 axes, got " + shape_str(shape));
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<std::size_t>(shape[i]);
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, std::mt19937_64& rng)
    : weight(he_weight({out_channels, in_channels, kernel, kernel}, rng)),
      bias(Tensor::zeros({out_channels})),
      stride(stride_) {
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

Linear::Linear(int in, int out, std::mt19937_64& rng)
    : weight(he_weight({out, in}, rng)), bias(Tensor::zeros({out})) {
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

BatchNorm::BatchNorm(int features)
    : gamma(Tensor::full({features}, 1.0)),
      beta(Tensor::zeros({features})),
      running_mean(Tensor::zeros({features})),
      running_var(Tensor::full({features}, 1.0)) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
}

}  // namespace mscnn
