#include "mscnn/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "blas.hpp"

namespace mscnn {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local Tape* g_active_tape = nullptr;

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return impl;
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) fail("tensor extents must be positive, got " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = new_impl(std::move(shape), requires_grad);
    impl->data.assign(shape_numel(impl->shape), 0.0);
    return wrap(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto impl = new_impl(std::move(shape), requires_grad);
    impl->data.assign(shape_numel(impl->shape), value);
    return wrap(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    auto impl = new_impl(std::move(shape), requires_grad);
    if (values.size() != shape_numel(impl->shape))
        fail("data length " + std::to_string(values.size()) + " does not match shape " +
             shape_str(impl->shape));
    impl->data = std::move(values);
    return wrap(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
    auto impl = new_impl(std::move(shape), requires_grad);
    impl->data.resize(shape_numel(impl->shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : impl->data) v = dist(rng);
    return wrap(std::move(impl));
}

double Tensor::item() const {
    if (size() != 1) fail("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty()) fail("tensor has no gradient");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::drop_grad() {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
    auto impl = new_impl(impl_->shape, impl_->requires_grad);
    impl->data = impl_->data;
    return wrap(std::move(impl));
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(Op op) { ops_.push_back(std::move(op)); }

void Tape::backward(Tensor& loss) {
    if (loss.size() != 1)
        fail("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    loss.grad()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
}

namespace detail {

bool should_track(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad() || t->tracked()) return true;
    return false;
}

void mark_tracked(Tensor& t) { t.impl()->tracked = true; }

void accumulate_grad(const std::shared_ptr<TensorImpl>& t, const double* delta, std::size_t n) {
    if (!t->requires_grad && !t->tracked) return;
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) t->grad[i] += delta[i];
}

#ifndef NDEBUG
void check_finite(const Tensor& t, const char* op) {
    for (double v : t.values())
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value out of ") + op);
}
#endif

}  // namespace detail

namespace {

// Returns grad buffer of the op output if any gradient reached it, else null.
const std::vector<double>* out_grad(const std::shared_ptr<detail::TensorImpl>& out) {
    return out->grad.empty() ? nullptr : &out->grad;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    detail::check_finite(out, "add");
    if (detail::should_track({&a, &b})) {
        detail::mark_tracked(out);
        auto ia = a.impl(), ib = b.impl(), io = out.impl();
        Tape::active()->record({"add",
                                {ia->id, ib->id},
                                io->id,
                                [ia, ib, io] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    detail::accumulate_grad(ia, g->data(), g->size());
                                    detail::accumulate_grad(ib, g->data(), g->size());
                                }});
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
    detail::check_finite(out, "mul");
    if (detail::should_track({&a, &b})) {
        detail::mark_tracked(out);
        auto ia = a.impl(), ib = b.impl(), io = out.impl();
        Tape::active()->record({"mul",
                                {ia->id, ib->id},
                                io->id,
                                [ia, ib, io] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    std::vector<double> d(g->size());
                                    for (std::size_t i = 0; i < d.size(); ++i)
                                        d[i] = (*g)[i] * ib->data[i];
                                    detail::accumulate_grad(ia, d.data(), d.size());
                                    for (std::size_t i = 0; i < d.size(); ++i)
                                        d[i] = (*g)[i] * ia->data[i];
                                    detail::accumulate_grad(ib, d.data(), d.size());
                                }});
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += a.data()[i];
    Tensor out = Tensor::scalar(total);
    detail::check_finite(out, "sum");
    if (detail::should_track({&a})) {
        detail::mark_tracked(out);
        auto ia = a.impl(), io = out.impl();
        Tape::active()->record({"sum",
                                {ia->id},
                                io->id,
                                [ia, io] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    std::vector<double> d(ia->data.size(), (*g)[0]);
                                    detail::accumulate_grad(ia, d.data(), d.size());
                                }});
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        fail("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    detail::gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, out.data(), n);
    detail::check_finite(out, "matmul");
    if (detail::should_track({&a, &b})) {
        detail::mark_tracked(out);
        auto ia = a.impl(), ib = b.impl(), io = out.impl();
        Tape::active()->record({"matmul",
                                {ia->id, ib->id},
                                io->id,
                                [ia, ib, io, m, k, n] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    // dA = dC * B^T, dB = A^T * dC
                                    std::vector<double> da(static_cast<std::size_t>(m) * k);
                                    detail::gemm(false, true, m, k, n, 1.0, g->data(), n,
                                                 ib->data.data(), n, 0.0, da.data(), k);
                                    detail::accumulate_grad(ia, da.data(), da.size());
                                    std::vector<double> db(static_cast<std::size_t>(k) * n);
                                    detail::gemm(true, false, k, n, m, 1.0, ia->data.data(), k,
                                                 g->data(), n, 0.0, db.data(), n);
                                    detail::accumulate_grad(ib, db.data(), db.size());
                                }});
    }
    return out;
}

namespace {

// outer = product of extents before axis, inner = product after.
void outer_inner(const Shape& s, int axis, std::size_t& outer, std::size_t& inner) {
    outer = inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) fail("concat of empty list");
    const Shape& first = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(first.size()))
        fail("concat axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != parts[0].ndim())
            fail("concat rank mismatch: " + shape_str(first) + " vs " + shape_str(p.shape()));
        for (int i = 0; i < p.ndim(); ++i)
            if (i != axis && p.dim(i) != first[i])
                fail("concat extent mismatch on axis " + std::to_string(i) + ": " +
                     shape_str(first) + " vs " + shape_str(p.shape()));
        total += p.dim(axis);
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    Tensor out = Tensor::zeros(out_shape);

    std::size_t outer, inner;
    outer_inner(out_shape, axis, outer, inner);
    const std::size_t out_row = static_cast<std::size_t>(total) * inner;
    std::size_t offset = 0;  // in axis units
    for (const Tensor& p : parts) {
        const std::size_t blk = static_cast<std::size_t>(p.dim(axis)) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = p.data() + o * blk;
            double* dst = out.data() + o * out_row + offset * inner;
            std::copy(src, src + blk, dst);
        }
        offset += static_cast<std::size_t>(p.dim(axis));
    }

    bool track = false;
    if (Tape::active())
        for (const Tensor& p : parts)
            if (p.requires_grad() || p.tracked()) track = true;
    if (track) {
        detail::mark_tracked(out);
        std::vector<std::shared_ptr<detail::TensorImpl>> impls;
        std::vector<std::uint64_t> ids;
        for (const Tensor& p : parts) {
            impls.push_back(p.impl());
            ids.push_back(p.id());
        }
        auto io = out.impl();
        Tape::active()->record(
            {"concat", std::move(ids), io->id, [impls, io, axis, outer, inner, out_row] {
                 const auto* g = out_grad(io);
                 if (!g) return;
                 std::size_t offset = 0;
                 for (const auto& ip : impls) {
                     const std::size_t extent =
                         static_cast<std::size_t>(ip->shape[static_cast<std::size_t>(axis)]);
                     const std::size_t blk = extent * inner;
                     std::vector<double> d(ip->data.size());
                     for (std::size_t o = 0; o < outer; ++o) {
                         const double* src = g->data() + o * out_row + offset * inner;
                         std::copy(src, src + blk, d.data() + o * blk);
                     }
                     detail::accumulate_grad(ip, d.data(), d.size());
                     offset += extent;
                 }
             }});
    }
    return out;
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    if (axis < 0 || axis >= a.ndim())
        fail("slice axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
    if (start < 0 || len <= 0 || start + len > a.dim(axis))
        fail("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
             ") out of range for " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    Tensor out = Tensor::zeros(out_shape);

    std::size_t outer, inner;
    outer_inner(a.shape(), axis, outer, inner);
    const std::size_t in_row = static_cast<std::size_t>(a.dim(axis)) * inner;
    const std::size_t blk = static_cast<std::size_t>(len) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = a.data() + o * in_row + static_cast<std::size_t>(start) * inner;
        std::copy(src, src + blk, out.data() + o * blk);
    }
    if (detail::should_track({&a})) {
        detail::mark_tracked(out);
        auto ia = a.impl(), io = out.impl();
        Tape::active()->record(
            {"slice", {ia->id}, io->id, [ia, io, outer, inner, in_row, blk, start] {
                 const auto* g = out_grad(io);
                 if (!g) return;
                 std::vector<double> d(ia->data.size(), 0.0);
                 for (std::size_t o = 0; o < outer; ++o) {
                     const double* src = g->data() + o * blk;
                     std::copy(src, src + blk,
                               d.data() + o * in_row + static_cast<std::size_t>(start) * inner);
                 }
                 detail::accumulate_grad(ia, d.data(), d.size());
             }});
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        fail("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
             " changes element count");
    Tensor out = Tensor::from_data(std::move(shape), a.values());
    if (detail::should_track({&a})) {
        detail::mark_tracked(out);
        auto ia = a.impl(), io = out.impl();
        Tape::active()->record({"reshape",
                                {ia->id},
                                io->id,
                                [ia, io] {
                                    const auto* g = out_grad(io);
                                    if (!g) return;
                                    detail::accumulate_grad(ia, g->data(), g->size());
                                }});
    }
    return out;
}

}  // namespace mscnn
