#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace mscnn {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward first touches it
    bool requires_grad = false;
    bool tracked = false;  // true when this value participates in the active tape
};

}  // namespace detail

/// Dense double-precision tensor, row-major. Image batches use
/// (batch, channel, row, column) axis order. Copying a Tensor copies the
/// handle, not the buffer; clone() makes a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);
    // zero-mean normal with the given stddev
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return impl_->data.size(); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& values() { return impl_->data; }
    const std::vector<double>& values() const { return impl_->data; }
    double item() const;  // value of a single-element tensor

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) { impl_->requires_grad = b; }
    bool tracked() const { return impl_->tracked; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::vector<double>& grad();        // allocates zeros on first use
    const std::vector<double>& grad() const;  // throws if absent
    void zero_grad();   // zeroes in place if allocated
    void drop_grad();   // releases the buffer

    std::uint64_t id() const { return impl_->id; }
    Tensor clone() const;  // deep copy, untracked

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Record of forward ops in execution order. Constructing a Tape makes it the
/// active tape for the current thread; ops with tracked inputs append their
/// backward rule to it. One tape per thread; tapes never cross threads.
class Tape {
public:
    struct Op {
        const char* name;
        std::vector<std::uint64_t> inputs;
        std::uint64_t output;
        std::function<void()> backward;
    };

    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(Op op);
    std::size_t size() const { return ops_.size(); }
    const Op& op(std::size_t i) const { return ops_[i]; }
    void clear() { ops_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and applies the chain rule in reverse
    // recording order. Each op runs exactly once. loss must be a single
    // element tensor.
    void backward(Tensor& loss);

    static Tape* active();

private:
    std::vector<Op> ops_;
    Tape* prev_ = nullptr;
};

// --- primitive ops ---------------------------------------------------------
// Each computes the forward value and, when a tape is active and any input is
// tracked, records the matching backward rule.

Tensor add(const Tensor& a, const Tensor& b);          // same shape
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
Tensor sum(const Tensor& a);                           // -> shape {1}
Tensor matmul(const Tensor& a, const Tensor& b);       // [m,k] x [k,n]
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor reshape(const Tensor& a, Shape shape);

namespace detail {

// Tracks an op output and accumulates `delta` into `dst`'s grad if tracked.
bool should_track(std::initializer_list<const Tensor*> inputs);
void mark_tracked(Tensor& t);
void accumulate_grad(const std::shared_ptr<TensorImpl>& t, const double* delta, std::size_t n);

// Debug-build check: forward ops must not produce NaN/Inf from finite inputs.
#ifndef NDEBUG
void check_finite(const Tensor& t, const char* op);
#else
inline void check_finite(const Tensor&, const char*) {}
#endif

}  // namespace detail

}  // namespace mscnn
