#pragma once

#include <altflow/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace altflow {

struct Shape4 {
    std::size_t b = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t size() const noexcept { return b * c * h * w; }
    constexpr std::size_t spatial() const noexcept { return h * w; }
    constexpr std::size_t per_sample() const noexcept { return c * h * w; }
    constexpr bool operator==(const Shape4&) const = default;

    std::string str() const {
        return "[" + std::to_string(b) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + "]";
    }
};

/// Dense [B, C, H, W] array of doubles in row-major (NCHW) order.
class Tensor4 {
public:
    Tensor4() = default;

    explicit Tensor4(Shape4 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}

    Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size())
            fail(ErrorKind::ShapeMismatch, "payload has " + std::to_string(data_.size()) +
                                               " entries, shape " + shape_.str() + " needs " +
                                               std::to_string(shape_.size()));
    }

    const Shape4& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    std::size_t index(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return ((b * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    double operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[index(b, c, h, w)];
    }
    double& operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[index(b, c, h, w)];
    }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }

    /// Samples [first, first + count) as a new tensor.
    Tensor4 slice_batch(std::size_t first, std::size_t count) const {
        if (first + count > shape_.b)
            fail(ErrorKind::ShapeMismatch, "batch slice out of range");
        Shape4 s = shape_;
        s.b = count;
        const auto stride = shape_.per_sample();
        return Tensor4(s, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(first * stride),
                                              data_.begin() + static_cast<std::ptrdiff_t>((first + count) * stride)));
    }

    /// Gathers the listed samples, in order.
    Tensor4 gather_batch(std::span<const std::size_t> rows) const {
        Shape4 s = shape_;
        s.b = rows.size();
        const auto stride = shape_.per_sample();
        std::vector<double> out;
        out.reserve(s.size());
        for (auto r : rows) {
            if (r >= shape_.b) fail(ErrorKind::ShapeMismatch, "gather index out of range");
            out.insert(out.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * stride),
                       data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * stride));
        }
        return Tensor4(s, std::move(out));
    }

    bool operator==(const Tensor4&) const = default;

private:
    Shape4 shape_{};
    std::vector<double> data_;
};

inline bool all_finite(std::span<const double> xs) noexcept {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

inline void ensure_finite(std::span<const double> xs, const char* op) {
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (!std::isfinite(xs[i]))
            fail(ErrorKind::NonFinite, std::string(op) + " produced a non-finite value at flat index " +
                                           std::to_string(i));
}

inline const Tensor4& ensure_finite(const Tensor4& t, const char* op) {
    ensure_finite(t.data(), op);
    return t;
}

enum class ElementOp { add, sub, mul, div, exp, ln, square };

namespace detail {

inline double apply_binary(ElementOp op, double a, double b) {
    switch (op) {
    case ElementOp::add: return a + b;
    case ElementOp::sub: return a - b;
    case ElementOp::mul: return a * b;
    case ElementOp::div:
        if (b == 0.0) fail(ErrorKind::DomainError, "division by zero");
        return a / b;
    default: fail(ErrorKind::DomainError, "unary op used with two operands");
    }
}

inline double apply_unary(ElementOp op, double a) {
    switch (op) {
    case ElementOp::exp: return std::exp(a);
    case ElementOp::ln:
        if (!(a > 0.0)) fail(ErrorKind::DomainError, "ln of non-positive value");
        return std::log(a);
    case ElementOp::square: return a * a;
    default: fail(ErrorKind::DomainError, "binary op used with one operand");
    }
}

} // namespace detail

inline Tensor4 elementwise(ElementOp op, const Tensor4& a, const Tensor4& b) {
    if (a.shape() != b.shape())
        fail(ErrorKind::ShapeMismatch, "elementwise operands " + a.shape().str() + " vs " + b.shape().str());
    Tensor4 out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply_binary(op, a[i], b[i]);
    ensure_finite(out, "elementwise");
    return out;
}

inline Tensor4 elementwise(ElementOp op, const Tensor4& a, double b) {
    Tensor4 out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply_binary(op, a[i], b);
    ensure_finite(out, "elementwise");
    return out;
}

inline Tensor4 elementwise(ElementOp op, const Tensor4& a) {
    Tensor4 out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply_unary(op, a[i]);
    ensure_finite(out, "elementwise");
    return out;
}

inline Tensor4 operator+(const Tensor4& a, const Tensor4& b) { return elementwise(ElementOp::add, a, b); }
inline Tensor4 operator-(const Tensor4& a, const Tensor4& b) { return elementwise(ElementOp::sub, a, b); }
inline Tensor4 operator*(const Tensor4& a, const Tensor4& b) { return elementwise(ElementOp::mul, a, b); }
inline Tensor4 operator/(const Tensor4& a, const Tensor4& b) { return elementwise(ElementOp::div, a, b); }
inline Tensor4 operator+(const Tensor4& a, double b) { return elementwise(ElementOp::add, a, b); }
inline Tensor4 operator-(const Tensor4& a, double b) { return elementwise(ElementOp::sub, a, b); }
inline Tensor4 operator*(const Tensor4& a, double b) { return elementwise(ElementOp::mul, a, b); }
inline Tensor4 operator/(const Tensor4& a, double b) { return elementwise(ElementOp::div, a, b); }

enum Axis : unsigned { kAxisB = 1u, kAxisC = 2u, kAxisH = 4u, kAxisW = 8u, kAllAxes = 15u };

enum class Reduction { mean, sum, max };

/// Reduces over the axes in `axes` (a bitwise-or of Axis values); reduced axes keep size 1.
/// Accumulation visits source elements in flat order, so results are reproducible.
inline Tensor4 reduce(const Tensor4& t, unsigned axes, Reduction kind) {
    if ((axes & kAllAxes) == 0) fail(ErrorKind::DomainError, "reduce needs at least one axis");
    const Shape4& s = t.shape();
    Shape4 o{(axes & kAxisB) ? 1 : s.b, (axes & kAxisC) ? 1 : s.c, (axes & kAxisH) ? 1 : s.h,
             (axes & kAxisW) ? 1 : s.w};
    const double init = kind == Reduction::max ? -std::numeric_limits<double>::infinity() : 0.0;
    Tensor4 out(o, init);
    for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t h = 0; h < s.h; ++h)
                for (std::size_t w = 0; w < s.w; ++w) {
                    double& slot = out(o.b == 1 ? 0 : b, o.c == 1 ? 0 : c, o.h == 1 ? 0 : h, o.w == 1 ? 0 : w);
                    const double v = t(b, c, h, w);
                    slot = kind == Reduction::max ? std::max(slot, v) : slot + v;
                }
    if (kind == Reduction::mean && !t.empty()) {
        const double n = static_cast<double>(s.size() / o.size());
        for (auto& v : out.data()) v /= n;
    }
    ensure_finite(out, "reduce");
    return out;
}

/// Counter-based generator: the k-th draw is a pure function of (seed, k), so a
/// stream can be reproduced or split without shared state.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    static constexpr std::uint64_t mix(std::uint64_t x) noexcept {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    std::uint64_t next_u64() noexcept { return mix(mix(seed_) ^ (counter_++ * 0xD1B54A32D192ED03ull)); }

    /// Uniform on (0, 1), never exactly 0 or 1.
    double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        // Lemire's multiply-shift; the bias is < n / 2^64, negligible here.
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller; each call consumes two counters.
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Independent stream keyed by `stream`.
    Rng split(std::uint64_t stream) const noexcept { return Rng(mix(seed_ ^ mix(stream + 0x632BE59BD9B4E019ull))); }

    template <class T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

inline Tensor4 gaussian_sample(Rng& rng, Shape4 shape) {
    if (shape.size() == 0) fail(ErrorKind::InvalidSpec, "gaussian_sample shape must be positive");
    Tensor4 out(shape);
    for (auto& v : out.data()) v = rng.normal();
    return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail(ErrorKind::ShapeMismatch, "max_abs_diff length mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Global L2 norm of several parameter blocks, accumulated in order.
inline double global_norm(std::initializer_list<std::span<const double>> blocks) {
    double acc = 0.0;
    for (auto blk : blocks)
        for (double v : blk) acc += v * v;
    return std::sqrt(acc);
}

} // namespace altflow
