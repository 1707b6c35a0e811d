#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pnav::ad {

using Shape = std::vector<std::size_t>;

/// Raised when a published value contains NaN or Inf.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace kernel {

/// exp(x) for x in roughly [-708, 709] without libm calls, so loops over it vectorize.
/// Cody-Waite reduction to |r| <= ln2/2 and a degree-13 Taylor polynomial
/// (truncation below 1e-17 relative). Inputs are clamped to that range.
inline double exp_clamped(double x) {
    constexpr double kLog2e = 1.4426950408889634;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;
    constexpr double kShifter = 6755399441055744.0;  // 1.5 * 2^52
    x = x < -708.0 ? -708.0 : (x > 709.0 ? 709.0 : x);
    const double t = x * kLog2e + kShifter;
    const double n = t - kShifter;
    const double r = (x - n * kLn2Hi) - n * kLn2Lo;
    double p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const std::uint64_t bits = (std::bit_cast<std::uint64_t>(t) + 1023u) << 52;
    return p * std::bit_cast<double>(bits);
}

/// exp with overflow reported as +inf (so callers' finiteness checks fire).
inline double exp(double x) { return x > 709.78 ? HUGE_VAL : exp_clamped(x); }

inline double sigmoid(double x) { return 1.0 / (1.0 + exp_clamped(-x)); }

}  // namespace kernel

/// Keeps large Array buffers on the heap instead of fresh mmap pages.
/// Renders allocate many ~100 KB buffers; with glibc's defaults each one page-faults.
/// Call once at program start; a no-op outside glibc.
inline void configure_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

inline bool all_finite(std::span<const double> v) {
    constexpr std::uint64_t kExp = 0x7ff0000000000000ull;
    std::uint64_t bad = 0;
    for (double d : v) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(d) & kExp) == kExp);
    return bad == 0;
}

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles.
class Array {
public:
    Array() = default;
    explicit Array(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_size(shape_))
            throw ShapeError("Array: data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
    }

    static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
    static Array vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Array(Shape{n}, std::move(v));
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t rank() const { return shape_.size(); }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }

    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] std::vector<double>& storage() { return data_; }
    [[nodiscard]] const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    [[nodiscard]] double item() const {
        if (data_.size() != 1) throw ShapeError("Array::item on non-scalar " + shape_str(shape_));
        return data_[0];
    }

    [[nodiscard]] bool all_finite() const { return ad::all_finite(data_); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    [[nodiscard]] Array reshaped(Shape s) const {
        if (shape_size(s) != data_.size()) throw ShapeError("reshape: size mismatch " + shape_str(s));
        return Array(std::move(s), data_);
    }

    friend bool operator==(const Array&, const Array&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace pnav::ad
