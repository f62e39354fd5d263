#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "srt/errors.hpp"

namespace srt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) noexcept
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major float32 array. Value type: copies are deep.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)), data_(shape_size(shape_), fill)
    {
        validate_shape();
    }

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        validate_shape();
        if (data_.size() != shape_size(shape_))
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& vec() const noexcept { return data_; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    // 2-D accessors; rank is not checked.
    float& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_.back() + c]; }
    float at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_.back() + c]; }

    std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * shape_.back(), shape_.back()}; }
    std::span<const float> row(std::size_t r) const noexcept
    {
        return {data_.data() + r * shape_.back(), shape_.back()};
    }

    Tensor reshaped(Shape shape) const&
    {
        return Tensor(std::move(shape), data_);
    }
    Tensor reshaped(Shape shape) &&
    {
        return Tensor(std::move(shape), std::move(data_));
    }

    bool all_finite() const noexcept
    {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) noexcept
    {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void validate_shape() const
    {
        for (auto d : shape_)
            if (d == 0) throw DimensionError("tensor shape " + shape_string(shape_) + " has a zero extent");
    }

    Shape shape_;
    std::vector<float> data_;
};

inline Tensor identity(std::size_t n)
{
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

namespace detail {

inline void require_finite(const Tensor& t, const char* kernel)
{
    if (!t.all_finite()) throw NumericError(std::string(kernel) + " produced a non-finite value");
}

} // namespace detail

// c[i,j] = sum_k a[i,k] * b[k,j], accumulated in double, k ascending.
inline Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                             shape_string(b.shape()));
    const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
    Tensor c({p, r});
    std::vector<double> acc(r);
    for (std::size_t i = 0; i < p; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = a.at(i, k);
            const auto brow = b.row(k);
            for (std::size_t j = 0; j < r; ++j) acc[j] += aik * brow[j];
        }
        for (std::size_t j = 0; j < r; ++j) c.at(i, j) = static_cast<float>(acc[j]);
    }
    detail::require_finite(c, "matmul");
    return c;
}

// Affine map with a weight stored as [out x in]: y = x W^T + bias.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias)
{
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1) || bias.size() != weight.dim(0))
        throw DimensionError("linear: input " + shape_string(x.shape()) + ", weight " +
                             shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
    const std::size_t rows = x.dim(0), in = x.dim(1), out = weight.dim(0);
    Tensor y({rows, out});
    for (std::size_t i = 0; i < rows; ++i) {
        const auto xr = x.row(i);
        for (std::size_t o = 0; o < out; ++o) {
            const auto wr = weight.row(o);
            double acc = 0.0;
            for (std::size_t k = 0; k < in; ++k) acc += static_cast<double>(xr[k]) * wr[k];
            y.at(i, o) = static_cast<float>(acc + bias[o]);
        }
    }
    detail::require_finite(y, "linear");
    return y;
}

inline constexpr double kLayerNormEps = 1e-6;

// Normalizes every vector along the last axis, then applies gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps)
{
    if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
    const std::size_t c = x.shape().back();
    if (gamma.size() != c || beta.size() != c)
        throw DimensionError("layer_norm: feature size " + std::to_string(c) + " but gamma/beta have " +
                             std::to_string(gamma.size()) + "/" + std::to_string(beta.size()));
    if (!(eps > 0.0)) throw DimensionError("layer_norm: eps must be positive");
    Tensor y(x.shape());
    const std::size_t rows = x.size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* in = x.data().data() + r * c;
        float* out = y.data().data() + r * c;
        double mean = 0.0;
        for (std::size_t k = 0; k < c; ++k) mean += in[k];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            const double d = in[k] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t k = 0; k < c; ++k)
            out[k] = static_cast<float>((in[k] - mean) * inv * gamma[k] + beta[k]);
    }
    detail::require_finite(y, "layer_norm");
    return y;
}

inline Tensor softmax(const Tensor& x, std::size_t axis)
{
    if (axis >= x.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range");
    const auto& s = x.shape();
    const std::size_t n = s[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

    Tensor y(s);
    const float* in = x.data().data();
    float* out = y.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            float mx = in[base];
            for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, in[base + k * inner]);
            double sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) sum += std::exp(static_cast<double>(in[base + k * inner]) - mx);
            for (std::size_t k = 0; k < n; ++k)
                out[base + k * inner] =
                    static_cast<float>(std::exp(static_cast<double>(in[base + k * inner]) - mx) / sum);
        }
    }
    detail::require_finite(y, "softmax");
    return y;
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
inline float gelu(float x) noexcept
{
    const double xd = x;
    return static_cast<float>(0.5 * xd * (1.0 + std::erf(xd / std::sqrt(2.0))));
}

inline Tensor gelu(const Tensor& x)
{
    Tensor y(x.shape());
    std::transform(x.data().begin(), x.data().end(), y.data().begin(), [](float v) { return gelu(v); });
    detail::require_finite(y, "gelu");
    return y;
}

// Elementwise a += b.
inline void add_inplace(Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
}

inline float max_abs_diff(std::span<const float> a, std::span<const float> b)
{
    if (a.size() != b.size()) throw DimensionError("max_abs_diff: length mismatch");
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    return max_abs_diff(a.data(), b.data());
}

} // namespace srt
