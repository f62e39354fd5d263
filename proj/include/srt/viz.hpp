#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "srt/errors.hpp"
#include "srt/field.hpp"
#include "srt/image.hpp"
#include "srt/tensor.hpp"

namespace srt {

struct PcaBasis {
    std::vector<double> mean;                      // [C]
    std::array<std::vector<double>, 3> components; // orthonormal, [C] each
    std::array<double, 3> eigenvalues{};           // descending
    double total_variance = 0.0;                   // trace of the covariance

    double explained_fraction() const
    {
        return total_variance > 0.0 ? (eigenvalues[0] + eigenvalues[1] + eigenvalues[2]) / total_variance : 0.0;
    }
};

struct PcaOptions {
    int max_iterations = 200;
    double tolerance = 1e-7; // on ||A v - lambda v||, relative to the trace
};

namespace detail {

struct Moments {
    std::vector<double> mean;
    std::vector<double> cov; // C x C, row-major
    std::size_t valid = 0;
};

inline Moments weighted_moments(const std::vector<std::reference_wrapper<const DenseField>>& fields)
{
    const std::size_t c = fields.front().get().channels();
    Moments m;
    m.mean.assign(c, 0.0);
    m.cov.assign(c * c, 0.0);
    double total = 0.0;
    for (const DenseField& f : fields) {
        if (f.channels() != c) throw DimensionError("pca: fields have different channel counts");
        for (std::size_t p = 0; p < f.weight.size(); ++p) {
            const double w = f.weight[p];
            if (w <= 0.0) continue;
            const float* x = f.data.data().data() + p * c;
            for (std::size_t k = 0; k < c; ++k) m.mean[k] += w * x[k];
            total += w;
            ++m.valid;
        }
    }
    if (m.valid < 4) throw DimensionError("pca needs at least 4 valid pixels, got " + std::to_string(m.valid));
    for (auto& v : m.mean) v /= total;
    std::vector<double> d(c);
    for (const DenseField& f : fields) {
        for (std::size_t p = 0; p < f.weight.size(); ++p) {
            const double w = f.weight[p];
            if (w <= 0.0) continue;
            const float* x = f.data.data().data() + p * c;
            for (std::size_t k = 0; k < c; ++k) d[k] = x[k] - m.mean[k];
            for (std::size_t i = 0; i < c; ++i)
                for (std::size_t j = i; j < c; ++j) m.cov[i * c + j] += w * d[i] * d[j];
        }
    }
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = i; j < c; ++j) {
            m.cov[i * c + j] /= total;
            m.cov[j * c + i] = m.cov[i * c + j];
        }
    return m;
}

inline double norm2(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace detail

// Top-3 principal components by deflated power iteration. The start vector
// for every component is s_i = 1 + i / C, orthogonalized against the
// components already found; each component is signed so its largest-magnitude
// entry is positive.
inline PcaBasis fit_pca(const std::vector<std::reference_wrapper<const DenseField>>& fields, const PcaOptions& opts = {})
{
    if (fields.empty()) throw DimensionError("pca: no fields");
    const auto m = detail::weighted_moments(fields);
    const std::size_t c = m.mean.size();
    PcaBasis basis;
    basis.mean = m.mean;
    for (std::size_t i = 0; i < c; ++i) basis.total_variance += m.cov[i * c + i];
    const double floor = 1e-9 * basis.total_variance;

    auto orthogonalize = [&](std::vector<double>& v, int found) {
        for (int j = 0; j < found; ++j) {
            double dot = 0.0;
            for (std::size_t i = 0; i < c; ++i) dot += v[i] * basis.components[j][i];
            for (std::size_t i = 0; i < c; ++i) v[i] -= dot * basis.components[j][i];
        }
    };
    auto apply = [&](const std::vector<double>& v, int found) {
        std::vector<double> w(c, 0.0);
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) w[i] += m.cov[i * c + j] * v[j];
        orthogonalize(w, found); // deflation: A restricted to the complement
        return w;
    };

    for (int k = 0; k < 3; ++k) {
        std::vector<double> v(c);
        for (std::size_t i = 0; i < c; ++i) v[i] = 1.0 + static_cast<double>(i) / static_cast<double>(c);
        orthogonalize(v, k);
        double nv = detail::norm2(v);
        if (!(basis.total_variance > 0.0) || nv == 0.0 || c <= static_cast<std::size_t>(k))
            throw DegenerateBasis("feature covariance has rank " + std::to_string(k) + " < 3", k);
        for (auto& x : v) x /= nv;
        double lambda = 0.0;
        for (int it = 0; it < opts.max_iterations; ++it) {
            auto w = apply(v, k);
            lambda = 0.0;
            for (std::size_t i = 0; i < c; ++i) lambda += v[i] * w[i];
            double res = 0.0;
            for (std::size_t i = 0; i < c; ++i) res += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
            const double nw = detail::norm2(w);
            if (nw <= floor) {
                lambda = 0.0;
                break;
            }
            for (std::size_t i = 0; i < c; ++i) v[i] = w[i] / nw;
            if (std::sqrt(res) <= opts.tolerance * basis.total_variance) break;
        }
        // Final Rayleigh quotient on the converged vector.
        const auto w = apply(v, k);
        lambda = 0.0;
        for (std::size_t i = 0; i < c; ++i) lambda += v[i] * w[i];
        if (lambda <= floor) throw DegenerateBasis("feature covariance has rank " + std::to_string(k) + " < 3", k);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < c; ++i)
            if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
        if (v[arg] < 0.0)
            for (auto& x : v) x = -x;
        basis.components[k] = std::move(v);
        basis.eigenvalues[k] = lambda;
    }
    return basis;
}

inline PcaBasis fit_pca(const DenseField& field, const PcaOptions& opts = {})
{
    return fit_pca(std::vector<std::reference_wrapper<const DenseField>>{std::cref(field)}, opts);
}

// Projects onto the three components and min-max normalizes each channel
// over valid pixels. Invalid pixels and flat channels render as 0.5.
inline Image render_pca(const DenseField& field, const PcaBasis& basis)
{
    const std::size_t h = field.height(), w = field.width(), c = field.channels();
    if (basis.mean.size() != c) throw DimensionError("render_pca: basis and field channel counts differ");
    std::vector<std::array<double, 3>> proj(h * w);
    std::array<double, 3> lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (std::size_t p = 0; p < h * w; ++p) {
        if (field.weight[p] <= 0.0f) continue;
        const float* x = field.data.data().data() + p * c;
        for (int k = 0; k < 3; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < c; ++i) s += (x[i] - basis.mean[i]) * basis.components[k][i];
            proj[p][k] = s;
            lo[k] = std::min(lo[k], s);
            hi[k] = std::max(hi[k], s);
        }
    }
    Image img(h, w, 3, 0.5f);
    for (std::size_t p = 0; p < h * w; ++p) {
        if (field.weight[p] <= 0.0f) continue;
        for (int k = 0; k < 3; ++k) {
            const double v = hi[k] > lo[k] ? (proj[p][k] - lo[k]) / (hi[k] - lo[k]) : 0.5;
            img.data()[p * 3 + k] = static_cast<float>(v);
        }
    }
    return img;
}

// Min-max normalize, then raise to `gamma`. A constant map renders as 0.5.
inline Image render_scalar(const Tensor& map, double gamma)
{
    if (!(gamma > 0.0)) throw DimensionError("render_scalar: gamma must be positive");
    if (map.rank() != 2) throw DimensionError("render_scalar: expected an H x W map");
    const auto [mn, mx] = std::minmax_element(map.data().begin(), map.data().end());
    const double lo = *mn, hi = *mx;
    Image img(map.dim(0), map.dim(1), 1);
    for (std::size_t i = 0; i < map.size(); ++i)
        img.data()[i] = hi > lo ? static_cast<float>(std::pow((map[i] - lo) / (hi - lo), gamma)) : 0.5f;
    return img;
}

} // namespace srt
