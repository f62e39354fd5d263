#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "srt/errors.hpp"
#include "srt/field.hpp"
#include "srt/perturb.hpp"
#include "srt/pipeline.hpp"
#include "srt/vit.hpp"

namespace srt {

struct OutputEnsemble {
    DenseField dense;    // masked mean of aligned final-layer fields
    ModelOutput output;  // retokenized dense mean, CLS averaged over shifts
};

// "+OE" baseline: full forwards per shift, aggregated at the output only.
inline OutputEnsemble output_ensemble(const ViTModel& model, const Image& image, const PerturbationSet& pset,
                                      const SrtOptions& opts = {})
{
    const std::size_t last = model.depth();
    detail::check_entry(model, last, pset, opts);
    const auto& c = model.config();
    RunningMean acc(c.img_h, c.img_w, c.dim);
    std::vector<double> cls_sum(c.use_cls ? c.dim : 0);
    detail::for_each_response(model, image, last, pset, opts.jobs, [&](std::size_t t, FeatureMap&& y) {
        acc.push(warp_field(upsample_pc(y, c), inverse(pset[t])));
        if (y.cls)
            for (std::size_t k = 0; k < c.dim; ++k) cls_sum[k] += (*y.cls)[k];
    });
    OutputEnsemble oe{acc.estimate(), {}};
    oe.output = retokenize(oe.dense, c, last);
    if (c.use_cls) {
        Tensor cls({c.dim});
        for (std::size_t k = 0; k < c.dim; ++k) cls[k] = static_cast<float>(cls_sum[k] / static_cast<double>(pset.size()));
        oe.output.cls = std::move(cls);
    }
    return oe;
}

struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::size_t> counts;

    double bin_lo(std::size_t i) const { return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(counts.size()); }
    double bin_hi(std::size_t i) const { return lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(counts.size()); }
};

// Equal-width bins over [min, max]; the maximum lands in the last bin. A
// constant input uses the range [v, v + 1].
inline Histogram make_histogram(std::span<const float> values, std::size_t bins = 64)
{
    Histogram h;
    h.counts.assign(bins, 0);
    if (values.empty()) return h;
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    h.lo = *mn;
    h.hi = *mx > *mn ? static_cast<double>(*mx) : h.lo + 1.0;
    for (float v : values) {
        auto b = static_cast<std::size_t>((v - h.lo) / (h.hi - h.lo) * static_cast<double>(bins));
        h.counts[std::min(b, bins - 1)] += 1;
    }
    return h;
}

struct NoiseMap {
    Tensor values; // [H x W]
    Histogram histogram;
};

// Per-pixel L2 distance between two dense fields over channels.
inline Tensor l2_difference(const DenseField& a, const DenseField& b)
{
    if (a.data.shape() != b.data.shape()) throw DimensionError("noise map: field shapes differ");
    Tensor out({a.height(), a.width()});
    for (std::size_t u = 0; u < a.height(); ++u) {
        for (std::size_t v = 0; v < a.width(); ++v) {
            const auto pa = a.at(u, v), pb = b.at(u, v);
            double ss = 0.0;
            for (std::size_t k = 0; k < pa.size(); ++k) {
                const double d = static_cast<double>(pa[k]) - pb[k];
                ss += d * d;
            }
            out[u * a.width() + v] = static_cast<float>(std::sqrt(ss));
        }
    }
    return out;
}

// || mean ensemble - single pass || per pixel, plus a 64-bin histogram.
inline NoiseMap noise_map(const ViTModel& model, const Image& image, std::size_t layer, const PerturbationSet& pset,
                          SrtOptions opts = {})
{
    opts.agg.stat = Statistic::mean;
    auto r = detail::srt_dense_impl(model, image, layer, pset, opts);
    NoiseMap nm;
    nm.values = l2_difference(r.field, upsample_pc(r.unperturbed, model.config()));
    nm.histogram = make_histogram(nm.values.data());
    return nm;
}

enum class InterpMode { bilinear, bicubic };

namespace detail {

struct Tap {
    std::size_t index;
    double weight;
};

// Keys cubic convolution kernel with a = -0.75; returns the four weights for
// offsets -1, 0, 1, 2 at fractional position t in [0, 1).
inline std::array<double, 4> cubic_weights(double t)
{
    constexpr double a = -0.75;
    auto near = [](double x) { return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0; };        // |x| <= 1
    auto far = [](double x) { return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a; };  // 1 < |x| < 2
    return {far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)};
}

// Half-pixel-centred source coordinate in token units for output pixel `x`.
inline std::vector<Tap> interp_taps(std::size_t x, std::size_t patch, std::size_t grid, InterpMode mode)
{
    const double s = (static_cast<double>(x) + 0.5) / static_cast<double>(patch) - 0.5;
    const auto last = static_cast<std::ptrdiff_t>(grid) - 1;
    auto clampi = [last](std::ptrdiff_t i) { return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last)); };
    if (mode == InterpMode::bilinear) {
        const double sc = std::max(s, 0.0);
        const auto i0 = static_cast<std::ptrdiff_t>(std::floor(sc));
        const double f = sc - static_cast<double>(i0);
        return {{clampi(i0), 1.0 - f}, {clampi(i0 + 1), f}};
    }
    const auto i0 = static_cast<std::ptrdiff_t>(std::floor(s));
    const auto w = cubic_weights(s - static_cast<double>(i0));
    std::vector<Tap> taps;
    for (std::ptrdiff_t k = 0; k < 4; ++k) taps.push_back({clampi(i0 - 1 + k), w[static_cast<std::size_t>(k)]});
    return taps;
}

} // namespace detail

// Resizes the token grid to the image size by separable interpolation.
inline DenseField interpolate_tokens(const FeatureMap& fmap, const ViTConfig& c, InterpMode mode)
{
    if (fmap.grid_h() != c.grid_h() || fmap.grid_w() != c.grid_w())
        throw DimensionError("interpolate: feature grid does not match the model grid");
    const std::size_t ch = fmap.channels(), gw = c.grid_w();
    DenseField out(c.img_h, c.img_w, ch);
    std::vector<std::vector<detail::Tap>> col_taps(c.img_w);
    for (std::size_t v = 0; v < c.img_w; ++v) col_taps[v] = detail::interp_taps(v, c.patch_w, c.grid_w(), mode);
    std::vector<double> acc(ch);
    for (std::size_t u = 0; u < c.img_h; ++u) {
        const auto row_taps = detail::interp_taps(u, c.patch_h, c.grid_h(), mode);
        for (std::size_t v = 0; v < c.img_w; ++v) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (const auto& r : row_taps) {
                for (const auto& q : col_taps[v]) {
                    const double w = r.weight * q.weight;
                    const float* src = fmap.data.data().data() + (r.index * gw + q.index) * ch;
                    for (std::size_t k = 0; k < ch; ++k) acc[k] += w * src[k];
                }
            }
            auto px = out.at(u, v);
            for (std::size_t k = 0; k < ch; ++k) px[k] = static_cast<float>(acc[k]);
            out.mass(u, v) = 1.0f;
        }
    }
    return out;
}

// Single pass, interpolate to pixels, pool back to tokens.
inline FeatureMap interp_baseline(const ViTModel& model, const Image& image, std::size_t layer, InterpMode mode)
{
    const FeatureMap y = forward_to_layer(model, image, layer);
    FeatureMap out = retokenize(interpolate_tokens(y, model.config(), mode), model.config(), layer);
    out.cls = y.cls;
    return out;
}

// || interpolated - piecewise constant || per pixel: the grid-pattern control.
inline Tensor interp_difference_map(const FeatureMap& fmap, const ViTConfig& c, InterpMode mode)
{
    return l2_difference(interpolate_tokens(fmap, c, mode), upsample_pc(fmap, c));
}

// Distillation target distance: || phi_w(x) - SRT(x, w0) ||_F at the last layer.
inline double distill_loss(const ViTModel& student, const ViTModel& teacher, const Image& image,
                           const PerturbationSet& pset, const SrtOptions& opts = {})
{
    if (!(student.config() == teacher.config())) throw DimensionError("distill: student and teacher configs differ");
    const auto last = student.depth();
    const FeatureMap a = forward_to_layer(student, image, last);
    const FeatureMap b = srt_tokens_efficient(teacher, image, last, pset, opts);
    double ss = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        ss += d * d;
    }
    return std::sqrt(ss);
}

} // namespace srt
