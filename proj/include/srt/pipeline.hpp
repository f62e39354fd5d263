#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "srt/errors.hpp"
#include "srt/field.hpp"
#include "srt/parallel.hpp"
#include "srt/perturb.hpp"
#include "srt/tensor.hpp"
#include "srt/vit.hpp"

namespace srt {

enum class Statistic { mean, median, variance };

inline std::string to_string(Statistic s)
{
    switch (s) {
    case Statistic::mean: return "mean";
    case Statistic::median: return "median";
    case Statistic::variance: return "variance";
    }
    return "?";
}

struct AggregationSpec {
    Statistic stat = Statistic::mean;
    // Exclude samples whose inverse-warped source left the canvas. When off,
    // the nearest edge feature is replicated instead.
    bool masked = true;
};

struct SrtOptions {
    AggregationSpec agg{};
    std::size_t jobs = 1;
    bool override_shift_bound = false;
};

// Piecewise-constant upsampling: every pixel of patch (i, j) gets token (i, j).
inline DenseField upsample_pc(const FeatureMap& fmap, const ViTConfig& c)
{
    if (fmap.data.rank() != 3 || fmap.grid_h() != c.grid_h() || fmap.grid_w() != c.grid_w())
        throw DimensionError("upsample: feature grid " + shape_string(fmap.data.shape()) + " does not match " +
                             std::to_string(c.grid_h()) + "x" + std::to_string(c.grid_w()));
    const std::size_t ch = fmap.channels();
    DenseField out(c.img_h, c.img_w, ch);
    for (std::size_t u = 0; u < c.img_h; ++u) {
        for (std::size_t v = 0; v < c.img_w; ++v) {
            const float* src = fmap.data.data().data() + ((u / c.patch_h) * c.grid_w() + v / c.patch_w) * ch;
            std::copy(src, src + ch, out.at(u, v).begin());
            out.mass(u, v) = 1.0f;
        }
    }
    return out;
}

// Weight-weighted average pooling of a finalized field back onto the token grid.
inline FeatureMap retokenize(const DenseField& field, const ViTConfig& c, std::size_t layer = 0)
{
    if (field.state != DenseField::State::finalized) throw DimensionError("retokenize: field is not finalized");
    if (field.height() != c.img_h || field.width() != c.img_w)
        throw DimensionError("retokenize: field size does not match the model input");
    const std::size_t ch = field.channels(), gh = c.grid_h(), gw = c.grid_w();
    FeatureMap out;
    out.layer = layer;
    out.data = Tensor({gh, gw, ch});
    std::vector<double> acc(ch);
    for (std::size_t i = 0; i < gh; ++i) {
        for (std::size_t j = 0; j < gw; ++j) {
            std::fill(acc.begin(), acc.end(), 0.0);
            double mass = 0.0;
            for (std::size_t u = i * c.patch_h; u < (i + 1) * c.patch_h; ++u) {
                for (std::size_t v = j * c.patch_w; v < (j + 1) * c.patch_w; ++v) {
                    const double w = field.mass(u, v);
                    if (w <= 0.0) continue;
                    const auto px = field.at(u, v);
                    for (std::size_t k = 0; k < ch; ++k) acc[k] += w * px[k];
                    mass += w;
                }
            }
            if (mass <= 0.0)
                throw CoverageError("token (" + std::to_string(i) + "," + std::to_string(j) +
                                    ") has no valid pixels; the shifts are too large");
            float* dst = out.data.data().data() + (i * gw + j) * ch;
            for (std::size_t k = 0; k < ch; ++k) dst[k] = static_cast<float>(acc[k] / mass);
        }
    }
    return out;
}

// Observer recursion: x_hat += T^-1 pi^-1 y_t, mass += validity. Dividing
// by the accumulated mass gives the running mean.
class RunningMean {
public:
    RunningMean(std::size_t h, std::size_t w, std::size_t c) : h_(h), w_(w), c_(c), sum_(h * w * c), mass_(h * w) {}

    void push(const DenseField& aligned)
    {
        if (aligned.height() != h_ || aligned.width() != w_ || aligned.channels() != c_)
            throw DimensionError("running mean: field shape mismatch");
        const float* data = aligned.data.data().data();
        for (std::size_t p = 0; p < h_ * w_; ++p) {
            const double m = aligned.weight[p];
            if (m <= 0.0) continue;
            mass_[p] += m;
            for (std::size_t k = 0; k < c_; ++k) sum_[p * c_ + k] += m * data[p * c_ + k];
        }
        ++count_;
    }

    std::size_t count() const noexcept { return count_; }

    // Pixels with zero mass are left at 0; with require_coverage they are an error.
    DenseField estimate(bool require_coverage = true) const
    {
        DenseField out(h_, w_, c_);
        float* data = out.data.data().data();
        for (std::size_t p = 0; p < h_ * w_; ++p) {
            if (mass_[p] <= 0.0) {
                if (require_coverage)
                    throw CoverageError("pixel (" + std::to_string(p / w_) + "," + std::to_string(p % w_) +
                                        ") received no valid sample");
                continue;
            }
            out.weight[p] = static_cast<float>(mass_[p]);
            for (std::size_t k = 0; k < c_; ++k) data[p * c_ + k] = static_cast<float>(sum_[p * c_ + k] / mass_[p]);
        }
        return out;
    }

private:
    std::size_t h_, w_, c_;
    std::vector<double> sum_;
    std::vector<double> mass_;
    std::size_t count_ = 0;
};

namespace detail {

// Pixel rows of the shifted-back cell that fall on each source token row:
// cell i covers [i*n - shift, (i+1)*n - shift) clipped to [0, extent).
struct Overlap {
    std::size_t token;
    std::size_t count;
};

inline std::vector<std::vector<Overlap>> cell_overlaps(std::size_t grid, std::size_t patch, std::size_t extent,
                                                       int shift)
{
    std::vector<std::vector<Overlap>> out(grid);
    const auto n = static_cast<std::ptrdiff_t>(patch);
    for (std::size_t i = 0; i < grid; ++i) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) * n - shift, 0);
        const std::ptrdiff_t hi =
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i + 1) * n - shift, static_cast<std::ptrdiff_t>(extent));
        if (lo >= hi) continue;
        for (std::ptrdiff_t r = lo / n; r <= (hi - 1) / n; ++r) {
            const std::ptrdiff_t a = std::max(lo, r * n), b = std::min(hi, (r + 1) * n);
            out[i].push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(b - a)});
        }
    }
    return out;
}

} // namespace detail

// Efficient-path accumulator. Pushing (y_t, s_t) adds, for every token cell,
// the overlap-area-weighted sum of the <= 4 tokens of y_t that cover the
// back-shifted cell, and the cell's valid-pixel mass. Equivalent to
// retokenize(masked mean of warped upsampled fields) without any H x W x C buffer.
class TokenAccumulator {
public:
    explicit TokenAccumulator(const ViTConfig& c, std::size_t channels)
        : c_(c), ch_(channels), sum_(c.num_patches() * channels), mass_(c.num_patches())
    {
    }

    void push(const FeatureMap& y, Shift s)
    {
        if (y.grid_h() != c_.grid_h() || y.grid_w() != c_.grid_w() || y.channels() != ch_)
            throw DimensionError("token accumulator: feature map shape mismatch");
        detail::check_extent(s, c_.img_h, c_.img_w);
        const auto rows = detail::cell_overlaps(c_.grid_h(), c_.patch_h, c_.img_h, s.du);
        const auto cols = detail::cell_overlaps(c_.grid_w(), c_.patch_w, c_.img_w, s.dv);
        const std::size_t gw = c_.grid_w();
        const float* ydata = y.data.data().data();
        for (std::size_t i = 0; i < c_.grid_h(); ++i) {
            for (std::size_t j = 0; j < gw; ++j) {
                double* acc = sum_.data() + (i * gw + j) * ch_;
                std::size_t cell_mass = 0;
                for (const auto& r : rows[i]) {
                    for (const auto& q : cols[j]) {
                        const double w = static_cast<double>(r.count * q.count);
                        const float* src = ydata + (r.token * gw + q.token) * ch_;
                        for (std::size_t k = 0; k < ch_; ++k) acc[k] += w * src[k];
                        cell_mass += r.count * q.count;
                    }
                }
                mass_[i * gw + j] += static_cast<double>(cell_mass);
            }
        }
        ++count_;
    }

    std::size_t count() const noexcept { return count_; }

    FeatureMap estimate(std::size_t layer) const
    {
        FeatureMap out;
        out.layer = layer;
        out.data = Tensor({c_.grid_h(), c_.grid_w(), ch_});
        float* dst = out.data.data().data();
        for (std::size_t t = 0; t < mass_.size(); ++t) {
            if (mass_[t] <= 0.0)
                throw CoverageError("token (" + std::to_string(t / c_.grid_w()) + "," +
                                    std::to_string(t % c_.grid_w()) + ") received no valid sample");
            for (std::size_t k = 0; k < ch_; ++k) dst[t * ch_ + k] = static_cast<float>(sum_[t * ch_ + k] / mass_[t]);
        }
        return out;
    }

private:
    ViTConfig c_;
    std::size_t ch_;
    std::vector<double> sum_;
    std::vector<double> mass_;
    std::size_t count_ = 0;
};

namespace detail {

inline void check_entry(const ViTModel& model, std::size_t layer, const PerturbationSet& pset, const SrtOptions& opts)
{
    check_layer(model, layer);
    check_shift_bound(pset, model.config(), opts.override_shift_bound);
    if (opts.jobs < 1) throw DimensionError("parallelism width must be at least 1");
}

// Computes y_t = phi(T_t x) at `layer` for every shift. Forward passes run in
// waves of `jobs`; consume(t, y_t) is always called in shift-index order so the
// reduction is independent of scheduling.
template <typename Consume>
void for_each_response(const ViTModel& model, const Image& image, std::size_t layer, const PerturbationSet& pset,
                       std::size_t jobs, Consume&& consume)
{
    const std::size_t wave = std::max<std::size_t>(jobs, 1);
    std::vector<std::optional<FeatureMap>> slots(std::min(wave, pset.size()));
    for (std::size_t start = 0; start < pset.size(); start += wave) {
        const std::size_t stop = std::min(start + wave, pset.size());
        parallel_for(start, stop, jobs, [&](std::size_t t) {
            slots[t - start] = forward_to_layer(model, translate(image, pset[t]), layer);
        });
        for (std::size_t t = start; t < stop; ++t) {
            consume(t, std::move(*slots[t - start]));
            slots[t - start].reset();
        }
    }
}

inline double median_of(std::vector<double>& v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

// All-samples aggregation: buffers the per-shift token maps and, per pixel,
// gathers every aligned sample before reducing. Supports every statistic.
inline DenseField aggregate_buffered(const std::vector<FeatureMap>& responses, const PerturbationSet& pset,
                                     const ViTConfig& c, const AggregationSpec& agg)
{
    if (responses.size() != pset.size()) throw DimensionError("one response per shift is required");
    const std::size_t ch = responses.front().channels(), gw = c.grid_w();
    DenseField out(c.img_h, c.img_w, ch);
    std::vector<const float*> samples;
    samples.reserve(pset.size());
    std::vector<double> values;
    for (std::size_t u = 0; u < c.img_h; ++u) {
        for (std::size_t v = 0; v < c.img_w; ++v) {
            samples.clear();
            for (std::size_t t = 0; t < pset.size(); ++t) {
                // Aligned sample at p is the upsampled response at p - s.
                const std::ptrdiff_t qu = static_cast<std::ptrdiff_t>(u) - pset[t].du;
                const std::ptrdiff_t qv = static_cast<std::ptrdiff_t>(v) - pset[t].dv;
                const bool inside = qu >= 0 && qv >= 0 && qu < static_cast<std::ptrdiff_t>(c.img_h) &&
                                    qv < static_cast<std::ptrdiff_t>(c.img_w);
                if (!inside && agg.masked) continue;
                const std::size_t su = detail::clamp_index(qu, c.img_h), sv = detail::clamp_index(qv, c.img_w);
                samples.push_back(responses[t].data.data().data() + ((su / c.patch_h) * gw + sv / c.patch_w) * ch);
            }
            if (samples.empty())
                throw CoverageError("pixel (" + std::to_string(u) + "," + std::to_string(v) +
                                    ") received no valid sample");
            auto px = out.at(u, v);
            const double n = static_cast<double>(samples.size());
            for (std::size_t k = 0; k < ch; ++k) {
                values.clear();
                for (const float* s : samples) values.push_back(s[k]);
                double result = 0.0;
                if (agg.stat == Statistic::median) {
                    result = detail::median_of(values);
                } else {
                    double sum = 0.0;
                    for (double x : values) sum += x;
                    const double mean = sum / n;
                    if (agg.stat == Statistic::mean) {
                        result = mean;
                    } else {
                        double ss = 0.0;
                        for (double x : values) ss += (x - mean) * (x - mean);
                        result = ss / n;
                    }
                }
                px[k] = static_cast<float>(result);
            }
            out.mass(u, v) = static_cast<float>(samples.size());
        }
    }
    return out;
}

struct DenseResult {
    DenseField field;
    FeatureMap unperturbed; // y for the identity shift
};

namespace detail {

inline DenseResult srt_dense_impl(const ViTModel& model, const Image& image, std::size_t layer,
                                  const PerturbationSet& pset, const SrtOptions& opts)
{
    check_entry(model, layer, pset, opts);
    const auto& c = model.config();
    std::optional<FeatureMap> y0;
    if (opts.agg.stat == Statistic::mean) {
        RunningMean acc(c.img_h, c.img_w, c.dim);
        const Boundary boundary = opts.agg.masked ? Boundary::invalidate : Boundary::replicate;
        for_each_response(model, image, layer, pset, opts.jobs, [&](std::size_t t, FeatureMap&& y) {
            acc.push(warp_field(upsample_pc(y, c), inverse(pset[t]), boundary));
            if (t == 0) y0 = std::move(y);
        });
        return {acc.estimate(), std::move(*y0)};
    }
    std::vector<FeatureMap> responses;
    responses.reserve(pset.size());
    for_each_response(model, image, layer, pset, opts.jobs,
                      [&](std::size_t, FeatureMap&& y) { responses.push_back(std::move(y)); });
    DenseField field = aggregate_buffered(responses, pset, c, opts.agg);
    return {std::move(field), std::move(responses.front())};
}

} // namespace detail

// Pixel-resolution ensemble: y_t = phi(T_t x) at `layer`, upsampled, warped
// back by T_t^-1, and reduced along t. The mean runs through the streaming
// observer; median and variance buffer every sample.
inline DenseField srt_dense(const ViTModel& model, const Image& image, std::size_t layer, const PerturbationSet& pset,
                            const SrtOptions& opts = {})
{
    return detail::srt_dense_impl(model, image, layer, pset, opts).field;
}

// Naive ensemble tokens: retokenize(srt_dense). CLS is the unperturbed one.
inline FeatureMap srt_tokens(const ViTModel& model, const Image& image, std::size_t layer,
                             const PerturbationSet& pset, const SrtOptions& opts = {})
{
    auto r = detail::srt_dense_impl(model, image, layer, pset, opts);
    FeatureMap out = retokenize(r.field, model.config(), layer);
    out.cls = std::move(r.unperturbed.cls);
    return out;
}

// Same result as srt_tokens with the masked mean, computed from the per-shift
// token maps by overlap-area weighting.
inline FeatureMap srt_tokens_efficient(const ViTModel& model, const Image& image, std::size_t layer,
                                       const PerturbationSet& pset, const SrtOptions& opts = {})
{
    if (opts.agg.stat != Statistic::mean || !opts.agg.masked)
        throw UnsupportedStatistic("efficient path supports only the masked mean (requested " +
                                   to_string(opts.agg.stat) + (opts.agg.masked ? "" : ", unmasked") + ")");
    detail::check_entry(model, layer, pset, opts);
    TokenAccumulator acc(model.config(), model.config().dim);
    std::optional<Tensor> cls;
    detail::for_each_response(model, image, layer, pset, opts.jobs, [&](std::size_t t, FeatureMap&& y) {
        acc.push(y, pset[t]);
        if (t == 0) cls = std::move(y.cls);
    });
    FeatureMap out = acc.estimate(layer);
    out.cls = std::move(cls);
    return out;
}

// Efficient path for the masked mean, naive path (with a warning) otherwise.
inline FeatureMap srt_tokens_auto(const ViTModel& model, const Image& image, std::size_t layer,
                                  const PerturbationSet& pset, const SrtOptions& opts = {})
{
    if (opts.agg.stat == Statistic::mean && opts.agg.masked) return srt_tokens_efficient(model, image, layer, pset, opts);
    std::cerr << "warning: " << to_string(opts.agg.stat) << (opts.agg.masked ? "" : " (unmasked)")
              << " does not commute with pooling; using the naive path\n";
    return srt_tokens(model, image, layer, pset, opts);
}

// Injects the ensembled layer-`layer` tokens and resumes the forward pass.
// The resumed pass keeps the unperturbed CLS token of that layer.
inline ModelOutput forward_with_srt(const ViTModel& model, const Image& image, std::size_t layer,
                                    const PerturbationSet& pset, const SrtOptions& opts = {})
{
    return forward_from_layer(model, srt_tokens_auto(model, image, layer, pset, opts), layer);
}

// Innovation with unit gain: pi(T^-1 pi^-1 y_t) - phi(x), both at the same layer.
inline Tensor innovation(const FeatureMap& y_t, Shift s, const FeatureMap& y_0, const ViTConfig& c)
{
    const FeatureMap aligned = retokenize(warp_field(upsample_pc(y_t, c), inverse(s)), c, y_t.layer);
    Tensor out = aligned.data;
    auto o = out.data();
    auto b = y_0.data.data();
    if (o.size() != b.size()) throw DimensionError("innovation: feature map shape mismatch");
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= b[i];
    return out;
}

} // namespace srt
