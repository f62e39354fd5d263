#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "srt/errors.hpp"
#include "srt/parallel.hpp"
#include "srt/prng.hpp"

// One-dimensional stochastic resonance: average a coarse quantizer over
// dithered copies of the input and compare against plain quantization.
namespace srt::sr {

class Quantizer {
public:
    enum class Kind { round, floor, levels };

    static Quantizer round(double step) { return Quantizer(Kind::round, step, {}); }
    static Quantizer floor(double step) { return Quantizer(Kind::floor, step, {}); }
    static Quantizer levels(std::vector<double> levels) { return Quantizer(Kind::levels, 1.0, std::move(levels)); }

    Kind kind() const noexcept { return kind_; }
    double step() const noexcept { return step_; }

    // Nearest level (ties go up) or the floor multiple of the step.
    double operator()(double x) const noexcept
    {
        switch (kind_) {
        case Kind::round: return step_ * std::floor(x / step_ + 0.5);
        case Kind::floor: return step_ * std::floor(x / step_);
        case Kind::levels: break;
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < levels_.size(); ++i) {
            const double d_best = std::abs(x - levels_[best]);
            const double d = std::abs(x - levels_[i]);
            if (d <= d_best) best = i;
        }
        return levels_[best];
    }

private:
    Quantizer(Kind kind, double step, std::vector<double> levels) : kind_(kind), step_(step), levels_(std::move(levels))
    {
        if (!(step_ > 0.0) || !std::isfinite(step_)) throw Error("quantizer step must be positive");
        if (kind_ == Kind::levels) {
            if (levels_.empty()) throw Error("quantizer needs at least one level");
            for (std::size_t i = 1; i < levels_.size(); ++i)
                if (!(levels_[i] > levels_[i - 1])) throw Error("quantizer levels must be strictly increasing");
        }
    }

    Kind kind_;
    double step_;
    std::vector<double> levels_;
};

inline double quantize(const Quantizer& q, double x) noexcept
{
    return q(x);
}

struct DitherSpec {
    enum class Dist { none, uniform, gaussian };

    Dist dist = Dist::uniform;
    double amplitude = 0.5; // half-width a for uniform(-a, a), sigma for gaussian
    std::size_t samples = 1;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (samples < 1) throw Error("dither needs at least one sample");
        if (dist != Dist::none && !(amplitude > 0.0)) throw Error("dither amplitude must be positive");
    }
};

// (1/t) * sum_i f(x + n_i), with n_i drawn from one SplitMix64 stream seeded
// with d.seed: uniform uses one draw per sample, gaussian two (Box-Muller).
inline double dithered_estimate(const Quantizer& q, double x, const DitherSpec& d)
{
    d.validate();
    SplitMix64 rng(d.seed);
    double sum = 0.0;
    for (std::size_t i = 0; i < d.samples; ++i) {
        double n = 0.0;
        if (d.dist == DitherSpec::Dist::uniform) n = rng.uniform(-d.amplitude, d.amplitude);
        else if (d.dist == DitherSpec::Dist::gaussian) n = d.amplitude * rng.normal();
        sum += q(x + n);
    }
    return sum / static_cast<double>(d.samples);
}

struct SweepRow {
    double x;
    double f_x;
    double x_hat;
    double sq_err_plain;
    double sq_err_dithered;
};

struct SweepResult {
    double mse_plain = 0.0;
    double mse_dithered = 0.0;
    std::vector<SweepRow> rows;
};

// Sample i dithers with its own stream, seeded derive_stream_seed(d.seed, i),
// so results do not depend on `jobs`.
inline SweepResult mse_sweep(const Quantizer& q, std::span<const double> signal, const DitherSpec& d,
                             std::size_t jobs = 1)
{
    if (signal.empty()) throw Error("mse sweep needs a nonempty signal");
    d.validate();
    SweepResult r;
    r.rows.resize(signal.size());
    parallel_for(0, signal.size(), jobs, [&](std::size_t i) {
        DitherSpec di = d;
        di.seed = derive_stream_seed(d.seed, i);
        const double x = signal[i];
        const double fx = q(x);
        const double xh = dithered_estimate(q, x, di);
        r.rows[i] = {x, fx, xh, (x - fx) * (x - fx), (x - xh) * (x - xh)};
    });
    for (const auto& row : r.rows) {
        r.mse_plain += row.sq_err_plain;
        r.mse_dithered += row.sq_err_dithered;
    }
    r.mse_plain /= static_cast<double>(signal.size());
    r.mse_dithered /= static_cast<double>(signal.size());
    return r;
}

// {start, start + step, ...}, `count` values.
inline std::vector<double> ramp(double start, double step, std::size_t count)
{
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = start + step * static_cast<double>(i);
    return v;
}

inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline void write_csv(std::ostream& os, const SweepResult& r)
{
    os << "x,f_x,x_hat,sq_err_plain,sq_err_dithered\n";
    for (const auto& row : r.rows)
        os << format_double(row.x) << ',' << format_double(row.f_x) << ',' << format_double(row.x_hat) << ','
           << format_double(row.sq_err_plain) << ',' << format_double(row.sq_err_dithered) << '\n';
}

} // namespace srt::sr
