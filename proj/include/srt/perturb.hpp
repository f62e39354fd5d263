#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "srt/errors.hpp"
#include "srt/field.hpp"
#include "srt/image.hpp"
#include "srt/prng.hpp"
#include "srt/vit.hpp"

namespace srt {

// Integer translation: du rows (vertical), dv columns (horizontal).
struct Shift {
    int du = 0;
    int dv = 0;

    constexpr Shift inverse() const noexcept { return {-du, -dv}; }

    friend constexpr bool operator==(const Shift&, const Shift&) = default;
    friend constexpr auto operator<=>(const Shift&, const Shift&) = default;
};

constexpr Shift inverse(Shift s) noexcept
{
    return s.inverse();
}

inline std::string to_string(Shift s)
{
    return "(" + std::to_string(s.du) + "," + std::to_string(s.dv) + ")";
}

// Ordered, duplicate-free shift list that always starts with (0, 0).
class PerturbationSet {
public:
    PerturbationSet() : shifts_{{0, 0}} {}

    explicit PerturbationSet(std::vector<Shift> shifts) : shifts_(std::move(shifts))
    {
        if (shifts_.empty() || shifts_.front() != Shift{0, 0})
            throw ShiftError("perturbation set must start with the identity shift (0,0)");
        std::set<Shift> seen;
        for (auto s : shifts_)
            if (!seen.insert(s).second) throw ShiftError("duplicate shift " + to_string(s));
    }

    const std::vector<Shift>& shifts() const noexcept { return shifts_; }
    std::size_t size() const noexcept { return shifts_.size(); }
    const Shift& operator[](std::size_t i) const noexcept { return shifts_[i]; }
    auto begin() const noexcept { return shifts_.begin(); }
    auto end() const noexcept { return shifts_.end(); }

    int max_abs_du() const noexcept
    {
        int m = 0;
        for (auto s : shifts_) m = std::max(m, std::abs(s.du));
        return m;
    }
    int max_abs_dv() const noexcept
    {
        int m = 0;
        for (auto s : shifts_) m = std::max(m, std::abs(s.dv));
        return m;
    }

private:
    std::vector<Shift> shifts_;
};

// All (du, dv) with |du|, |dv| <= d: identity first, then row-major.
inline PerturbationSet build_grid(int d)
{
    if (d < 0) throw ShiftError("perturbation level must be non-negative");
    std::vector<Shift> shifts{{0, 0}};
    for (int du = -d; du <= d; ++du)
        for (int dv = -d; dv <= d; ++dv)
            if (du != 0 || dv != 0) shifts.push_back({du, dv});
    return PerturbationSet(std::move(shifts));
}

// Identity plus `count - 1` distinct shifts drawn uniformly from the level-d grid.
inline PerturbationSet sample_random(int d, std::size_t count, std::uint64_t seed)
{
    const auto grid = build_grid(d);
    if (count == 0 || count > grid.size())
        throw ShiftError("random perturbation count must be in [1, " + std::to_string(grid.size()) + "]");
    std::vector<Shift> pool(grid.begin() + 1, grid.end());
    SplitMix64 rng(seed);
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i + 1 < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next() % (pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<Shift> shifts{{0, 0}};
    shifts.insert(shifts.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count - 1));
    return PerturbationSet(std::move(shifts));
}

// Rejects shifts larger than half a token along either axis unless overridden.
inline void check_shift_bound(const PerturbationSet& pset, const ViTConfig& c, bool override_bound)
{
    if (override_bound) return;
    const int bu = static_cast<int>(c.patch_h / 2), bv = static_cast<int>(c.patch_w / 2);
    for (auto s : pset)
        if (std::abs(s.du) > bu || std::abs(s.dv) > bv)
            throw ShiftError("shift " + to_string(s) + " exceeds the half-token bound (" + std::to_string(bu) + "," +
                             std::to_string(bv) + "); pass the override flag to allow it");
}

namespace detail {

inline void check_extent(Shift s, std::size_t h, std::size_t w)
{
    if (static_cast<std::size_t>(std::abs(s.du)) >= h || static_cast<std::size_t>(std::abs(s.dv)) >= w)
        throw ShiftError("shift " + to_string(s) + " exceeds the " + std::to_string(h) + "x" + std::to_string(w) +
                         " extent");
}

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) noexcept
{
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
}

} // namespace detail

// Edge-padded shift: out(u, v) = in(clamp(u + du), clamp(v + dv)).
inline Image translate(const Image& image, Shift s)
{
    detail::check_extent(s, image.height(), image.width());
    const std::size_t h = image.height(), w = image.width(), k = image.channels();
    Image out(h, w, k);
    for (std::size_t u = 0; u < h; ++u) {
        const std::size_t su = detail::clamp_index(static_cast<std::ptrdiff_t>(u) + s.du, h);
        for (std::size_t v = 0; v < w; ++v) {
            const std::size_t sv = detail::clamp_index(static_cast<std::ptrdiff_t>(v) + s.dv, w);
            for (std::size_t ch = 0; ch < k; ++ch) out(u, v, ch) = image(su, sv, ch);
        }
    }
    return out;
}

enum class Boundary {
    invalidate, // out-of-canvas sources get weight 0
    replicate,  // out-of-canvas sources read the nearest edge pixel
};

// out(u, v) = in(u + du, v + dv), carrying the source weight.
inline DenseField warp_field(const DenseField& field, Shift s, Boundary boundary = Boundary::invalidate)
{
    const std::size_t h = field.height(), w = field.width(), c = field.channels();
    detail::check_extent(s, h, w);
    DenseField out(h, w, c, field.state);
    for (std::size_t u = 0; u < h; ++u) {
        const std::ptrdiff_t su = static_cast<std::ptrdiff_t>(u) + s.du;
        for (std::size_t v = 0; v < w; ++v) {
            const std::ptrdiff_t sv = static_cast<std::ptrdiff_t>(v) + s.dv;
            const bool inside = su >= 0 && sv >= 0 && su < static_cast<std::ptrdiff_t>(h) &&
                                sv < static_cast<std::ptrdiff_t>(w);
            if (!inside && boundary == Boundary::invalidate) continue;
            const std::size_t cu = detail::clamp_index(su, h), cv = detail::clamp_index(sv, w);
            const auto src = field.at(cu, cv);
            std::copy(src.begin(), src.end(), out.at(u, v).begin());
            out.mass(u, v) = field.mass(cu, cv);
        }
    }
    return out;
}

} // namespace srt
