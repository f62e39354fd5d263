#pragma once

#include <cstdint>

#include "srt/image.hpp"
#include "srt/prng.hpp"

// Deterministic test inputs.
namespace srt::synthetic {

// Uniform noise, values rounded to multiples of 1/255 so they survive PPM round trips.
inline Image random_image(std::size_t h, std::size_t w, std::size_t channels, std::uint64_t seed)
{
    Image img(h, w, channels);
    SplitMix64 rng(seed);
    for (float& v : img.data()) v = static_cast<float>(rng.next() % 256) / 255.0f;
    return img;
}

inline Image constant_image(std::size_t h, std::size_t w, std::size_t channels, float value)
{
    return Image(h, w, channels, value);
}

// Vertical step: columns < edge_col are `dark`, the rest `bright`.
inline Image step_edge(std::size_t h, std::size_t w, std::size_t channels, std::size_t edge_col, float dark = 0.0f,
                       float bright = 1.0f)
{
    Image img(h, w, channels);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v)
            for (std::size_t k = 0; k < channels; ++k) img(u, v, k) = v < edge_col ? dark : bright;
    return img;
}

} // namespace srt::synthetic
