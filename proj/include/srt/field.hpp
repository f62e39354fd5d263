#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include "srt/errors.hpp"
#include "srt/image.hpp"
#include "srt/tensor.hpp"

namespace srt {

// Pixel-resolution feature field with a per-pixel validity mass.
//
// While accumulating, data holds weighted sums; once finalized it holds the
// per-pixel statistic, defined only where weight > 0 (zero elsewhere).
struct DenseField {
    enum class State { accumulating, finalized };

    Tensor data;   // [H x W x C]
    Tensor weight; // [H x W]
    State state = State::finalized;

    DenseField() = default;
    DenseField(std::size_t h, std::size_t w, std::size_t c, State s = State::finalized)
        : data({h, w, c}), weight({h, w}), state(s)
    {
    }

    std::size_t height() const { return data.dim(0); }
    std::size_t width() const { return data.dim(1); }
    std::size_t channels() const { return data.dim(2); }

    std::span<float> at(std::size_t u, std::size_t v) noexcept
    {
        const std::size_t c = data.dim(2);
        return {data.data().data() + (u * data.dim(1) + v) * c, c};
    }
    std::span<const float> at(std::size_t u, std::size_t v) const noexcept
    {
        const std::size_t c = data.dim(2);
        return {data.data().data() + (u * data.dim(1) + v) * c, c};
    }
    float& mass(std::size_t u, std::size_t v) noexcept { return weight[u * weight.dim(1) + v]; }
    float mass(std::size_t u, std::size_t v) const noexcept { return weight[u * weight.dim(1) + v]; }

    friend bool operator==(const DenseField&, const DenseField&) = default;
};

// SRTF export: "SRTF", u32 H, u32 W, u32 C (LE), then H*W*C f32 LE data,
// then H*W f32 LE weights.
inline std::vector<std::uint8_t> encode_srtf(const DenseField& f)
{
    std::vector<std::uint8_t> out{'S', 'R', 'T', 'F'};
    auto put32 = [&out](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put32(static_cast<std::uint32_t>(f.height()));
    put32(static_cast<std::uint32_t>(f.width()));
    put32(static_cast<std::uint32_t>(f.channels()));
    out.reserve(16 + 4 * (f.data.size() + f.weight.size()));
    for (const Tensor* t : {&f.data, &f.weight}) {
        for (float v : t->data()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            put32(bits);
        }
    }
    return out;
}

inline DenseField decode_srtf(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "SRTF", 4) != 0) throw FormatError("SRTF: bad magic");
    auto get32 = [&bytes](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
        return v;
    };
    const std::size_t h = get32(4), w = get32(8), c = get32(12);
    if (h == 0 || w == 0 || c == 0) throw FormatError("SRTF: zero dimension");
    const std::size_t n = h * w * c, nw = h * w;
    if (bytes.size() != 16 + 4 * (n + nw)) throw FormatError("SRTF: payload size mismatch");
    DenseField f(h, w, c);
    std::size_t off = 16;
    for (Tensor* t : {&f.data, &f.weight}) {
        for (float& v : t->data()) {
            const std::uint32_t bits = get32(off);
            std::memcpy(&v, &bits, sizeof v);
            off += 4;
        }
    }
    return f;
}

inline void write_srtf(const DenseField& f, const std::filesystem::path& path)
{
    detail::write_file(path, encode_srtf(f));
}

inline DenseField read_srtf(const std::filesystem::path& path)
{
    return decode_srtf(detail::read_file(path));
}

} // namespace srt
