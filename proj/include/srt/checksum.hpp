#pragma once

#include <cstdint>
#include <cstring>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>

namespace srt {

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xCBF29CE484222325ULL) noexcept
{
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Checksum of float data as little-endian binary32 bytes.
inline std::uint64_t fnv1a64(std::span<const float> values) noexcept
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (float v : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        const std::uint8_t le[4] = {static_cast<std::uint8_t>(bits), static_cast<std::uint8_t>(bits >> 8),
                                    static_cast<std::uint8_t>(bits >> 16), static_cast<std::uint8_t>(bits >> 24)};
        h = fnv1a64(std::span<const std::uint8_t>(le, 4), h);
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

} // namespace srt
