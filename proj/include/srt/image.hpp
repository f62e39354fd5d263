#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "srt/errors.hpp"

namespace srt {

// Row-major HWC image with values in [0, 1].
class Image {
public:
    Image() = default;

    Image(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f)
        : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill)
    {
        if (height == 0 || width == 0) throw DimensionError("image dimensions must be at least 1");
        if (channels != 1 && channels != 3) throw DimensionError("image must have 1 or 3 channels");
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t channels() const noexcept { return channels_; }

    float& operator()(std::size_t u, std::size_t v, std::size_t k) noexcept
    {
        return data_[(u * width_ + v) * channels_ + k];
    }
    float operator()(std::size_t u, std::size_t v, std::size_t k) const noexcept
    {
        return data_[(u * width_ + v) * channels_ + k];
    }

    std::vector<float>& data() noexcept { return data_; }
    const std::vector<float>& data() const noexcept { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 0;
    std::vector<float> data_;
};

// 8-bit quantization, round half up, clamped to [0, 255].
inline std::uint8_t to_byte(float v) noexcept
{
    const double s = std::floor(static_cast<double>(v) * 255.0 + 0.5);
    return static_cast<std::uint8_t>(s < 0.0 ? 0.0 : (s > 255.0 ? 255.0 : s));
}

namespace detail {

class PnmHeaderReader {
public:
    explicit PnmHeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::size_t read_uint(const char* field)
    {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !is_digit(bytes_[pos_]))
            throw FormatError(std::string("PNM header: expected ") + field);
        std::size_t value = 0;
        while (pos_ < bytes_.size() && is_digit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > (1u << 24)) throw FormatError(std::string("PNM header: ") + field + " too large");
            ++pos_;
        }
        return value;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_offset()
    {
        if (pos_ >= bytes_.size() || !is_space(bytes_[pos_]))
            throw FormatError("PNM header: missing whitespace before raster");
        return pos_ + 1;
    }

    std::size_t pos_ = 2;

private:
    static bool is_digit(std::uint8_t c) { return c >= '0' && c <= '9'; }
    static bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

    void skip_space_and_comments()
    {
        while (pos_ < bytes_.size()) {
            if (is_space(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<std::uint8_t>& bytes_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed: " + path.string());
}

} // namespace detail

// Parses binary PGM (P5) or PPM (P6), maxval 255 only.
inline Image decode_pnm(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw FormatError("PNM: unsupported magic (only P5 and P6)");
    const std::size_t channels = bytes[1] == '6' ? 3 : 1;
    detail::PnmHeaderReader hdr(bytes);
    const std::size_t width = hdr.read_uint("width");
    const std::size_t height = hdr.read_uint("height");
    const std::size_t maxval = hdr.read_uint("maxval");
    if (width == 0 || height == 0) throw FormatError("PNM: zero image dimension");
    if (maxval != 255) throw FormatError("PNM: unsupported maxval " + std::to_string(maxval) + " (only 255)");
    const std::size_t offset = hdr.raster_offset();
    const std::size_t need = width * height * channels;
    if (bytes.size() < offset + need)
        throw FormatError("PNM: truncated raster (" + std::to_string(bytes.size() - offset) + " of " +
                          std::to_string(need) + " bytes)");
    Image img(height, width, channels);
    for (std::size_t i = 0; i < need; ++i) img.data()[i] = static_cast<float>(bytes[offset + i]) / 255.0f;
    return img;
}

// Canonical header "P6\n<w> <h>\n255\n" (P5 for one channel).
inline std::vector<std::uint8_t> encode_pnm(const Image& img)
{
    const std::string header = std::string(img.channels() == 3 ? "P6" : "P5") + "\n" +
                               std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + img.data().size());
    for (float v : img.data()) out.push_back(to_byte(v));
    return out;
}

inline Image read_ppm(const std::filesystem::path& path)
{
    return decode_pnm(detail::read_file(path));
}

inline void write_ppm(const Image& img, const std::filesystem::path& path)
{
    detail::write_file(path, encode_pnm(img));
}

} // namespace srt
