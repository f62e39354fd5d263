#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "srt/srt.hpp"

namespace srt_test {

// 64x64 input, 8x8 patches, C=32, depth 2, 4 heads.
inline srt::ViTConfig toy_config()
{
    return srt::ViTConfig{};
}

// Same architecture at 32x32 for the slower brute-force tests.
inline srt::ViTConfig small_config()
{
    srt::ViTConfig c;
    c.img_h = c.img_w = 32;
    c.dim = 16;
    c.heads = 2;
    return c;
}

// Toy model with the positional table zeroed: translation-equivariant up to
// the token grid.
inline srt::ViTModel zero_pos_model(std::uint64_t seed, const srt::ViTConfig& c)
{
    auto m = srt::make_toy_model(seed, c);
    for (float& v : m.param("pos_embed").data()) v = 0.0f;
    return m;
}

inline srt::Image random_image(const srt::ViTConfig& c, std::uint64_t seed)
{
    return srt::synthetic::random_image(c.img_h, c.img_w, c.in_chans, seed);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("srt_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace srt_test
