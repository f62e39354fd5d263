#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "srt/checksum.hpp"
#include "srt/errors.hpp"
#include "srt/image.hpp"
#include "srt/prng.hpp"
#include "srt/tensor.hpp"
#include "srt/vit.hpp"

namespace srt {

// VITW container:
//   bytes 0-3   "VITW"
//   bytes 4-7   version, u32 LE (= 1)
//   bytes 8-15  header length, u64 LE
//   header      UTF-8 JSON {config:{...}, tensors:[{name, shape, offset}]}
//   payload     little-endian float32; offsets are relative to payload start
struct WeightContainer {
    static constexpr std::uint32_t kVersion = 1;

    ViTConfig config;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const
    {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw ContainerError("no tensor named \"" + name + "\"");
    }

    std::uint64_t checksum(const std::string& name) const { return fnv1a64(tensor(name).data()); }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint64_t get_le(const std::uint8_t* p, int n)
{
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline nlohmann::json config_to_json(const ViTConfig& c)
{
    return {{"img_h", c.img_h}, {"img_w", c.img_w}, {"patch_h", c.patch_h}, {"patch_w", c.patch_w},
            {"dim", c.dim},     {"depth", c.depth}, {"heads", c.heads},     {"mlp_ratio", c.mlp_ratio},
            {"use_cls", c.use_cls}};
}

inline ViTConfig config_from_json(const nlohmann::json& j)
{
    ViTConfig c;
    c.img_h = j.at("img_h").get<std::size_t>();
    c.img_w = j.at("img_w").get<std::size_t>();
    c.patch_h = j.at("patch_h").get<std::size_t>();
    c.patch_w = j.at("patch_w").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.use_cls = j.at("use_cls").get<bool>();
    return c;
}

} // namespace detail

inline std::vector<std::uint8_t> serialize(const WeightContainer& wc)
{
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : wc.tensors) {
        index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size() * sizeof(float);
    }
    const std::string header = nlohmann::json{{"config", detail::config_to_json(wc.config)}, {"tensors", index}}.dump();

    std::vector<std::uint8_t> out{'V', 'I', 'T', 'W'};
    detail::put_u32(out, WeightContainer::kVersion);
    detail::put_u64(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : wc.tensors) {
        for (float v : t.data()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            detail::put_u32(out, bits);
        }
    }
    return out;
}

inline WeightContainer parse_container(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "VITW", 4) != 0) throw ContainerError("bad magic (not a VITW file)");
    const auto version = static_cast<std::uint32_t>(detail::get_le(bytes.data() + 4, 4));
    if (version != WeightContainer::kVersion) throw ContainerError("unsupported VITW version " + std::to_string(version));
    const std::uint64_t header_len = detail::get_le(bytes.data() + 8, 8);
    if (header_len > bytes.size() - 16) throw ContainerError("header length exceeds file size");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw ContainerError(std::string("header is not valid JSON: ") + e.what());
    }

    WeightContainer wc;
    const std::size_t payload_start = 16 + header_len;
    const std::size_t payload_size = bytes.size() - payload_start;
    try {
        wc.config = detail::config_from_json(header.at("config"));
        std::set<std::string> names;
        std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
        for (const auto& entry : header.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            if (!names.insert(name).second) throw ContainerError("duplicate tensor name \"" + name + "\"");
            if (shape.empty() || std::find(shape.begin(), shape.end(), 0) != shape.end())
                throw ContainerError("tensor \"" + name + "\" has an empty shape");
            const std::uint64_t nbytes = shape_size(shape) * sizeof(float);
            if (offset % 4 != 0 || offset > payload_size || nbytes > payload_size - offset)
                throw ContainerError("tensor \"" + name + "\" lies outside the payload");
            extents.emplace_back(offset, offset + nbytes);
            std::vector<float> data(shape_size(shape));
            for (std::size_t i = 0; i < data.size(); ++i) {
                const auto bits = static_cast<std::uint32_t>(detail::get_le(bytes.data() + payload_start + offset + 4 * i, 4));
                std::memcpy(&data[i], &bits, sizeof bits);
            }
            wc.tensors.emplace_back(name, Tensor(shape, std::move(data)));
        }
        std::sort(extents.begin(), extents.end());
        std::uint64_t covered = 0;
        for (std::size_t i = 0; i < extents.size(); ++i) {
            if (i > 0 && extents[i].first < extents[i - 1].second) throw ContainerError("tensor extents overlap");
            covered += extents[i].second - extents[i].first;
        }
        if (covered != payload_size)
            throw ContainerError("payload has " + std::to_string(payload_size - covered) + " unreferenced bytes");
    } catch (const nlohmann::json::exception& e) {
        throw ContainerError(std::string("malformed header: ") + e.what());
    }

    for (const auto& [name, t] : wc.tensors) {
        if (name == "patch_embed.weight" && t.rank() == 2) {
            const std::size_t per_pixel = wc.config.patch_h * wc.config.patch_w;
            if (per_pixel != 0 && t.dim(1) % per_pixel == 0) wc.config.in_chans = t.dim(1) / per_pixel;
        }
    }
    return wc;
}

inline ViTModel to_model(WeightContainer wc)
{
    std::map<std::string, Tensor> params;
    for (auto& [name, t] : wc.tensors) params.emplace(name, std::move(t));
    return ViTModel(wc.config, std::move(params));
}

inline WeightContainer to_container(const ViTModel& model)
{
    WeightContainer wc;
    wc.config = model.config();
    for (std::size_t i = 0; i < model.parameters().size(); ++i)
        wc.tensors.emplace_back(model.parameter_names()[i], model.parameters()[i]);
    return wc;
}

inline ViTModel load_weights(const std::filesystem::path& path)
{
    return to_model(parse_container(detail::read_file(path)));
}

inline void save_weights(const WeightContainer& wc, const std::filesystem::path& path)
{
    detail::write_file(path, serialize(wc));
}

inline void save_weights(const ViTModel& model, const std::filesystem::path& path)
{
    save_weights(to_container(model), path);
}

// Pseudo-random toy weights. One SplitMix64 stream seeded with `seed` fills
// every tensor in parameter_specs order, element by element, with
// float(-0.05 + 0.1 * uniform01()). LayerNorm scales (names ending in
// "norm.weight", "norm1.weight", "norm2.weight") get 1 added so the toy model
// neither collapses nor explodes.
inline WeightContainer make_toy_weights(std::uint64_t seed, ViTConfig config)
{
    config.validate();
    SplitMix64 rng(seed);
    WeightContainer wc;
    wc.config = config;
    for (const auto& spec : parameter_specs(config)) {
        const bool is_norm_scale = spec.name.ends_with("norm.weight") || spec.name.ends_with("norm1.weight") ||
                                   spec.name.ends_with("norm2.weight");
        Tensor t(spec.shape);
        for (float& v : t.data()) {
            const double u = -0.05 + 0.1 * rng.uniform01();
            v = static_cast<float>(is_norm_scale ? 1.0 + u : u);
        }
        wc.tensors.emplace_back(spec.name, std::move(t));
    }
    return wc;
}

inline ViTModel make_toy_model(std::uint64_t seed, const ViTConfig& config)
{
    return to_model(make_toy_weights(seed, config));
}

} // namespace srt
