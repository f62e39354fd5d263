#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "srt/errors.hpp"
#include "srt/image.hpp"
#include "srt/tensor.hpp"

namespace srt {

struct ViTConfig {
    std::size_t img_h = 64;
    std::size_t img_w = 64;
    std::size_t patch_h = 8;
    std::size_t patch_w = 8;
    std::size_t dim = 32;
    std::size_t depth = 2;
    std::size_t heads = 4;
    double mlp_ratio = 4.0;
    bool use_cls = true;
    // Not part of the serialized header; recovered from the patch embedding shape.
    std::size_t in_chans = 3;

    std::size_t grid_h() const noexcept { return img_h / patch_h; }
    std::size_t grid_w() const noexcept { return img_w / patch_w; }
    std::size_t num_patches() const noexcept { return grid_h() * grid_w(); }
    std::size_t num_tokens() const noexcept { return num_patches() + (use_cls ? 1 : 0); }
    std::size_t patch_dim() const noexcept { return patch_h * patch_w * in_chans; }
    std::size_t head_dim() const noexcept { return dim / heads; }
    std::size_t mlp_hidden() const noexcept
    {
        return static_cast<std::size_t>(std::llround(static_cast<double>(dim) * mlp_ratio));
    }

    void validate() const
    {
        auto fail = [](const std::string& m) { throw DimensionError("invalid ViT config: " + m); };
        if (img_h == 0 || img_w == 0 || patch_h == 0 || patch_w == 0) fail("zero image or patch size");
        if (img_h % patch_h != 0) fail("img_h not divisible by patch_h");
        if (img_w % patch_w != 0) fail("img_w not divisible by patch_w");
        if (dim == 0 || heads == 0 || dim % heads != 0) fail("dim must be a positive multiple of heads");
        if (depth < 1) fail("depth must be at least 1");
        if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) fail("mlp_ratio must give a positive hidden size");
        if (in_chans != 1 && in_chans != 3) fail("in_chans must be 1 or 3");
    }

    friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

struct TensorSpec {
    std::string name;
    Shape shape;
};

// Parameter names and shapes in canonical order. Linear weights are [out x in].
inline std::vector<TensorSpec> parameter_specs(const ViTConfig& c)
{
    const std::size_t d = c.dim, hid = c.mlp_hidden();
    std::vector<TensorSpec> specs{{"patch_embed.weight", {d, c.patch_dim()}}, {"patch_embed.bias", {d}}};
    if (c.use_cls) specs.push_back({"cls_token", {d}});
    specs.push_back({"pos_embed", {c.num_tokens(), d}});
    for (std::size_t b = 0; b < c.depth; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        specs.push_back({p + "norm1.weight", {d}});
        specs.push_back({p + "norm1.bias", {d}});
        specs.push_back({p + "attn.qkv.weight", {3 * d, d}});
        specs.push_back({p + "attn.qkv.bias", {3 * d}});
        specs.push_back({p + "attn.proj.weight", {d, d}});
        specs.push_back({p + "attn.proj.bias", {d}});
        specs.push_back({p + "norm2.weight", {d}});
        specs.push_back({p + "norm2.bias", {d}});
        specs.push_back({p + "mlp.fc1.weight", {hid, d}});
        specs.push_back({p + "mlp.fc1.bias", {hid}});
        specs.push_back({p + "mlp.fc2.weight", {d, hid}});
        specs.push_back({p + "mlp.fc2.bias", {d}});
    }
    specs.push_back({"norm.weight", {d}});
    specs.push_back({"norm.bias", {d}});
    return specs;
}

// Token-grid features at a tap layer. data is [grid_h x grid_w x C].
struct FeatureMap {
    std::size_t layer = 0;
    Tensor data;
    std::optional<Tensor> cls;

    std::size_t grid_h() const { return data.dim(0); }
    std::size_t grid_w() const { return data.dim(1); }
    std::size_t channels() const { return data.dim(2); }

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

// Final-layer features (and CLS when configured).
using ModelOutput = FeatureMap;

class ViTModel {
public:
    ViTModel(ViTConfig config, std::map<std::string, Tensor> params) : config_(config)
    {
        config_.validate();
        const auto specs = parameter_specs(config_);
        for (const auto& spec : specs) {
            auto it = params.find(spec.name);
            if (it == params.end()) throw ContainerError("missing tensor \"" + spec.name + "\"");
            if (it->second.shape() != spec.shape)
                throw ContainerError("tensor \"" + spec.name + "\" has shape " + shape_string(it->second.shape()) +
                                     ", expected " + shape_string(spec.shape));
            params_.push_back(std::move(it->second));
            params.erase(it);
        }
        if (!params.empty()) throw ContainerError("unexpected tensor \"" + params.begin()->first + "\"");
        names_.reserve(specs.size());
        for (const auto& s : specs) names_.push_back(s.name);
    }

    const ViTConfig& config() const noexcept { return config_; }
    std::size_t depth() const noexcept { return config_.depth; }

    const std::vector<std::string>& parameter_names() const noexcept { return names_; }
    const std::vector<Tensor>& parameters() const noexcept { return params_; }

    const Tensor& param(const std::string& name) const
    {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return params_[i];
        throw ContainerError("no tensor named \"" + name + "\"");
    }
    Tensor& param(const std::string& name)
    {
        return const_cast<Tensor&>(std::as_const(*this).param(name));
    }

    // Parameter view for one block, in parameter_specs order.
    const Tensor& block_param(std::size_t block, std::size_t slot) const
    {
        return params_[block_base() + block * kBlockParams + slot];
    }

    static constexpr std::size_t kBlockParams = 12;
    enum BlockSlot : std::size_t {
        kNorm1W, kNorm1B, kQkvW, kQkvB, kProjW, kProjB, kNorm2W, kNorm2B, kFc1W, kFc1B, kFc2W, kFc2B
    };

    const Tensor& patch_weight() const { return params_[0]; }
    const Tensor& patch_bias() const { return params_[1]; }
    const Tensor& cls_token() const { return params_[2]; }
    const Tensor& pos_embed() const { return params_[config_.use_cls ? 3 : 2]; }
    const Tensor& norm_weight() const { return params_[params_.size() - 2]; }
    const Tensor& norm_bias() const { return params_.back(); }

private:
    std::size_t block_base() const noexcept { return config_.use_cls ? 4 : 3; }

    ViTConfig config_;
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
};

// Rows are non-overlapping patches in raster order; each row is the
// row-major (u, v, k) flattening of its patch.
inline Tensor patchify(const Image& image, const ViTConfig& c)
{
    if (image.height() != c.img_h || image.width() != c.img_w || image.channels() != c.in_chans)
        throw DimensionError("patchify: image " + std::to_string(image.height()) + "x" +
                             std::to_string(image.width()) + "x" + std::to_string(image.channels()) +
                             " does not match model input " + std::to_string(c.img_h) + "x" +
                             std::to_string(c.img_w) + "x" + std::to_string(c.in_chans));
    Tensor out({c.num_patches(), c.patch_dim()});
    const std::size_t gw = c.grid_w(), k = c.in_chans;
    for (std::size_t t = 0; t < c.num_patches(); ++t) {
        const std::size_t pi = t / gw, pj = t % gw;
        auto row = out.row(t);
        std::size_t idx = 0;
        for (std::size_t u = 0; u < c.patch_h; ++u)
            for (std::size_t v = 0; v < c.patch_w; ++v)
                for (std::size_t ch = 0; ch < k; ++ch)
                    row[idx++] = image(pi * c.patch_h + u, pj * c.patch_w + v, ch);
    }
    return out;
}

namespace detail {

inline Tensor self_attention(const ViTModel& m, std::size_t b, const Tensor& x)
{
    const auto& c = m.config();
    const std::size_t n = x.dim(0), d = c.dim, hd = c.head_dim();
    const Tensor qkv = linear(x, m.block_param(b, ViTModel::kQkvW), m.block_param(b, ViTModel::kQkvB));
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Tensor heads_out({n, d});
    Tensor scores({n, n});
    for (std::size_t h = 0; h < c.heads; ++h) {
        const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t e = 0; e < hd; ++e)
                    acc += static_cast<double>(qkv.at(i, qo + e)) * qkv.at(j, ko + e);
                scores.at(i, j) = static_cast<float>(acc * scale);
            }
        }
        const Tensor attn = softmax(scores, 1);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t e = 0; e < hd; ++e) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += static_cast<double>(attn.at(i, j)) * qkv.at(j, vo + e);
                heads_out.at(i, qo + e) = static_cast<float>(acc);
            }
        }
    }
    return linear(heads_out, m.block_param(b, ViTModel::kProjW), m.block_param(b, ViTModel::kProjB));
}

// Pre-norm block: x += attn(ln1(x)); x += mlp(ln2(x)).
inline void run_block(const ViTModel& m, std::size_t b, Tensor& x)
{
    const Tensor h1 = layer_norm(x, m.block_param(b, ViTModel::kNorm1W), m.block_param(b, ViTModel::kNorm1B));
    add_inplace(x, self_attention(m, b, h1));
    const Tensor h2 = layer_norm(x, m.block_param(b, ViTModel::kNorm2W), m.block_param(b, ViTModel::kNorm2B));
    const Tensor hidden = gelu(linear(h2, m.block_param(b, ViTModel::kFc1W), m.block_param(b, ViTModel::kFc1B)));
    add_inplace(x, linear(hidden, m.block_param(b, ViTModel::kFc2W), m.block_param(b, ViTModel::kFc2B)));
}

inline Tensor embed(const ViTModel& m, const Image& image)
{
    const auto& c = m.config();
    const Tensor patches = linear(patchify(image, c), m.patch_weight(), m.patch_bias());
    Tensor x({c.num_tokens(), c.dim});
    const std::size_t off = c.use_cls ? 1 : 0;
    if (c.use_cls)
        std::copy(m.cls_token().data().begin(), m.cls_token().data().end(), x.row(0).begin());
    for (std::size_t t = 0; t < c.num_patches(); ++t)
        std::copy(patches.row(t).begin(), patches.row(t).end(), x.row(t + off).begin());
    add_inplace(x, m.pos_embed());
    return x;
}

// Runs blocks (from, to] on the full token sequence; the final norm belongs to layer L.
inline void run_layers(const ViTModel& m, Tensor& x, std::size_t from, std::size_t to)
{
    for (std::size_t b = from; b < to; ++b) run_block(m, b, x);
    if (to == m.depth() && from < to) x = layer_norm(x, m.norm_weight(), m.norm_bias());
}

inline FeatureMap to_feature_map(const ViTConfig& c, const Tensor& x, std::size_t layer)
{
    FeatureMap f;
    f.layer = layer;
    const std::size_t off = c.use_cls ? 1 : 0;
    std::vector<float> spatial(x.data().begin() + static_cast<std::ptrdiff_t>(off * c.dim), x.data().end());
    f.data = Tensor({c.grid_h(), c.grid_w(), c.dim}, std::move(spatial));
    if (c.use_cls) f.cls = Tensor({c.dim}, std::vector<float>(x.row(0).begin(), x.row(0).end()));
    return f;
}

inline Tensor from_feature_map(const ViTConfig& c, const FeatureMap& f)
{
    if (f.data.shape() != Shape{c.grid_h(), c.grid_w(), c.dim})
        throw DimensionError("feature map shape " + shape_string(f.data.shape()) + " does not match model grid " +
                             shape_string({c.grid_h(), c.grid_w(), c.dim}));
    Tensor x({c.num_tokens(), c.dim});
    std::size_t off = 0;
    if (c.use_cls) {
        if (!f.cls || f.cls->size() != c.dim) throw DimensionError("feature map lacks a CLS vector of size dim");
        std::copy(f.cls->data().begin(), f.cls->data().end(), x.row(0).begin());
        off = c.dim;
    }
    std::copy(f.data.data().begin(), f.data.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(off));
    return x;
}

inline void check_layer(const ViTModel& m, std::size_t layer)
{
    if (layer > m.depth())
        throw LayerError("layer " + std::to_string(layer) + " out of range [0, " + std::to_string(m.depth()) + "]");
}

} // namespace detail

// Layer 0 is the embedding (patch projection + positional table); layer k is
// the output of block k, and layer L additionally includes the final norm.
inline FeatureMap forward_to_layer(const ViTModel& model, const Image& image, std::size_t layer)
{
    detail::check_layer(model, layer);
    Tensor x = detail::embed(model, image);
    detail::run_layers(model, x, 0, layer);
    return detail::to_feature_map(model.config(), x, layer);
}

// Resumes the forward pass from tokens tapped (or injected) at fmap.layer.
inline ModelOutput forward_from_layer(const ViTModel& model, const FeatureMap& fmap, std::size_t layer)
{
    detail::check_layer(model, layer);
    if (fmap.layer != layer)
        throw LayerError("feature map is tapped at layer " + std::to_string(fmap.layer) + ", not " +
                         std::to_string(layer));
    Tensor x = detail::from_feature_map(model.config(), fmap);
    detail::run_layers(model, x, layer, model.depth());
    return detail::to_feature_map(model.config(), x, model.depth());
}

inline ModelOutput forward(const ViTModel& model, const Image& image)
{
    return forward_to_layer(model, image, model.depth());
}

} // namespace srt
