#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"

namespace {

using Mat = std::vector<std::vector<double>>;

// Straight-line double-precision ViT forward used as an oracle. Reads the
// parameters by name and shares no code with the library's kernels.
struct RefVit {
    const srt::ViTModel& m;

    std::vector<double> vec(const std::string& name) const
    {
        const auto& t = m.param(name);
        return {t.data().begin(), t.data().end()};
    }

    Mat lin(const Mat& x, const std::string& prefix) const
    {
        const auto& w = m.param(prefix + ".weight");
        const auto b = vec(prefix + ".bias");
        const std::size_t out = w.dim(0), in = w.dim(1);
        Mat y(x.size(), std::vector<double>(out));
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t o = 0; o < out; ++o) {
                double s = b[o];
                for (std::size_t k = 0; k < in; ++k) s += x[i][k] * w.at(o, k);
                y[i][o] = s;
            }
        return y;
    }

    Mat ln(const Mat& x, const std::string& prefix) const
    {
        const auto g = vec(prefix + ".weight"), b = vec(prefix + ".bias");
        Mat y = x;
        for (auto& row : y) {
            double mean = 0.0, var = 0.0;
            for (double v : row) mean += v;
            mean /= static_cast<double>(row.size());
            for (double v : row) var += (v - mean) * (v - mean);
            var /= static_cast<double>(row.size());
            for (std::size_t k = 0; k < row.size(); ++k) row[k] = (row[k] - mean) / std::sqrt(var + 1e-6) * g[k] + b[k];
        }
        return y;
    }

    Mat embed(const srt::Image& img) const
    {
        const auto& c = m.config();
        Mat patches;
        for (std::size_t pi = 0; pi < c.grid_h(); ++pi)
            for (std::size_t pj = 0; pj < c.grid_w(); ++pj) {
                std::vector<double> p;
                for (std::size_t u = 0; u < c.patch_h; ++u)
                    for (std::size_t v = 0; v < c.patch_w; ++v)
                        for (std::size_t k = 0; k < c.in_chans; ++k) p.push_back(img(pi * c.patch_h + u, pj * c.patch_w + v, k));
                patches.push_back(p);
            }
        Mat x = lin(patches, "patch_embed");
        if (c.use_cls) x.insert(x.begin(), vec("cls_token"));
        const auto& pos = m.param("pos_embed");
        for (std::size_t t = 0; t < x.size(); ++t)
            for (std::size_t k = 0; k < c.dim; ++k) x[t][k] += pos.at(t, k);
        return x;
    }

    void block(Mat& x, std::size_t b) const
    {
        const auto& c = m.config();
        const std::string p = "blocks." + std::to_string(b) + ".";
        const Mat qkv = lin(ln(x, p + "norm1"), p + "attn.qkv");
        const std::size_t n = x.size(), d = c.dim, hd = c.head_dim();
        Mat heads(n, std::vector<double>(d));
        for (std::size_t h = 0; h < c.heads; ++h)
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> s(n);
                double mx = -1e300;
                for (std::size_t j = 0; j < n; ++j) {
                    for (std::size_t e = 0; e < hd; ++e) s[j] += qkv[i][h * hd + e] * qkv[j][d + h * hd + e];
                    s[j] /= std::sqrt(static_cast<double>(hd));
                    mx = std::max(mx, s[j]);
                }
                double z = 0.0;
                for (double& v : s) z += (v = std::exp(v - mx));
                for (std::size_t e = 0; e < hd; ++e) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * qkv[j][2 * d + h * hd + e];
                    heads[i][h * hd + e] = acc;
                }
            }
        const Mat a = lin(heads, p + "attn.proj");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < d; ++k) x[i][k] += a[i][k];
        Mat hid = lin(ln(x, p + "norm2"), p + "mlp.fc1");
        for (auto& row : hid)
            for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        const Mat o = lin(hid, p + "mlp.fc2");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < d; ++k) x[i][k] += o[i][k];
    }

    Mat forward(const srt::Image& img, std::size_t layer) const
    {
        Mat x = embed(img);
        for (std::size_t b = 0; b < layer; ++b) block(x, b);
        if (layer == m.depth()) x = ln(x, "norm");
        return x;
    }
};

srt::ViTConfig micro_config()
{
    srt::ViTConfig c;
    c.img_h = c.img_w = 2;
    c.patch_h = c.patch_w = 1;
    c.dim = 2;
    c.depth = 1;
    c.heads = 1;
    c.in_chans = 1;
    return c;
}

// Copy of `m` with every parameter scaled, so activations leave the near-linear regime.
srt::ViTModel scaled(const srt::ViTModel& m, float factor)
{
    auto out = m;
    for (const auto& name : m.parameter_names()) {
        if (name.find("norm") != std::string::npos) continue;
        for (float& v : out.param(name).data()) v *= factor;
    }
    return out;
}

} // namespace

TEST(Config, Validation)
{
    auto c = srt_test::toy_config();
    EXPECT_NO_THROW(c.validate());
    c.img_h = 60;
    EXPECT_THROW(c.validate(), srt::DimensionError);
    c = srt_test::toy_config();
    c.heads = 5;
    EXPECT_THROW(c.validate(), srt::DimensionError);
    c = srt_test::toy_config();
    c.depth = 0;
    EXPECT_THROW(c.validate(), srt::DimensionError);
}

TEST(Patchify, OnePixelPatches)
{
    auto c = micro_config();
    c.in_chans = 3;
    srt::Image img(2, 2, 3);
    for (std::size_t i = 0; i < img.data().size(); ++i) img.data()[i] = static_cast<float>(i) / 12.0f;
    const auto p = srt::patchify(img, c);
    ASSERT_EQ(p.shape(), (srt::Shape{4, 3}));
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(p.at(t, k), img(t / 2, t % 2, k));
}

TEST(Patchify, ConstantImageRowsIdentical)
{
    const auto c = srt_test::toy_config();
    const auto p = srt::patchify(srt::synthetic::constant_image(64, 64, 3, 0.25f), c);
    for (std::size_t t = 1; t < p.dim(0); ++t)
        for (std::size_t k = 0; k < p.dim(1); ++k) ASSERT_EQ(p.at(t, k), p.at(0, k));
}

TEST(Patchify, RampHandEnumerated)
{
    srt::ViTConfig c;
    c.img_h = c.img_w = 4;
    c.patch_h = c.patch_w = 2;
    c.dim = 2;
    c.heads = 1;
    c.in_chans = 1;
    srt::Image img(4, 4, 1);
    for (std::size_t i = 0; i < 16; ++i) img.data()[i] = static_cast<float>(i) / 16.0f;
    const auto p = srt::patchify(img, c);
    // Pixel indices of the four 2x2 patches in raster order.
    const int expect[4][4] = {{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}};
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p.at(t, k), static_cast<float>(expect[t][k]) / 16.0f);
}

TEST(Patchify, DimensionMismatch)
{
    EXPECT_THROW(srt::patchify(srt::Image(32, 64, 3), srt_test::toy_config()), srt::DimensionError);
    EXPECT_THROW(srt::patchify(srt::Image(64, 64, 1), srt_test::toy_config()), srt::DimensionError);
}

TEST(Forward, MicroModelMatchesReference)
{
    for (bool cls : {false, true}) {
        auto c = micro_config();
        c.use_cls = cls;
        const auto m = scaled(srt::make_toy_model(17, c), 20.0f);
        srt::Image img(2, 2, 1);
        img.data()[0] = 0.1f;
        img.data()[1] = 0.9f;
        img.data()[2] = 0.4f;
        img.data()[3] = 0.7f;
        const RefVit ref{m};
        for (std::size_t layer = 0; layer <= 1; ++layer) {
            const auto f = srt::forward_to_layer(m, img, layer);
            const auto x = ref.forward(img, layer);
            const std::size_t off = cls ? 1 : 0;
            for (std::size_t t = 0; t < 4; ++t)
                for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(f.data[t * 2 + k], x[t + off][k], 1e-5);
            if (cls) {
                for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR((*f.cls)[k], x[0][k], 1e-5);
            }
        }
    }
}

TEST(Forward, ToyModelMatchesReference)
{
    auto c = srt_test::small_config();
    c.img_h = c.img_w = 16;
    c.patch_h = c.patch_w = 4;
    const auto m = scaled(srt::make_toy_model(23, c), 8.0f);
    const auto img = srt_test::random_image(c, 3);
    const RefVit ref{m};
    for (std::size_t layer = 0; layer <= c.depth; ++layer) {
        const auto f = srt::forward_to_layer(m, img, layer);
        const auto x = ref.forward(img, layer);
        for (std::size_t t = 0; t < c.num_patches(); ++t)
            for (std::size_t k = 0; k < c.dim; ++k) ASSERT_NEAR(f.data[t * c.dim + k], x[t + 1][k], 1e-5);
    }
}

TEST(Forward, ZeroBlocksAreResidualIdentity)
{
    auto c = srt_test::small_config();
    auto m = srt::make_toy_model(2, c);
    for (const auto& name : m.parameter_names())
        if (name.starts_with("blocks.0.attn") || name.starts_with("blocks.0.mlp"))
            for (float& v : m.param(name).data()) v = 0.0f;
    const auto img = srt_test::random_image(c, 9);
    const auto f0 = srt::forward_to_layer(m, img, 0);
    const auto f1 = srt::forward_to_layer(m, img, 1);
    EXPECT_EQ(f1.data, f0.data);
    EXPECT_EQ(f1.cls, f0.cls);
}

TEST(Forward, Deterministic)
{
    const auto m = srt::make_toy_model(4, srt_test::toy_config());
    const auto img = srt_test::random_image(srt_test::toy_config(), 4);
    EXPECT_EQ(srt::forward(m, img), srt::forward(m, srt::Image(img)));
}

TEST(Forward, ShapeIndependentOfLayer)
{
    const auto c = srt_test::toy_config();
    const auto m = srt::make_toy_model(6, c);
    const auto img = srt_test::random_image(c, 6);
    for (std::size_t l = 0; l <= c.depth; ++l) {
        const auto f = srt::forward_to_layer(m, img, l);
        EXPECT_EQ(f.data.shape(), (srt::Shape{8, 8, 32}));
        EXPECT_EQ(f.layer, l);
        ASSERT_TRUE(f.cls.has_value());
    }
}

TEST(Forward, LayerOutOfRange)
{
    const auto c = srt_test::toy_config();
    const auto m = srt::make_toy_model(6, c);
    EXPECT_THROW(srt::forward_to_layer(m, srt_test::random_image(c, 1), 3), srt::LayerError);
}

TEST(ForwardFromLayer, LastLayerIsIdentity)
{
    const auto c = srt_test::toy_config();
    const auto m = srt::make_toy_model(7, c);
    const auto f = srt::forward(m, srt_test::random_image(c, 7));
    EXPECT_EQ(srt::forward_from_layer(m, f, c.depth), f);
}

TEST(ForwardFromLayer, CompositionBitExact)
{
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto c = srt_test::toy_config();
        c.depth = 3;
        c.use_cls = seed != 1;
        const auto m = srt::make_toy_model(seed, c);
        const auto img = srt_test::random_image(c, seed + 10);
        const auto full = srt::forward(m, img);
        for (std::size_t l = 0; l <= c.depth; ++l)
            EXPECT_EQ(srt::forward_from_layer(m, srt::forward_to_layer(m, img, l), l), full) << "layer " << l;
    }
}

TEST(ForwardFromLayer, Errors)
{
    const auto c = srt_test::toy_config();
    const auto m = srt::make_toy_model(8, c);
    auto f = srt::forward_to_layer(m, srt_test::random_image(c, 8), 1);
    EXPECT_THROW(srt::forward_from_layer(m, f, 0), srt::LayerError);
    EXPECT_THROW(srt::forward_from_layer(m, f, 5), srt::LayerError);
    auto bad = f;
    bad.data = srt::Tensor({4, 8, 32});
    EXPECT_THROW(srt::forward_from_layer(m, bad, 1), srt::DimensionError);
    bad = f;
    bad.cls.reset();
    EXPECT_THROW(srt::forward_from_layer(m, bad, 1), srt::DimensionError);
}

TEST(ForwardFromLayer, ZeroModelBiasOnlyPropagation)
{
    srt::ViTConfig c;
    c.img_h = c.img_w = 4;
    c.patch_h = c.patch_w = 2;
    c.dim = 4;
    c.depth = 2;
    c.heads = 1;
    c.use_cls = false;
    auto m = srt::make_toy_model(1, c);
    for (const auto& name : m.parameter_names())
        for (float& v : m.param(name).data()) v = 0.0f;
    for (float& v : m.param("norm.weight").data()) v = 1.0f;
    for (const char* b : {"blocks.0.", "blocks.1."}) {
        m.param(std::string(b) + "attn.proj.bias")[0] = 1.0f;
        m.param(std::string(b) + "mlp.fc2.bias")[1] = 1.0f;
    }
    m.param("norm.bias")[3] = 0.5f;
    srt::FeatureMap zero{0, srt::Tensor({2, 2, 4}), std::nullopt};
    const auto out = srt::forward_from_layer(m, zero, 0);
    // Each block adds (1, 1, 0, 0): x = (2, 2, 0, 0), mean 1, variance 1.
    const double s = 1.0 / std::sqrt(1.0 + 1e-6);
    const double expect[4] = {s, s, -s, -s + 0.5};
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out.data[t * 4 + k], expect[k], 1e-6);
}

TEST(Forward, ZeroPositionalEmbeddingPermutesPatches)
{
    const auto c = srt_test::toy_config();
    const auto m = srt_test::zero_pos_model(3, c);
    const auto img = srt_test::random_image(c, 21);
    srt::Image swapped = img;
    // Swap token (1, 2) and token (5, 6).
    for (std::size_t u = 0; u < 8; ++u)
        for (std::size_t v = 0; v < 8; ++v)
            for (std::size_t k = 0; k < 3; ++k) {
                std::swap(swapped(8 + u, 16 + v, k), swapped(40 + u, 48 + v, k));
            }
    const auto a = srt::forward_to_layer(m, img, 0);
    const auto b = srt::forward_to_layer(m, swapped, 0);
    auto token = [](const srt::FeatureMap& f, std::size_t i, std::size_t j) {
        const auto d = f.data.data();
        return std::vector<float>(d.begin() + static_cast<std::ptrdiff_t>((i * 8 + j) * 32),
                                  d.begin() + static_cast<std::ptrdiff_t>((i * 8 + j + 1) * 32));
    };
    EXPECT_EQ(token(a, 1, 2), token(b, 5, 6));
    EXPECT_EQ(token(a, 5, 6), token(b, 1, 2));
    EXPECT_EQ(token(a, 3, 3), token(b, 3, 3));
}
