#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"

namespace {

using Matrix = std::vector<std::vector<double>>;

// Cyclic Jacobi eigenvalue solver for a small symmetric matrix; eigenvalues descending.
std::vector<double> jacobi_eigenvalues(Matrix a)
{
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
    std::sort(ev.rbegin(), ev.rend());
    return ev;
}

// Population covariance of the valid pixels, weights ignored (all 1 here).
Matrix covariance(const srt::DenseField& f)
{
    const std::size_t c = f.channels(), n = f.height() * f.width();
    std::vector<double> mean(c, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < c; ++k) mean[k] += f.data[p * c + k] / static_cast<double>(n);
    Matrix cov(c, std::vector<double>(c, 0.0));
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j)
                cov[i][j] += (f.data[p * c + i] - mean[i]) * (f.data[p * c + j] - mean[j]) / static_cast<double>(n);
    return cov;
}

srt::DenseField random_mixed_field(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed)
{
    srt::SplitMix64 rng(seed);
    Matrix mix(c, std::vector<double>(c));
    for (auto& row : mix)
        for (double& v : row) v = rng.uniform(-1, 1);
    srt::DenseField f(h, w, c);
    std::vector<double> z(c);
    for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t k = 0; k < c; ++k) z[k] = rng.normal() * (1.0 + static_cast<double>(c - k));
        for (std::size_t i = 0; i < c; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < c; ++k) s += mix[i][k] * z[k];
            f.data[p * c + i] = static_cast<float>(s);
        }
        f.weight[p] = 1.0f;
    }
    return f;
}

// Orthonormal 3-frame in R^c by Gram-Schmidt on random vectors.
Matrix random_frame(std::size_t c, std::uint64_t seed)
{
    srt::SplitMix64 rng(seed);
    Matrix b(3, std::vector<double>(c));
    for (std::size_t k = 0; k < 3; ++k) {
        for (double& v : b[k]) v = rng.uniform(-1, 1);
        for (std::size_t j = 0; j < k; ++j) {
            double dot = 0.0;
            for (std::size_t i = 0; i < c; ++i) dot += b[k][i] * b[j][i];
            for (std::size_t i = 0; i < c; ++i) b[k][i] -= dot * b[j][i];
        }
        double n = 0.0;
        for (double v : b[k]) n += v * v;
        for (double& v : b[k]) v /= std::sqrt(n);
    }
    return b;
}

srt::DenseField subspace_field(const Matrix& frame, std::size_t rank, std::uint64_t seed)
{
    const std::size_t c = frame[0].size();
    srt::DenseField f(16, 16, c);
    srt::SplitMix64 rng(seed);
    for (std::size_t p = 0; p < 256; ++p) {
        for (std::size_t i = 0; i < c; ++i) f.data[p * c + i] = 0.25f;
        for (std::size_t k = 0; k < rank; ++k) {
            const double z = rng.uniform(-1, 1) * (3.0 - static_cast<double>(k));
            for (std::size_t i = 0; i < c; ++i) f.data[p * c + i] += static_cast<float>(z * frame[k][i]);
        }
        f.weight[p] = 1.0f;
    }
    return f;
}

} // namespace

TEST(FitPca, RecoversKnownSubspace)
{
    const auto frame = random_frame(8, 3);
    const auto f = subspace_field(frame, 3, 4);
    const auto basis = srt::fit_pca(f);
    for (const auto& comp : basis.components) {
        std::vector<double> resid = comp;
        for (const auto& b : frame) {
            double dot = 0.0;
            for (std::size_t i = 0; i < 8; ++i) dot += comp[i] * b[i];
            for (std::size_t i = 0; i < 8; ++i) resid[i] -= dot * b[i];
        }
        double n = 0.0;
        for (double v : resid) n += v * v;
        EXPECT_LE(std::sqrt(n), 1e-4);
    }
}

TEST(FitPca, ConstantFieldIsDegenerate)
{
    srt::DenseField f(8, 8, 4);
    for (float& v : f.data.data()) v = 0.5f;
    for (float& w : f.weight.data()) w = 1.0f;
    try {
        (void)srt::fit_pca(f);
        FAIL() << "expected a degenerate basis";
    } catch (const srt::DegenerateBasis& e) {
        EXPECT_EQ(e.rank(), 0u);
    }
}

TEST(FitPca, RankTwoFieldReportsRank)
{
    const auto f = subspace_field(random_frame(6, 8), 2, 9);
    try {
        (void)srt::fit_pca(f);
        FAIL() << "expected a degenerate basis";
    } catch (const srt::DegenerateBasis& e) {
        EXPECT_EQ(e.rank(), 2u);
    }
}

TEST(FitPca, EigenvaluesMatchJacobiOracle)
{
    for (std::size_t c : {3u, 5u, 8u})
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const auto f = random_mixed_field(12, 12, c, seed + 100 * c);
            const auto basis = srt::fit_pca(f);
            const auto ev = jacobi_eigenvalues(covariance(f));
            double trace = 0.0;
            for (double v : ev) trace += v;
            for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(basis.eigenvalues[k], ev[k], 1e-5 * std::max(1.0, ev[0]));
            EXPECT_NEAR(basis.total_variance, trace, 1e-6 * trace);
            EXPECT_NEAR(basis.explained_fraction(), (ev[0] + ev[1] + ev[2]) / trace, 1e-4);
        }
}

TEST(FitPca, BasisInvariants)
{
    const auto f = random_mixed_field(16, 16, 8, 42);
    const auto basis = srt::fit_pca(f);
    for (std::size_t a = 0; a < 3; ++a) {
        double n = 0.0;
        for (double v : basis.components[a]) n += v * v;
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
        for (std::size_t b = a + 1; b < 3; ++b) {
            double dot = 0.0;
            for (std::size_t i = 0; i < 8; ++i) dot += basis.components[a][i] * basis.components[b][i];
            EXPECT_LE(std::abs(dot), 1e-4);
        }
        const auto& comp = basis.components[a];
        const auto arg = std::max_element(comp.begin(), comp.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
        EXPECT_GT(*arg, 0.0);
    }
    EXPECT_GE(basis.eigenvalues[0], basis.eigenvalues[1]);
    EXPECT_GE(basis.eigenvalues[1], basis.eigenvalues[2]);
    EXPECT_GE(basis.eigenvalues[2], 0.0);
}

TEST(FitPca, Deterministic)
{
    const auto f = random_mixed_field(16, 16, 8, 5);
    const auto a = srt::fit_pca(f), b = srt::fit_pca(f);
    EXPECT_EQ(a.components, b.components);
    EXPECT_EQ(a.eigenvalues, b.eigenvalues);
}

TEST(FitPca, JointFitOfCopiesMatchesSingle)
{
    const auto f = random_mixed_field(10, 10, 5, 6);
    const auto a = srt::fit_pca(f);
    const auto b = srt::fit_pca({std::cref(f), std::cref(f)});
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(a.eigenvalues[k], b.eigenvalues[k], 1e-9 * a.eigenvalues[0]);
        for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(a.components[k][i], b.components[k][i], 1e-6);
    }
}

TEST(FitPca, IgnoresInvalidPixels)
{
    auto f = random_mixed_field(10, 10, 4, 7);
    const auto before = srt::fit_pca(f);
    for (std::size_t k = 0; k < 4; ++k) f.data[k] = 1e6f;
    f.weight[0] = 0.0f;
    auto g = random_mixed_field(10, 10, 4, 7);
    g.weight[0] = 0.0f;
    const auto a = srt::fit_pca(f), b = srt::fit_pca(g);
    EXPECT_EQ(a.eigenvalues, b.eigenvalues);
    EXPECT_NE(a.eigenvalues, before.eigenvalues);

    srt::DenseField few(2, 2, 3);
    few.weight[0] = few.weight[1] = few.weight[2] = 1.0f;
    EXPECT_THROW(srt::fit_pca(few), srt::DimensionError);
}

TEST(RenderPca, FlatProjectionsRenderGray)
{
    auto f = random_mixed_field(8, 8, 4, 8);
    const auto basis = srt::fit_pca(f);
    for (std::size_t p = 0; p < 64; ++p)
        for (std::size_t k = 0; k < 4; ++k) f.data[p * 4 + k] = f.data[k];
    const auto img = srt::render_pca(f, basis);
    for (float v : img.data()) EXPECT_EQ(v, 0.5f);
}

TEST(RenderPca, TwoClustersSeparate)
{
    srt::DenseField f(16, 16, 6);
    srt::SplitMix64 rng(9);
    for (std::size_t p = 0; p < 256; ++p) {
        const float base = p % 2 == 0 ? 1.0f : -1.0f;
        for (std::size_t k = 0; k < 6; ++k)
            f.data[p * 6 + k] = base * static_cast<float>(k + 1) / 6.0f + static_cast<float>(rng.uniform(-0.05, 0.05));
        f.weight[p] = 1.0f;
    }
    const auto img = srt::render_pca(f, srt::fit_pca(f));
    double even = 0.0, odd = 0.0;
    for (std::size_t p = 0; p < 256; ++p) (p % 2 == 0 ? even : odd) += img.data()[p * 3] / 128.0;
    EXPECT_GE(std::abs(even - odd), 0.5);
    for (float v : img.data()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(RenderPca, InvariantToPositiveScaling)
{
    const auto f = random_mixed_field(12, 12, 6, 10);
    auto g = f;
    for (float& v : g.data.data()) v *= 3.5f;
    const auto a = srt::render_pca(f, srt::fit_pca(f));
    const auto b = srt::render_pca(g, srt::fit_pca(g));
    EXPECT_LE(srt::max_abs_diff(a.data(), b.data()), 1e-5f);
}

TEST(RenderPca, InvalidPixelsGray)
{
    auto f = random_mixed_field(8, 8, 4, 11);
    f.weight[5] = 0.0f;
    const auto img = srt::render_pca(f, srt::fit_pca(f));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(img.data()[5 * 3 + k], 0.5f);
}

TEST(RenderScalar, ConstantMapIsGray)
{
    const auto img = srt::render_scalar(srt::Tensor({3, 4}, 2.0f), 1.0);
    EXPECT_EQ(img.channels(), 1u);
    for (float v : img.data()) EXPECT_EQ(v, 0.5f);
}

TEST(RenderScalar, TwoValuesAnyGamma)
{
    for (double gamma : {0.3, 1.0, 2.2}) {
        const auto img = srt::render_scalar(srt::Tensor({1, 2}, {0.0f, 1.0f}), gamma);
        EXPECT_EQ(img.data()[0], 0.0f);
        EXPECT_EQ(img.data()[1], 1.0f);
    }
}

TEST(RenderScalar, GammaCurve)
{
    const auto img = srt::render_scalar(srt::Tensor({1, 3}, {0.0f, 0.25f, 1.0f}), 0.5);
    EXPECT_NEAR(img.data()[1], 0.5f, 1e-7);
    EXPECT_THROW(srt::render_scalar(srt::Tensor({1, 3}), 0.0), srt::DimensionError);
}

TEST(RenderPca, ToyModelFieldEndToEnd)
{
    const auto c = srt_test::small_config();
    const auto m = srt::make_toy_model(1, c);
    const auto field = srt::srt_dense(m, srt_test::random_image(c, 1), c.depth, srt::build_grid(2));
    const auto basis = srt::fit_pca(field);
    EXPECT_GT(basis.explained_fraction(), 0.0);
    EXPECT_LE(basis.explained_fraction(), 1.0 + 1e-9);
    const auto img = srt::render_pca(field, basis);
    EXPECT_EQ(srt::encode_pnm(img), srt::encode_pnm(srt::render_pca(field, srt::fit_pca(field))));
}
