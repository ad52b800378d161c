#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "cvid/inference.hpp"
#include "cvid/rain_synth.hpp"
#include "test_util.hpp"

using namespace cvid;
using cvid::test::random_image;
using cvid::test::TempDir;

namespace {

CvidModel<double> small_model(std::uint64_t seed) {
    auto m = CvidModel<double>::initialized(cvid::test::mini_config(), seed);
    cvid::test::randomize(m, seed + 1);
    return m;
}

InferenceConfig config(int n, std::uint64_t seed, bool intermediates = false) {
    InferenceConfig c;
    c.n_samples = n;
    c.seed = seed;
    c.emit_intermediates = intermediates;
    return c;
}

}  // namespace

TEST(Derain, SingleSampleMatchesChannelwiseForward) {
    const auto model = small_model(1);
    const ImageTensor x = random_image(10, 9, 3, 2);
    const DerainResult r = derain(x, model, config(1, 42, true));
    const auto ref = derain_channelwise_forward(x, std::nullopt, model, Mode::Infer, 42);
    ASSERT_EQ(r.intermediates.size(), 1u);
    for (std::size_t k = 0; k < x.size(); ++k) {
        EXPECT_NEAR(r.yhat.data()[k], ref.yhat.data()[k], 1e-12);
        EXPECT_EQ(r.yhat.data()[k], r.intermediates[0].data()[k]);
    }
}

TEST(Derain, OutputShapeAndRange) {
    const auto model = CvidModel<float>::initialized(NetworkConfig{}, 3);
    const ImageTensor x = random_image(13, 17, 3, 4);
    const DerainResult r = derain(x, model, config(5, 1));
    ASSERT_TRUE(r.yhat.same_shape(x));
    for (double v : r.yhat.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_TRUE(r.intermediates.empty());
}

TEST(Derain, CollapsedPriorMakesSamplesAgree) {
    const auto model = small_model(5);
    const ImageTensor x = random_image(8, 8, 3, 6);
    InferenceConfig cfg = config(10, 7, true);
    cfg.prior_hook = [](int, GaussianLatent& g) {
        for (double& s : g.sigma.data()) s = 1e-12;
    };
    const DerainResult r = derain(x, model, cfg);
    ASSERT_EQ(r.intermediates.size(), 10u);
    for (const auto& s : r.intermediates)
        for (std::size_t k = 0; k < x.size(); ++k) ASSERT_NEAR(s.data()[k], r.yhat.data()[k], 1e-9);
}

TEST(Derain, MeanOfIntermediatesIsOutput) {
    const auto model = small_model(8);
    const ImageTensor x = random_image(8, 8, 3, 9);
    const DerainResult r = derain(x, model, config(7, 3, true));
    ASSERT_EQ(r.intermediates.size(), 7u);
    for (std::size_t k = 0; k < x.size(); ++k) {
        double s = 0;
        for (const auto& m : r.intermediates) s += m.data()[k];
        EXPECT_NEAR(r.yhat.data()[k], s / 7.0, 1e-12);
    }
}

TEST(Derain, ChunkSizeDoesNotChangeResult) {
    const auto model = small_model(10);
    const ImageTensor x = random_image(8, 8, 3, 11);
    InferenceConfig a = config(9, 4), b = config(9, 4);
    a.chunk = 1;
    b.chunk = 16;
    EXPECT_EQ(derain(x, model, a).yhat, derain(x, model, b).yhat);
}

TEST(Derain, VarianceShrinksAsOneOverN) {
    const auto model = small_model(12);
    const ImageTensor x = random_image(6, 6, 3, 13);
    const int trials = 50, n = 10;
    auto pixel_variance = [&](int samples) {
        std::vector<double> sum(x.size(), 0.0), sq(x.size(), 0.0);
        for (int t = 0; t < trials; ++t) {
            const ImageTensor y = derain(x, model, config(samples, 1000 + t * 7919 + samples)).yhat;
            for (std::size_t k = 0; k < y.size(); ++k) {
                sum[k] += y.data()[k];
                sq[k] += y.data()[k] * y.data()[k];
            }
        }
        double total = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double m = sum[k] / trials;
            total += (sq[k] - trials * m * m) / (trials - 1);
        }
        return total / static_cast<double>(x.size());
    };
    const double v1 = pixel_variance(1), vn = pixel_variance(n);
    ASSERT_GT(v1, 0.0);
    const double ratio = vn / v1;
    EXPECT_GT(ratio, (1.0 / n) / 1.5);
    EXPECT_LT(ratio, (1.0 / n) * 1.5);
}

TEST(Derain, EncoderNotUsed) {
    auto model = small_model(14);
    const ImageTensor x = random_image(8, 8, 3, 15);
    const ImageTensor before = derain(x, model, config(4, 2)).yhat;
    model.visit_params([](const std::string& name, Param<double>& p) {
        if (name.find("/encoder/") != std::string::npos)
            for (double& v : p.value) v = std::numeric_limits<double>::quiet_NaN();
    });
    EXPECT_EQ(derain(x, model, config(4, 2)).yhat, before);
}

TEST(Derain, InvalidConfig) {
    const auto model = small_model(1);
    EXPECT_THROW(derain(random_image(4, 4, 3, 1), model, config(0, 1)), ConfigError);
    EXPECT_THROW(derain(random_image(4, 4, 1, 1), model, config(1, 1)), ArityError);
}

TEST(DerainBatch, EmptyDirectory) {
    TempDir dir("inf");
    std::filesystem::create_directories(dir / "in");
    const auto model = small_model(1);
    const BatchResult r = derain_batch(dir / "in", model, config(2, 1), dir / "out");
    EXPECT_TRUE(r.outputs.empty());
    EXPECT_TRUE(r.errors.empty());
    EXPECT_FALSE(r.report.has_value());
}

TEST(DerainBatch, DirectoryOfImagesAndDeterminism) {
    TempDir dir("inf");
    std::filesystem::create_directories(dir / "in");
    for (int k = 0; k < 5; ++k) save_image(random_image(9, 11, 3, k), dir / "in" / ("im" + std::to_string(k) + ".png"));
    const auto model = small_model(2);
    const BatchResult a = derain_batch(dir / "in", model, config(3, 8, true), dir / "a");
    const BatchResult b = derain_batch(dir / "in", model, config(3, 8), dir / "b");
    ASSERT_EQ(a.outputs.size(), 5u);
    EXPECT_TRUE(a.errors.empty());
    for (int k = 0; k < 5; ++k) {
        const std::string f = "im" + std::to_string(k) + ".png";
        const ImageTensor out = load_image(dir / "a" / f);
        EXPECT_EQ(out.height(), 9);
        EXPECT_EQ(out.width(), 11);
        EXPECT_EQ(cvid::test::read_bytes(dir / "a" / f), cvid::test::read_bytes(dir / "b" / f));
        for (int s = 1; s <= 3; ++s) {
            char name[64];
            std::snprintf(name, sizeof name, "im%d_s%04d.png", k, s);
            EXPECT_TRUE(std::filesystem::exists(dir / "a" / "intermediates" / name)) << name;
        }
    }
}

TEST(DerainBatch, CorruptFileRecordedAndSkipped) {
    TempDir dir("inf");
    std::filesystem::create_directories(dir / "in");
    save_image(random_image(8, 8, 3, 1), dir / "in" / "a.png");
    std::ofstream(dir / "in" / "b.png") << "garbage";
    save_image(random_image(8, 8, 3, 2), dir / "in" / "c.png");
    const auto model = small_model(3);
    const BatchResult r = derain_batch(dir / "in", model, config(2, 1), dir / "out");
    EXPECT_EQ(r.outputs.size(), 2u);
    ASSERT_EQ(r.errors.size(), 1u);
    EXPECT_NE(r.errors[0].path.find("b.png"), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "c.png"));
}

TEST(DerainBatch, ManifestInputProducesReport) {
    TempDir dir("inf");
    std::filesystem::create_directories(dir / "src");
    save_image(generate_scene(32, 32, 1), dir / "src" / "s.png");
    build_dataset(dir / "src", RainParams{}, 3, 16, dir / "ds");
    const auto model = small_model(4);
    const BatchResult r = derain_batch(dir / "ds" / "manifest.json", model, config(2, 1), dir / "out");
    ASSERT_TRUE(r.report.has_value());
    ASSERT_EQ(r.report->rows.size(), 3u);
    for (const auto& row : r.report->rows) {
        EXPECT_GT(row.psnr, 0.0);
        EXPECT_EQ(row.ced.size(), 3u);
    }
}
