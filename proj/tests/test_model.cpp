#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cvid/model.hpp"
#include "test_util.hpp"

using namespace cvid;
using cvid::test::random_image;

namespace {

ImageTensor plane(int h, int w, std::uint64_t seed) { return random_image(h, w, 1, seed); }

}  // namespace

TEST(Encoder, ShapeAndZeroHeadGivesUnitGaussian) {
    const auto model = CvidModel<double>::initialized(NetworkConfig{}, 1);
    for (int c = 0; c < 3; ++c) {
        const auto q = encoder_forward(plane(12, 9, 1), plane(12, 9, 2), plane(12, 9, 3), model.channel(c));
        ASSERT_EQ(q.mu.height(), 12);
        ASSERT_EQ(q.mu.width(), 9);
        ASSERT_TRUE(q.mu.same_shape(q.sigma));
        for (double v : q.mu.data()) EXPECT_EQ(v, 0.0);
        for (double v : q.sigma.data()) EXPECT_EQ(v, 1.0);
    }
}

TEST(Prior, ShapeAndZeroHeadGivesUnitGaussian) {
    const auto model = CvidModel<double>::initialized(NetworkConfig{}, 1);
    const auto p = prior_forward(plane(7, 11, 1), plane(7, 11, 2), model.channel(1));
    ASSERT_EQ(p.mu.height(), 7);
    ASSERT_EQ(p.sigma.width(), 11);
    for (double v : p.mu.data()) EXPECT_EQ(v, 0.0);
    for (double v : p.sigma.data()) EXPECT_EQ(v, 1.0);
}

TEST(EncoderPrior, SigmaStrictlyPositiveForRandomWeights) {
    auto model = CvidModel<double>::initialized(cvid::test::mini_config(), 2);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::uint64_t s = 1000 + static_cast<std::uint64_t>(trial);
        if (trial % 100 == 0) cvid::test::randomize(model, s, 1.0);
        const auto x = plane(4, 4, s), y = plane(4, 4, s + 7), d = plane(4, 4, s + 13);
        const auto q = encoder_forward(x, y, d, model.channel(trial % 3));
        const auto p = prior_forward(x, d, model.channel(trial % 3));
        for (double v : q.sigma.data()) ASSERT_GT(v, 0.0);
        for (double v : p.sigma.data()) ASSERT_GT(v, 0.0);
    }
}

TEST(EncoderPrior, EncoderHasOneExtraInputPlane) {
    const NetworkConfig cfg;
    CvidModel<float> model(cfg);
    const auto& s = model.channel(0);
    EXPECT_EQ(s.encoder.first_conv().in_channels(), 3);
    EXPECT_EQ(s.prior.first_conv().in_channels(), 2);
    EXPECT_EQ(s.encoder.parameter_count() - s.prior.parameter_count(),
              static_cast<std::size_t>(cfg.filters * cfg.kernel * cfg.kernel));
}

TEST(EncoderPrior, Deterministic) {
    auto model = CvidModel<double>::initialized(cvid::test::mini_config(), 3);
    cvid::test::randomize(model, 4);
    const auto x = plane(6, 6, 1), y = plane(6, 6, 2), d = plane(6, 6, 3);
    const auto a = encoder_forward(x, y, d, model.channel(2));
    const auto b = encoder_forward(x, y, d, model.channel(2));
    EXPECT_EQ(a.mu, b.mu);
    EXPECT_EQ(a.sigma, b.sigma);
}

TEST(EncoderPrior, MismatchedPlanesRejected) {
    const auto model = CvidModel<double>::initialized(cvid::test::mini_config(), 3);
    EXPECT_THROW(encoder_forward(plane(4, 4, 1), plane(4, 5, 2), plane(4, 4, 3), model.channel(0)), ArityError);
    EXPECT_THROW(prior_forward(random_image(4, 4, 3, 1), plane(4, 4, 3), model.channel(0)), ArityError);
}

TEST(Reparameterize, TinySigmaReturnsMean) {
    GaussianLatent g{plane(8, 8, 5), ImageTensor(8, 8, 1, 1e-12)};
    const ImageTensor z = reparameterize(g, 9);
    for (std::size_t k = 0; k < z.size(); ++k) EXPECT_NEAR(z.data()[k], g.mu.data()[k], 1e-10);
}

TEST(Reparameterize, SampleMomentsMatchLatent) {
    GaussianLatent g{ImageTensor(100, 1000, 1, 0.3), ImageTensor(100, 1000, 1, 0.7)};
    const ImageTensor z = reparameterize(g, 123);
    double sum = 0.0, sq = 0.0;
    for (double v : z.data()) sum += v;
    const double mean = sum / static_cast<double>(z.size());
    for (double v : z.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(z.size() - 1));
    EXPECT_NEAR(mean, 0.3, 0.01);
    EXPECT_NEAR(sd, 0.7, 0.01);
}

TEST(Reparameterize, DeterministicPerSeed) {
    GaussianLatent g{plane(5, 5, 1), ImageTensor(5, 5, 1, 0.5)};
    EXPECT_EQ(reparameterize(g, 4), reparameterize(g, 4));
    EXPECT_NE(reparameterize(g, 4), reparameterize(g, 5));
    GaussianLatent bad{plane(5, 5, 1), ImageTensor(5, 4, 1, 0.5)};
    EXPECT_THROW(reparameterize(bad, 1), ArityError);
}

TEST(Decoder, OutputInUnitRangeAndDependsOnLatent) {
    const auto model = CvidModel<double>::initialized(NetworkConfig{}, 7);
    const auto x = plane(10, 10, 1), d = plane(10, 10, 2);
    const ImageTensor z1 = reparameterize({ImageTensor(10, 10, 1), ImageTensor(10, 10, 1, 1.0)}, 1);
    const ImageTensor z2 = reparameterize({ImageTensor(10, 10, 1), ImageTensor(10, 10, 1, 1.0)}, 2);
    const ImageTensor a = decoder_forward(x, z1, d, model.channel(0));
    const ImageTensor b = decoder_forward(x, z2, d, model.channel(0));
    ASSERT_EQ(a.height(), 10);
    ASSERT_EQ(a.channels(), 1);
    for (double v : a.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_NE(a, b);
}

TEST(Sde, RangeShapeAndDeterminism) {
    const NetworkConfig cfg;
    auto model = CvidModel<double>::initialized(cfg, 8);
    const auto x = plane(9, 13, 3);
    const ImageTensor d = sde_forward(x, model.channel(1));
    ASSERT_EQ(d.height(), 9);
    ASSERT_EQ(d.width(), 13);
    for (double v : d.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    EXPECT_EQ(d, sde_forward(x, model.channel(1)));
}

TEST(Sde, DenseConnectivityChannelCounts) {
    const NetworkConfig cfg;
    CvidModel<float> model(cfg);
    const auto& sde = model.channel(0).sde;
    ASSERT_EQ(sde.layers(), 5);
    for (int k = 1; k <= 5; ++k) EXPECT_EQ(sde.layer_input_channels(k - 1), 1 + 16 * (k - 1));
}

TEST(Model, ChannelStacksAreUnshared) {
    const auto model = CvidModel<double>::initialized(cvid::test::mini_config(), 9);
    const auto x = plane(6, 6, 1);
    EXPECT_NE(sde_forward(x, model.channel(0)), sde_forward(x, model.channel(1)));
    EXPECT_NE(sde_forward(x, model.channel(1)), sde_forward(x, model.channel(2)));
}

TEST(ChannelwiseForward, ModeContracts) {
    const auto model = CvidModel<double>::initialized(cvid::test::mini_config(), 1);
    const ImageTensor x = random_image(6, 6, 3, 1);
    EXPECT_THROW(derain_channelwise_forward(x, std::nullopt, model, Mode::Train, 0), ContractError);
    EXPECT_THROW(derain_channelwise_forward(x, x, model, Mode::Infer, 0), ContractError);
    EXPECT_THROW(derain_channelwise_forward(random_image(6, 6, 1, 1), std::nullopt, model, Mode::Infer, 0), ArityError);
    EXPECT_THROW(derain_channelwise_forward(x, random_image(6, 5, 3, 2), model, Mode::Train, 0), ArityError);
}

TEST(ChannelwiseForward, InferOutputShapeAndRange) {
    const auto model = CvidModel<double>::initialized(NetworkConfig{}, 2);
    const ImageTensor x = random_image(16, 12, 3, 4);
    const auto r = derain_channelwise_forward(x, std::nullopt, model, Mode::Infer, 3);
    ASSERT_TRUE(r.yhat.same_shape(x));
    for (double v : r.yhat.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    for (const auto& d : r.dhat) EXPECT_EQ(d.height(), 16);
}

TEST(ChannelwiseForward, InferenceIgnoresEncoder) {
    auto model = CvidModel<double>::initialized(cvid::test::mini_config(), 3);
    cvid::test::randomize(model, 3);
    const ImageTensor x = random_image(8, 8, 3, 5);
    const auto before = derain_channelwise_forward(x, std::nullopt, model, Mode::Infer, 11);
    model.visit_params([](const std::string& name, Param<double>& p) {
        if (name.find("/encoder/") != std::string::npos)
            for (double& v : p.value) v = std::numeric_limits<double>::quiet_NaN();
    });
    const auto after = derain_channelwise_forward(x, std::nullopt, model, Mode::Infer, 11);
    EXPECT_EQ(before.yhat, after.yhat);
}

TEST(ChannelwiseForward, ChannelsProcessedIndependently) {
    auto model = CvidModel<double>::initialized(cvid::test::mini_config(), 4);
    cvid::test::randomize(model, 4);
    ImageTensor x = random_image(8, 8, 3, 6);
    const auto base = derain_channelwise_forward(x, std::nullopt, model, Mode::Infer, 2);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) x(r, c, 1) = 0.0;
    const auto zeroed = derain_channelwise_forward(x, std::nullopt, model, Mode::Infer, 2);
    const auto bp = split_channels(base.yhat), zp = split_channels(zeroed.yhat);
    EXPECT_EQ(bp[0], zp[0]);
    EXPECT_EQ(bp[2], zp[2]);
    EXPECT_NE(bp[1], zp[1]);
}

TEST(ChannelwiseForward, ZeroedChannelParametersOnlyAffectThatPlane) {
    auto model = CvidModel<double>::initialized(cvid::test::mini_config(), 6);
    cvid::test::randomize(model, 6);
    const ImageTensor x = random_image(8, 8, 3, 9);
    const auto base = split_channels(derain_channelwise_forward(x, std::nullopt, model, Mode::Infer, 3).yhat);
    model.visit_params([](const std::string& name, Param<double>& p) {
        if (name.starts_with("G/")) std::fill(p.value.begin(), p.value.end(), 0.0);
    });
    const auto zeroed = split_channels(derain_channelwise_forward(x, std::nullopt, model, Mode::Infer, 3).yhat);
    EXPECT_EQ(base[0], zeroed[0]);
    EXPECT_EQ(base[2], zeroed[2]);
    EXPECT_NE(base[1], zeroed[1]);
}

TEST(ChannelwiseForward, TrainModeUsesPosterior) {
    auto model = CvidModel<double>::initialized(cvid::test::mini_config(), 5);
    cvid::test::randomize(model, 5);
    const ImageTensor x = random_image(6, 6, 3, 7), y = random_image(6, 6, 3, 8);
    const auto r = derain_channelwise_forward(x, y, model, Mode::Train, 1);
    const auto xs = split_channels(x), ys = split_channels(y);
    for (int c = 0; c < 3; ++c) {
        const auto q = encoder_forward(xs[c], ys[c], r.dhat[c], model.channel(c));
        EXPECT_EQ(q.mu, r.latents[c].mu);
    }
}

TEST(NetworkConfig, Validation) {
    NetworkConfig c;
    c.depth = 0;
    EXPECT_THROW(CvidModel<float>{c}, ConfigError);
    c = NetworkConfig{};
    c.kernel = 2;
    EXPECT_THROW(c.validate(), ConfigError);
}
