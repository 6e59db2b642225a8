#include <gtest/gtest.h>

#include <cmath>

#include "bamnet/bam.hpp"
#include "bamnet/gradcheck.hpp"
#include "bamnet/ops.hpp"
#include "test_util.hpp"

namespace bamnet {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

// Every parameter drawn away from zero so no pathway is structurally dead.
void randomize(BamParams<double>& bam, std::uint64_t seed) {
    Rng rng(seed);
    bam.for_each_parameter([&](const std::string& name, Parameter<double>& p) {
        const bool gamma = name.find("gamma") != std::string::npos;
        for (auto& v : p.value.data()) v = gamma ? rng.uniform(0.5, 1.5) : rng.uniform(-0.8, 0.8);
    });
}

Tensor<double> run(Tensor<double> x, BamParams<double>& bam,
                   Var<double> (*fn)(Var<double>, BamParams<double>&, Mode), Mode mode = Mode::Train) {
    Tape<double> tape;
    return fn(tape.leaf(std::move(x)), bam, mode).value();
}

Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
    return sum(mul(y, y.tape->leaf(random_tensor(y.shape(), seed))));
}

TEST(BamShapes, GateShapesFollowTheContract) {
    BamParams<double> bam(32, 16, 4);
    Rng rng(1);
    bam.initialize(rng);
    const auto x = random_tensor({2, 32, 14, 14}, 2);
    EXPECT_EQ(run(x, bam, channel_gate<double>).shape(), (Shape{2, 32, 1, 1}));
    EXPECT_EQ(run(x, bam, spatial_gate<double>).shape(), (Shape{2, 1, 14, 14}));
    EXPECT_EQ(run(x, bam, bam_refine<double>).shape(), x.shape());
}

TEST(BamShapes, RefinePreservesShapeAcrossExtents) {
    for (const Shape& s : {Shape{1, 16, 1, 1}, Shape{3, 16, 5, 9}, Shape{2, 32, 12, 7}, Shape{4, 48, 3, 3}}) {
        BamParams<double> bam(s[1], 16, 4);
        randomize(bam, s[2]);
        EXPECT_EQ(run(random_tensor(s, 5), bam, bam_refine<double>, Mode::Eval).shape(), s) << shape_str(s);
    }
}

TEST(BamShapes, DilatedConvsPreserveExtent) {
    // (3 - 1) * 4 / 2 = 4 padding keeps H x W for kernel 3, dilation 4
    for (std::size_t extent : {1, 5, 14, 28}) {
        EXPECT_EQ(conv_output_extent(extent, 3, {1, 4, 4}), extent);
    }
}

TEST(BamContract, ChannelMismatchAndIndivisibleChannelsRejected) {
    BamParams<double> bam(32, 16, 4);
    EXPECT_THROW(run(random_tensor({2, 16, 4, 4}, 1), bam, channel_gate<double>), ShapeError);
    EXPECT_THROW(run(random_tensor({2, 16, 4, 4}, 1), bam, spatial_gate<double>), ShapeError);
    EXPECT_THROW(BamParams<double>(30, 16, 4), std::invalid_argument);
    EXPECT_THROW(BamParams<double>(32, 0, 4), std::invalid_argument);
}

TEST(BamZeroParameters, ChannelGateEqualsBeta) {
    BamParams<double> bam(32, 16, 4);
    randomize(bam, 3);
    bam.fc1_weight.value.fill(0.0);
    bam.fc2_weight.value.fill(0.0);
    bam.channel_bn.gamma.value.fill(0.0);
    for (double beta : {0.0, 0.25}) {
        bam.channel_bn.beta.value.fill(beta);
        const auto y = run(random_tensor({2, 32, 6, 6}, 4), bam, channel_gate<double>);
        for (double v : y.data()) EXPECT_EQ(v, beta);
    }
}

TEST(BamZeroParameters, SpatialGateEqualsBeta) {
    BamParams<double> bam(32, 16, 4);
    randomize(bam, 6);
    for (auto* w : {&bam.reduce_weight, &bam.dilated1_weight, &bam.dilated2_weight, &bam.project_weight}) {
        w->value.fill(0.0);
    }
    const auto y = run(random_tensor({2, 32, 6, 6}, 7), bam, spatial_gate<double>);
    for (double v : y.data()) {
        EXPECT_EQ(v, bam.spatial_bn.beta.value[0]);
    }
}

TEST(BamZeroParameters, FreshModuleIsExactlyOnePointFiveF) {
    Rng rng(8);
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        BamParams<double> bam(32, 16, 4);
        bam.initialize(rng);
        const auto x = random_tensor({2, 32, 5, 5}, 100 + trial, -50.0, 50.0);
        for (Mode mode : {Mode::Train, Mode::Eval}) {
            const auto y = run(x, bam, bam_refine<double>, mode);
            for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(y[i], 1.5 * x[i]);
        }
    }
}

TEST(BamRefine, ZeroFeaturesGiveZero) {
    BamParams<double> bam(16, 4, 2);
    randomize(bam, 9);
    const auto y = run(Tensor<double>({2, 16, 4, 4}), bam, bam_refine<double>);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(BamRefine, NonNegativeFeaturesStayWithinFAndTwoF) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        BamParams<double> bam(16, 4, 2);
        randomize(bam, 200 + trial);
        const auto x = random_tensor({3, 16, 5, 5}, 300 + trial, 0.0, 10.0);
        const auto y = run(x, bam, bam_refine<double>);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            ASSERT_GE(y[i], x[i]);
            ASSERT_LE(y[i], 2.0 * x[i]);
        }
    }
}

TEST(BamRefine, AttentionMapStrictlyInsideUnitInterval) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        BamParams<double> bam(16, 4, 2);
        randomize(bam, 400 + trial);
        const double range = std::pow(10.0, static_cast<double>(trial % 4));  // up to 1e3
        const auto m = run(random_tensor({3, 16, 6, 6}, 500 + trial, -range, range), bam, attention_map<double>);
        for (double v : m.data()) {
            ASSERT_GT(v, 0.0);
            ASSERT_LT(v, 1.0);
        }
    }
}

TEST(BamRefine, FloatAndDoubleAgree) {
    BamParams<double> bd(16, 4, 2);
    randomize(bd, 11);
    BamParams<float> bf(16, 4, 2);
    auto src = bd;
    std::vector<Parameter<double>*> from;
    src.for_each_parameter([&](const std::string&, Parameter<double>& p) { from.push_back(&p); });
    std::size_t k = 0;
    bf.for_each_parameter([&](const std::string&, Parameter<float>& p) { p.value = from[k++]->value.cast<float>(); });
    const auto x = random_tensor({2, 16, 6, 6}, 12);
    Tape<float> tf;
    const auto yf = bam_refine(tf.leaf(x.cast<float>()), bf, Mode::Train).value();
    const auto yd = run(x, bd, bam_refine<double>);
    EXPECT_LT(max_abs_diff(yf.cast<double>(), yd), 1e-4);
}

TEST(BamParameters, CountMatchesLayerShapes) {
    for (auto [c, r] : {std::pair<std::size_t, std::size_t>{64, 16}, {128, 16}, {256, 16}, {32, 4}, {12, 3}}) {
        const std::size_t h = c / r;
        // weights and biases listed layer by layer
        const std::size_t expected = (c * h + h) + (h * c) + 2 * c  // mlp + norm
                                     + (h * c) + 2 * h              // reduce + norm
                                     + 2 * (h * h * 9 + 2 * h)      // dilated convs + norms
                                     + h + 2;                       // project + norm
        BamParams<double> bam(c, r, 4);
        EXPECT_EQ(bam.parameter_count(), expected);
        EXPECT_EQ(bam_parameter_count(c, r), expected);
    }
}

TEST(BamParameters, NamesAreUniqueAndStable) {
    BamParams<double> bam(16, 4, 2);
    std::vector<std::string> names;
    bam.for_each_parameter([&](const std::string& n, Parameter<double>&) { names.push_back(n); });
    auto sorted = names;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
    EXPECT_EQ(names.front(), "channel.fc1.weight");
    EXPECT_EQ(names.back(), "spatial.bn.beta");
}

class BamGradient : public ::testing::Test {
protected:
    void SetUp() override {
        randomize(bam, 21);
        // A hidden unit active on the whole batch has an exactly-zero bias
        // gradient in train mode (the channel norm cancels a uniform shift);
        // threshold each unit between the second and third sample instead.
        for (std::size_t j = 0; j < bam.hidden(); ++j) {
            std::vector<double> z(4, 0.0);
            for (std::size_t n = 0; n < 4; ++n) {
                for (std::size_t c = 0; c < 8; ++c) {
                    double mean = 0.0;
                    for (std::size_t i = 0; i < 36; ++i) mean += x[(n * 8 + c) * 36 + i] / 36.0;
                    z[n] += mean * bam.fc1_weight.value[c * bam.hidden() + j];
                }
            }
            std::sort(z.begin(), z.end());
            bam.fc1_bias.value[j] = -0.5 * (z[1] + z[2]);
        }
    }
    GradCheckOptions opt() const {
        GradCheckOptions o;
        o.h = 3e-4;
        o.extrapolate = true;
        o.seed = 3;
        return o;
    }
    BamParams<double> bam{8, 2, 2};
    Tensor<double> x = random_tensor({4, 8, 6, 6}, 22);
};

TEST_F(BamGradient, ChannelGate) {
    auto build = [&](Tape<double>&, Var<double> in) { return weighted_sum(channel_gate(in, bam, Mode::Train), 1); };
    EXPECT_LT(grad_check(build, x, opt()), 1e-4);
    EXPECT_LT(grad_check_parameter([&](Tape<double>& t) { return build(t, t.leaf(x)); }, bam.fc2_weight, opt()), 1e-4);
}

TEST_F(BamGradient, SpatialGate) {
    auto build = [&](Tape<double>&, Var<double> in) { return weighted_sum(spatial_gate(in, bam, Mode::Train), 2); };
    EXPECT_LT(grad_check(build, x, opt()), 1e-4);
    EXPECT_LT(grad_check_parameter([&](Tape<double>& t) { return build(t, t.leaf(x)); }, bam.dilated1_weight, opt()),
              1e-4);
}

TEST_F(BamGradient, RefineEndToEnd) {
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        auto build = [&](Tape<double>&, Var<double> in) { return weighted_sum(bam_refine(in, bam, mode), 3); };
        EXPECT_LT(grad_check(build, x, opt()), 1e-4);
        bam.for_each_parameter([&](const std::string& name, Parameter<double>& p) {
            EXPECT_LT(grad_check_parameter([&](Tape<double>& t) { return build(t, t.leaf(x)); }, p, opt()), 1e-4)
                << name;
        });
    }
}

}  // namespace
}  // namespace bamnet
