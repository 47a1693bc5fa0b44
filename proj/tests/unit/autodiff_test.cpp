#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "grad_suite.hpp"
#include "gradcheck.hpp"
#include "sfa/autodiff/adam.hpp"
#include "sfa/autodiff/ops.hpp"

namespace ad = sfa::ad;
using ad::Tensor;
using sfa::testing::gradcheck;
using sfa::testing::random_tensor;
using sfa::testing::weighted_sum;

namespace {

constexpr int kInstances = 20;
constexpr double kTol = 1e-3;

// Values bounded away from zero so a 1e-3 probe never crosses a kink.
Tensor away_from_zero(ad::Shape shape, std::mt19937& rng) {
    Tensor t = random_tensor(std::move(shape), rng, 0.1f, 1.0f);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.mutable_data()) {
        v = sign(rng) ? v : -v;
    }
    return t;
}

}  // namespace

TEST(Conv2d, OneByOneIsScalarMultiply) {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor w({1, 1, 1, 1}, {2.0f});
    Tensor y = ad::conv2d(x, w, Tensor::zeros({1}), 1, 0);
    ASSERT_EQ(y.shape(), (ad::Shape{1, 1, 3, 3}));
    for (float v : y.data()) {
        EXPECT_EQ(v, 2.0f);
    }
}

TEST(Conv2d, HandSum) {
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = ad::conv2d(x, Tensor::full({1, 1, 2, 2}, 1.0f), Tensor::zeros({1}), 1, 0);
    ASSERT_EQ(y.shape(), (ad::Shape{1, 1, 1, 1}));
    EXPECT_EQ(y.item(), 10.0f);
}

TEST(Conv2d, IdentityKernel) {
    std::mt19937 rng(3);
    Tensor x = random_tensor({2, 1, 5, 4}, rng, -1, 1, false);
    Tensor w = Tensor::zeros({1, 1, 3, 3});
    w.mutable_data()[4] = 1.0f;
    Tensor y = ad::conv2d(x, w, Tensor::zeros({1}), 1, 1);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        EXPECT_EQ(y.at(i), x.at(i));
    }
}

TEST(Conv2d, OutputSizeFollowsStrideFormula) {
    Tensor x = Tensor::zeros({1, 2, 7, 9});
    Tensor y = ad::conv2d(x, Tensor::zeros({3, 2, 3, 3}), Tensor::zeros({3}), 2, 1);
    EXPECT_EQ(y.shape(), (ad::Shape{1, 3, 4, 5}));
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    Tensor w = Tensor::zeros({2, 4, 3, 3});
    try {
        ad::conv2d(x, w, Tensor::zeros({2}), 1, 1);
        FAIL() << "expected ShapeError";
    } catch (const ad::ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,4,3,3]"), std::string::npos);
        EXPECT_NE(msg.find("[1,3,4,4]"), std::string::npos);
    }
}

TEST(Conv2d, KernelLargerThanPaddedInputIsRejected) {
    EXPECT_THROW(ad::conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), Tensor::zeros({1}), 1, 1),
                 ad::ShapeError);
}

TEST(RmsNormalize, PerSliceUnitRms) {
    const Tensor x({2, 2}, {3.0f, 4.0f, 0.0f, 0.0f});
    const Tensor y = ad::rms_normalize(x, 0.0f);
    EXPECT_FLOAT_EQ(y.at(0), 3.0f / std::sqrt(12.5f));
    EXPECT_FLOAT_EQ(y.at(1), 4.0f / std::sqrt(12.5f));
    const Tensor z = ad::rms_normalize(x);
    EXPECT_EQ(z.at(2), 0.0f);
    const Tensor scaled = ad::rms_normalize(ad::scale(x, 1000.0f), 0.0f);
    EXPECT_NEAR(scaled.at(1), y.at(1), 1e-6);
}

TEST(GradReverse, ForwardIsBitwiseIdentity) {
    std::mt19937 rng(11);
    Tensor x = random_tensor({3, 4, 5}, rng);
    Tensor y = ad::grad_reverse(x, -0.5f);
    ASSERT_EQ(y.shape(), x.shape());
    EXPECT_EQ(std::memcmp(x.data().data(), y.data().data(), x.numel() * sizeof(float)), 0);
}

TEST(GradReverse, BackwardScalesBySetting) {
    std::mt19937 rng(12);
    Tensor x = random_tensor({2, 3, 4}, rng);
    ad::backward(ad::sum(ad::grad_reverse(x, -0.5f)));
    for (float g : x.grad()) {
        EXPECT_EQ(g, -0.5f);
    }
}

TEST(GradReverse, UnitScaleIsIdentityBothWays) {
    std::mt19937 rng(13);
    Tensor x = random_tensor({2, 5}, rng);
    Tensor y = ad::grad_reverse(x, 1.0f);
    ad::backward(ad::sum(y));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        EXPECT_EQ(y.at(i), x.at(i));
        EXPECT_EQ(x.grad()[i], 1.0f);
    }
}

TEST(GradReverse, RejectsNonFiniteScale) {
    EXPECT_THROW(ad::grad_reverse(Tensor::zeros({1}), std::nanf("")), std::invalid_argument);
}

TEST(Primitives, ClosedFormValues) {
    EXPECT_EQ(ad::sigmoid(Tensor::scalar(0.0f)).item(), 0.5f);
    EXPECT_EQ(ad::frobenius_sq(Tensor::zeros({3, 3})).item(), 0.0f);
    Tensor m = ad::matmul(Tensor::full({2, 3}, 1.0f), Tensor::full({3, 2}, 1.0f));
    ASSERT_EQ(m.shape(), (ad::Shape{2, 2}));
    for (float v : m.data()) {
        EXPECT_EQ(v, 3.0f);
    }
}

TEST(Primitives, ShapeMismatchesThrow) {
    EXPECT_THROW(ad::add(Tensor::zeros({2}), Tensor::zeros({3})), ad::ShapeError);
    EXPECT_THROW(ad::mul(Tensor::zeros({2, 2}), Tensor::zeros({4})), ad::ShapeError);
    EXPECT_THROW(ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ad::ShapeError);
    EXPECT_THROW(ad::reshape(Tensor::zeros({2, 3}), {4}), ad::ShapeError);
    EXPECT_THROW(ad::transpose(Tensor::zeros({2, 3, 1})), ad::ShapeError);
    EXPECT_THROW(Tensor({2, 2}, {1.0f}), ad::ShapeError);
}

TEST(Primitives, PoolingAndUpsampleValues) {
    Tensor x({1, 1, 2, 2}, {1, 5, 3, 2});
    EXPECT_EQ(ad::max_pool2d(x, 2, 2).item(), 5.0f);
    EXPECT_EQ(ad::avg_pool2d(x, 2, 2).item(), 2.75f);
    Tensor up = ad::upsample_nearest2d(x, 2);
    ASSERT_EQ(up.shape(), (ad::Shape{1, 1, 4, 4}));
    EXPECT_EQ(up.at(0), 1.0f);
    EXPECT_EQ(up.at(1), 1.0f);
    EXPECT_EQ(up.at(2), 5.0f);
    EXPECT_EQ(up.at(15), 2.0f);
}

// ---------------------------------------------------------------------------
// Finite-difference checks, kInstances random instances per primitive.
// ---------------------------------------------------------------------------

class PrimitiveGrad : public ::testing::TestWithParam<int> {
protected:
    std::mt19937 rng{static_cast<std::uint32_t>(1000 + GetParam())};
    std::uint32_t proj_seed() const { return static_cast<std::uint32_t>(77 + GetParam()); }
};

TEST_P(PrimitiveGrad, Conv2d) { EXPECT_LE(sfa::testing::conv2d_instance(GetParam()), kTol); }

TEST_P(PrimitiveGrad, Pooling) { EXPECT_LE(sfa::testing::pooling_instance(GetParam()), kTol); }

TEST_P(PrimitiveGrad, GradReverse) { EXPECT_LE(sfa::testing::grad_reverse_instance(GetParam()), kTol); }

TEST_P(PrimitiveGrad, Elementwise) {
    auto r = gradcheck(
        [&](const std::vector<Tensor>& in) {
            const Tensor& a = in[0];
            const Tensor& b = in[1];
            Tensor t = ad::add(ad::relu(a), ad::sigmoid(b));
            t = ad::add(t, ad::mul(ad::abs(a), ad::square(b)));
            t = ad::sub(t, ad::log(ad::add(ad::square(a), ad::sigmoid(b))));
            t = ad::add(t, ad::softplus(ad::scale(b, 1.7f)));
            return weighted_sum(t, proj_seed());
        },
        {away_from_zero({3, 4}, rng), random_tensor({3, 4}, rng)});
    EXPECT_LE(r.worst(), kTol);
}

TEST_P(PrimitiveGrad, LinearAlgebraAndShape) {
    auto r = gradcheck(
        [&](const std::vector<Tensor>& in) {
            Tensor m = ad::matmul(in[0], ad::transpose(in[1]));  // [3,2]
            m = ad::add_bias(m, in[2]);
            Tensor flat = ad::reshape(m, {6});
            Tensor both = ad::concat({flat, ad::reshape(in[0], {12})});
            const std::vector<std::size_t> idx{0, 3, 3, 7, 17};
            Tensor picked = ad::take(both, idx);
            Tensor rows = ad::slice_rows(in[0], 1, 3);
            return ad::add(ad::add(weighted_sum(picked, proj_seed()), ad::mean(rows)),
                           ad::add(ad::sum(m), ad::frobenius_sq(in[1])));
        },
        {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng), random_tensor({2}, rng)});
    EXPECT_LE(r.worst(), kTol);
}

TEST_P(PrimitiveGrad, RmsNormalize) {
    auto r = gradcheck(
        [&](const std::vector<Tensor>& in) { return weighted_sum(ad::rms_normalize(in[0]), proj_seed()); },
        {random_tensor({3, 2, 2, 2}, rng)});
    EXPECT_LE(r.worst(), kTol);
}

TEST_P(PrimitiveGrad, LossBlocks) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> targets(6);
    for (auto& t : targets) {
        t = u(rng) < 0.5f ? 0.0f : 1.0f;
    }
    std::vector<int> labels{0, 2, 1};
    // Smooth-L1 inputs kept off the |x| = beta transition.
    Tensor d = away_from_zero({5}, rng);
    for (auto& v : d.mutable_data()) {
        if (std::fabs(std::fabs(v) - 0.5f) < 0.05f) {
            v *= 1.3f;
        }
    }
    auto r = gradcheck(
        [&](const std::vector<Tensor>& in) {
            return ad::add(ad::add(weighted_sum(ad::bce_with_logits(in[0], targets), proj_seed()),
                                   weighted_sum(ad::cross_entropy(in[1], labels), proj_seed() + 1)),
                           weighted_sum(ad::smooth_l1(in[2], 0.5f), proj_seed() + 2));
        },
        {random_tensor({6}, rng, -3, 3), random_tensor({3, 3}, rng, -2, 2), d});
    EXPECT_LE(r.worst(), kTol);
}

TEST_P(PrimitiveGrad, RoiAlign) {
    std::uniform_real_distribution<float> pos(0.3f, 3.7f);
    std::vector<ad::RoiBox> rois;
    for (std::size_t i = 0; i < 3; ++i) {
        float x1 = pos(rng), y1 = pos(rng), x2 = pos(rng), y2 = pos(rng);
        if (x1 > x2) std::swap(x1, x2);
        if (y1 > y2) std::swap(y1, y2);
        rois.push_back({i % 2, x1, y1, x2 + 0.5f, y2 + 0.5f});
    }
    auto r = gradcheck(
        [&](const std::vector<Tensor>& in) { return weighted_sum(ad::roi_align(in[0], rois, 2, 2), proj_seed()); },
        {random_tensor({2, 2, 5, 5}, rng)});
    EXPECT_LE(r.worst(), kTol);
}

INSTANTIATE_TEST_SUITE_P(Random, PrimitiveGrad, ::testing::Range(0, kInstances));

// ---------------------------------------------------------------------------
// Tape semantics
// ---------------------------------------------------------------------------

TEST(Tape, TwoUsesAccumulate) {
    Tensor x({3}, {1, 2, 3}, true);
    ad::backward(ad::sum(ad::add(x, x)));
    for (float g : x.grad()) {
        EXPECT_EQ(g, 2.0f);
    }
    x.zero_grad();
    ad::backward(ad::sum(ad::mul(x, x)));
    EXPECT_EQ(x.grad()[2], 6.0f);
}

TEST(Tape, SecondBackwardWithoutZeroGradIsAnError) {
    Tensor x({2}, {1, 2}, true);
    Tensor loss = ad::sum(ad::square(x));
    ad::backward(loss);
    EXPECT_THROW(ad::backward(loss), ad::GraphError);
    x.zero_grad();
    EXPECT_NO_THROW(ad::backward(loss));
    EXPECT_EQ(x.grad()[1], 4.0f);
}

TEST(Tape, UnusedBranchLeavesStillGetGrad) {
    Tensor x({2}, {1, 2}, true);
    Tensor y({2}, {3, 4}, true);
    // y only feeds a product with a zero constant.
    Tensor loss = ad::add(ad::sum(x), ad::sum(ad::mul(y, Tensor::zeros({2}))));
    ad::backward(loss);
    ASSERT_TRUE(y.has_grad());
    EXPECT_EQ(y.grad()[0], 0.0f);
}

TEST(Tape, NonScalarLossRejected) {
    Tensor x({2}, {1, 2}, true);
    EXPECT_THROW(ad::backward(ad::square(x)), ad::GraphError);
}

TEST(Tape, NoGradGuardSkipsGraph) {
    Tensor x({2}, {1, 2}, true);
    ad::NoGradGuard guard;
    Tensor y = ad::square(x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
}

TEST(Tape, NonLeafIsReadOnly) {
    Tensor x({2}, {1, 2}, true);
    Tensor y = ad::square(x);
    EXPECT_THROW(y.mutable_data(), ad::GraphError);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

namespace {

// Independent scalar Adam recurrence.
double reference_adam(double p, double g, int steps, double lr) {
    double m = 0, v = 0;
    for (int t = 1; t <= steps; ++t) {
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        p -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    return p;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
    Tensor p = Tensor::scalar(1.0f, true);
    ad::Adam opt({p}, {});
    ad::backward(p);  // d(p)/dp = 1
    opt.step();
    EXPECT_NEAR(p.item(), 1.0 - 3e-4, 1e-6);
}

TEST(Adam, ZeroGradLeavesParamUnchanged) {
    Tensor p({2}, {0.25f, -4.0f}, true);
    ad::Adam opt({p}, {});
    ad::backward(ad::sum(ad::mul(p, Tensor::zeros({2}))));
    opt.step();
    EXPECT_EQ(p.at(0), 0.25f);
    EXPECT_EQ(p.at(1), -4.0f);
}

TEST(Adam, ConstantGradientDecreasesMonotonically) {
    Tensor p = Tensor::scalar(1.0f, true);
    ad::Adam opt({p}, {});
    std::vector<float> trace{p.item()};
    for (int step = 1; step <= 2; ++step) {
        opt.zero_grad();
        ad::backward(ad::scale(p, 0.7f));
        opt.step();
        trace.push_back(p.item());
        EXPECT_NEAR(p.item(), reference_adam(1.0, 0.7, step, 3e-4), 1e-6);
    }
    EXPECT_LT(trace[1], trace[0]);
    EXPECT_LT(trace[2], trace[1]);
}

TEST(Adam, MissingGradientIsAnError) {
    Tensor p = Tensor::scalar(1.0f, true);
    ad::Adam opt({p}, {});
    EXPECT_THROW(opt.step(), ad::GraphError);
}
