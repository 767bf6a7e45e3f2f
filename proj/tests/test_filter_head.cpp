#include "dmsr/model.hpp"
#include "dmsr/naf.hpp"
#include "dmsr/nn.hpp"
#include "dmsr/resample.hpp"
#include "dmsr/swin.hpp"
#include "grad_cases.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dmsr;
using T = Tensor<double>;

namespace {

template <typename S>
void expect_taps_sum_to_one(const Tensor<S>& w, double tol) {
  const Index b = w.dim(0), taps = w.dim(1), hw = w.dim(2) * w.dim(3);
  for (Index n = 0; n < b; ++n)
    for (Index p = 0; p < hw; ++p) {
      double s = 0;
      for (Index t = 0; t < taps; ++t) s += w[(n * taps + t) * hw + p];
      ASSERT_NEAR(s, 1.0, tol) << "pixel " << p;
    }
}

}  // namespace

TEST(HeadConvs, ChannelCounts) {
  for (int k : {3, 5}) {
    auto cfg = dmsr::testing::tiny_config(Backbone::swin);
    cfg.k = k;
    auto params = model::init_params<double>(cfg, 1);
    Tape<double> tape;
    Binding<double> bind(tape, params, false);
    auto [w, o] = model::head_convs(bind, model::kGuidanceBranch, tape.constant(T({1, cfg.embed_dim, 4, 6}, 0.1)), cfg);
    EXPECT_EQ(w.shape(), (Shape{1, 16 * k * k, 4, 6}));
    EXPECT_EQ(o.shape(), (Shape{1, 32 * k * k, 4, 6}));
  }
}

TEST(CombineWeights, TapsSumToOneDouble) {
  std::mt19937_64 rng(2);
  for (int k : {3, 5}) {
    const Index c = 16 * k * k;
    Tape<double> tape;
    auto w = model::combine_weights(tape.constant(T::uniform({2, c, 3, 2}, rng, -6.0, 6.0)),
                                    tape.constant(T::uniform({2, c, 3, 2}, rng, -6.0, 6.0)), k);
    ASSERT_EQ(w.shape(), (Shape{2, Index(k) * k, 12, 8}));
    expect_taps_sum_to_one(w.value(), 1e-12);
  }
}

TEST(CombineWeights, TapsSumToOneSingle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = trial % 2 ? 5 : 3;
    const Index c = 16 * k * k;
    Tape<float> tape;
    auto w = model::combine_weights(tape.constant(Tensor<float>::uniform({1, c, 4, 4}, rng, -8.f, 8.f)),
                                    tape.constant(Tensor<float>::uniform({1, c, 4, 4}, rng, -8.f, 8.f)), k);
    expect_taps_sum_to_one(w.value(), 1e-6);
  }
}

TEST(CombineWeights, ZeroInputsGiveUniformKernel) {
  Tape<double> tape;
  auto w = model::combine_weights(tape.constant(T({1, 144, 2, 2})), tape.constant(T({1, 144, 2, 2})), 3).value();
  for (Index i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], 1.0 / 9.0, 1e-15);
}

TEST(CombineWeights, RejectsWrongChannels) {
  Tape<double> tape;
  EXPECT_THROW(model::combine_weights(tape.constant(T({1, 140, 2, 2})), tape.constant(T({1, 140, 2, 2})), 3),
               ShapeError);
  EXPECT_THROW(model::combine_weights(tape.constant(T({1, 144, 2, 2})), tape.constant(T({1, 144, 2, 3})), 3),
               ShapeError);
}

TEST(CombineOffsets, MultiplicativeIdentityAndZero) {
  std::mt19937_64 rng(4);
  auto target = T::uniform({1, 288, 2, 3}, rng, -1.0, 1.0);
  Tape<double> tape;
  auto ones = model::combine_offsets(tape.constant(T({1, 288, 2, 3}, 1.0)), tape.constant(target), 3).value();
  EXPECT_EQ(ones, nn::pixel_shuffle(tape.constant(target), 4).value());
  EXPECT_EQ(ones.shape(), (Shape{1, 18, 8, 12}));
  auto zeros = model::combine_offsets(tape.constant(T({1, 288, 2, 3}, 0.0)), tape.constant(target), 3).value();
  EXPECT_EQ(zeros.array().abs().maxCoeff(), 0.0);
}

TEST(JointFilter, UniformKernelOnConstantImage) {
  const double c = 0.37;
  Tape<double> tape;
  model::KernelField<double> field{tape.constant(T({1, 9, 6, 5}, 1.0 / 9.0)), tape.constant(T({1, 18, 6, 5}))};
  auto y = model::apply_joint_filter(tape.constant(T({1, 1, 6, 5}, c)), field, 3).value();
  for (Index i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], c, 1e-15);
}

TEST(JointFilter, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(5);
  auto x = T::uniform({2, 1, 7, 9}, rng, 0.0, 1.0);
  for (int k : {3, 5}) {
    Tape<double> tape;
    auto y = model::apply_joint_filter(tape.constant(x), model::identity_field(tape, 2, 7, 9, k), k).value();
    EXPECT_EQ(y, x);
  }
}

TEST(JointFilter, MatchesPixelwiseOracle) {
  std::mt19937_64 rng(6);
  for (int k : {3, 5}) {
    const Index taps = Index(k) * k;
    auto x = T::uniform({2, 1, 6, 7}, rng, 0.0, 1.0);
    auto w = T::uniform({2, taps, 6, 7}, rng, -0.5, 1.0);
    auto o = T::uniform({2, 2 * taps, 6, 7}, rng, -1.7, 1.7);
    Tape<double> tape;
    auto y = model::apply_joint_filter(tape.constant(x), {tape.constant(w), tape.constant(o)}, k).value();
    auto ref = dmsr::testing::naive_joint_filter(x, w, o, k);
    EXPECT_LT((y.array() - ref.array()).abs().maxCoeff(), 1e-10);
  }
}

TEST(JointFilter, ConvexKernelStaysInWindowRange) {
  std::mt19937_64 rng(7);
  const Index h = 6, w = 6;
  auto x = T::uniform({1, 1, h, w}, rng, 0.0, 1.0);
  auto wt = T::uniform({1, 9, h, w}, rng, 0.0, 1.0);
  for (Index p = 0; p < h * w; ++p) {
    double s = 0;
    for (Index t = 0; t < 9; ++t) s += wt[t * h * w + p];
    for (Index t = 0; t < 9; ++t) wt[t * h * w + p] /= s;
  }
  Tape<double> tape;
  auto y = model::apply_joint_filter(tape.constant(x), {tape.constant(wt), tape.constant(T({1, 18, h, w}))}, 3).value();
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) {
      double lo = 1e9, hi = -1e9;
      for (Index di = -1; di <= 1; ++di)
        for (Index dj = -1; dj <= 1; ++dj) {
          const double v = x.at({0, 0, std::clamp(i + di, Index{0}, h - 1), std::clamp(j + dj, Index{0}, w - 1)});
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      EXPECT_GE(y.at({0, 0, i, j}), lo - 1e-12);
      EXPECT_LE(y.at({0, 0, i, j}), hi + 1e-12);
    }
}

TEST(JointFilter, RejectsMismatchedField) {
  Tape<double> tape;
  EXPECT_THROW(model::apply_joint_filter(tape.constant(T({1, 1, 4, 4})),
                                         {tape.constant(T({1, 9, 4, 5})), tape.constant(T({1, 18, 4, 4}))}, 3),
               ShapeError);
}

class Forward : public ::testing::TestWithParam<Backbone> {};

TEST_P(Forward, ShapeBranchesAndDeterminism) {
  auto cfg = dmsr::testing::tiny_config(GetParam());
  auto params = model::init_params<double>(cfg, 8);
  std::mt19937_64 rng(9);
  auto rgb = T::uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
  auto lr = T::uniform({1, 1, 4, 4}, rng, 0.0, 1.0);
  auto run = [&](Tape<double>& tape) {
    Binding<double> bind(tape, params, false);
    return model::dmsr_forward(bind, tape.constant(rgb), tape.constant(lr), cfg).value();
  };
  Tape<double> t1, t2;
  auto y1 = run(t1);
  auto y2 = run(t2);
  EXPECT_EQ(y1.shape(), (Shape{1, 1, 16, 16}));
  EXPECT_TRUE(y1.all_finite());
  EXPECT_EQ(y1, y2);
  EXPECT_EQ(t1.scope_entries(model::kGuidanceBranch), 1);
  EXPECT_EQ(t1.scope_entries(model::kTargetBranch), 1);
  const std::string block = GetParam() == Backbone::swin ? swin::kBlockScope : naf::kBlockScope;
  EXPECT_EQ(t1.scope_entries(std::string(model::kGuidanceBranch) + "/" + block), cfg.blocks);
  EXPECT_EQ(t1.scope_entries(std::string(model::kTargetBranch) + "/" + block), cfg.blocks);
}

TEST_P(Forward, IdentityHeadEqualsBicubic) {
  auto cfg = dmsr::testing::tiny_config(GetParam());
  auto params = model::init_params<double>(cfg, 10);
  std::mt19937_64 rng(11);
  auto lr = T::uniform({1, 1, 4, 4}, rng, 0.0, 1.0);
  Tape<double> tape;
  Binding<double> bind(tape, params, false);
  auto y = model::dmsr_forward(bind, tape.constant(T({1, 3, 16, 16}, 0.5)), tape.constant(lr), cfg, {.identity_head = true})
               .value();
  EXPECT_EQ(y, bicubic_resize(lr, 16, 16));
}

TEST_P(Forward, RejectsBadExtentsBeforeCompute) {
  auto cfg = dmsr::testing::tiny_config(GetParam());
  auto params = model::init_params<double>(cfg, 12);
  Tape<double> tape;
  Binding<double> bind(tape, params, false);
  // 20 is divisible by the scale (4) but not by 4 * window (16).
  EXPECT_ANY_THROW(model::dmsr_forward(bind, tape.constant(T({1, 3, 20, 16})), tape.constant(T({1, 1, 5, 4})), cfg));
  EXPECT_ANY_THROW(model::dmsr_forward(bind, tape.constant(T({1, 3, 18, 16})), tape.constant(T({1, 1, 4, 4})), cfg));
  EXPECT_THROW(model::dmsr_forward(bind, tape.constant(T({1, 3, 16, 16})), tape.constant(T({1, 1, 8, 8})), cfg),
               ShapeError);
  EXPECT_EQ(tape.scope_entries(model::kGuidanceBranch), 0);
}

INSTANTIATE_TEST_SUITE_P(Backbones, Forward, ::testing::Values(Backbone::swin, Backbone::naf),
                         [](const auto& info) { return to_string(info.param); });
