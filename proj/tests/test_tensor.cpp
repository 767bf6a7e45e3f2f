#include "dmsr/tensor.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dmsr;

TEST(Tensor, ConstructionAndIndexing) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.dim(0), 2);
  EXPECT_EQ(t.dim(1), 3);
  EXPECT_DOUBLE_EQ(t.at({1, 0}), 4.0);
  EXPECT_DOUBLE_EQ(t.at({0, 2}), 3.0);
  EXPECT_THROW(t.dim(2), ShapeError);
  EXPECT_THROW(t.at({2, 0}), std::out_of_range);
  EXPECT_THROW(t.at({0}), ShapeError);
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor<double>(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{2}).item(), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{6}).reshaped({4}), ShapeError);
}

TEST(Tensor, ReshapeKeepsRowMajorOrder) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = t.reshaped({3, 2});
  EXPECT_DOUBLE_EQ(r.at({1, 0}), 3.0);
  EXPECT_DOUBLE_EQ(r.at({2, 1}), 6.0);
  auto m = t.matrix(2, 3);
  EXPECT_DOUBLE_EQ(m(1, 2), 6.0);
}

TEST(Tensor, CopiesAreDeep) {
  Tensor<double> a({2}, {1, 2});
  Tensor<double> b = a;
  b[0] = 9;
  EXPECT_DOUBLE_EQ(a[0], 1.0);
}

TEST(Tensor, RowMajorStrides) {
  EXPECT_EQ(row_major_strides({2, 3, 4}), (std::vector<Index>{12, 4, 1}));
  EXPECT_EQ(num_elements({2, 3, 4}), 24);
}

TEST(Broadcast, StretchesUnitExtents) {
  EXPECT_EQ(broadcast_shapes({2, 1, 4}, {3, 1}), (Shape{2, 3, 4}));
  EXPECT_EQ(broadcast_shapes({5}, {1}), (Shape{5}));
  EXPECT_EQ(broadcast_shapes({1, 3}, {2, 1}), (Shape{2, 3}));
  EXPECT_THROW(broadcast_shapes({2, 3}, {4, 3}), ShapeError);
}

TEST(Broadcast, IsAssociative) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> rank_dist(1, 4);
  std::bernoulli_distribution unit(0.5);
  int compared = 0;
  for (int trial = 0; trial < 500; ++trial) {
    // Random shapes over a common full shape, with random unit extents.
    Shape full(static_cast<std::size_t>(4));
    for (auto& e : full) e = 2 + trial % 3;
    auto draw = [&] {
      Shape s(full.end() - rank_dist(rng), full.end());
      for (auto& e : s)
        if (unit(rng)) e = 1;
      return s;
    };
    const Shape a = draw(), b = draw(), c = draw();
    EXPECT_EQ(broadcast_shapes(broadcast_shapes(a, b), c), broadcast_shapes(a, broadcast_shapes(b, c)));
    ++compared;
  }
  EXPECT_EQ(compared, 500);
}

TEST(Broadcast, SumToShapeIsAdjointOfBroadcast) {
  std::mt19937_64 rng(5);
  auto small = Tensor<double>::uniform({3, 1}, rng, -1.0, 1.0);
  auto big = broadcast_to(small, {2, 3, 4});
  EXPECT_EQ(big.shape(), (Shape{2, 3, 4}));
  for (Index n = 0; n < 2; ++n)
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 4; ++j) EXPECT_EQ(big.at({n, i, j}), small.at({i, 0}));

  auto g = Tensor<double>::uniform({2, 3, 4}, rng, -1.0, 1.0);
  auto reduced = sum_to_shape(g, {3, 1});
  ASSERT_EQ(reduced.shape(), (Shape{3, 1}));
  for (Index i = 0; i < 3; ++i) {
    double expect = 0;
    for (Index n = 0; n < 2; ++n)
      for (Index j = 0; j < 4; ++j) expect += g.at({n, i, j});
    EXPECT_NEAR(reduced.at({i, 0}), expect, 1e-12);
  }
  EXPECT_THROW(broadcast_to(small, {2, 4}), ShapeError);
}

TEST(Tensor, CastPreservesValues) {
  Tensor<double> d({2}, {0.5, -1.25});
  auto f = d.cast<float>();
  EXPECT_EQ(f.shape(), d.shape());
  EXPECT_FLOAT_EQ(f[1], -1.25f);
}
