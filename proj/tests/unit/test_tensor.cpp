#include <gtest/gtest.h>

#include "dbf/tensor.hpp"

using namespace dbf;

TEST(Tensor, IndexingIsNchw) {
  Tensor<int> t(2, 3, 4, 5);
  t.at(1, 2, 3, 4) = 7;
  EXPECT_EQ(t[t.size() - 1], 7);
  t.at(0, 1, 0, 0) = 3;
  EXPECT_EQ(t.plane(0, 1)[0], 3);
  EXPECT_EQ(t.shape().str(), "2x3x4x5");
}

TEST(Tensor, ConcatAndSliceRoundTrip) {
  Tensor<float> a(2, 2, 3, 3), b(2, 1, 3, 3);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(i);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = -static_cast<float>(i);
  const auto cat = concat_channels(a, b);
  EXPECT_EQ(cat.shape(), (Shape{2, 3, 3, 3}));
  EXPECT_EQ(slice_channels(cat, 0, 2), a);
  EXPECT_EQ(slice_channels(cat, 2, 1), b);
  EXPECT_THROW(concat_channels(a, Tensor<float>(2, 1, 3, 4)), ShapeError);
  EXPECT_THROW(slice_channels(cat, 2, 2), ShapeError);
}

TEST(Tensor, ArithmeticChecksShape) {
  Tensor<double> a(1, 1, 2, 2, 1.0), b(1, 1, 2, 2, 2.0);
  a += b;
  a *= 2.0;
  EXPECT_EQ(a[3], 6.0);
  EXPECT_THROW(a += Tensor<double>(1, 1, 2, 3), ShapeError);
  EXPECT_THROW(a.reshaped({1, 1, 3, 1}), ShapeError);
  EXPECT_EQ(a.reshaped({4, 1, 1, 1})[2], 6.0);
}
