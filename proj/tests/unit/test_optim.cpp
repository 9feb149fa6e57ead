#include <gtest/gtest.h>

#include <cmath>

#include "dbf/optim.hpp"

using namespace dbf;

TEST(LrSchedule, Endpoints) {
  EXPECT_EQ(lr_schedule(0, 1000, 0.001, 0.9), 0.001);
  EXPECT_EQ(lr_schedule(1000, 1000, 0.001, 0.9), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(500, 1000, 0.001, 1.0), 0.0005);
  EXPECT_DOUBLE_EQ(lr_schedule(250, 1000, 0.001, 0.9), 0.001 * std::pow(0.75, 0.9));
}

TEST(LrSchedule, Errors) {
  EXPECT_THROW(lr_schedule(0, 0, 0.001, 0.9), ParameterError);
  EXPECT_THROW(lr_schedule(-1, 10, 0.001, 0.9), ParameterError);
  EXPECT_THROW(lr_schedule(11, 10, 0.001, 0.9), ParameterError);
}

TEST(LrSchedule, Monotone) {
  double prev = 1;
  for (int s = 0; s <= 100; ++s) {
    const double lr = lr_schedule(s, 100, 0.001, 0.9);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Adam, FirstStepMovesByLr) {
  nn::Parameter<double> p("p", Shape{1, 1, 1, 3});
  p.value[0] = 1;
  p.grad[0] = 5;
  p.grad[1] = -0.01;
  Adam<double> opt({&p});
  opt.step(0.1);
  // bias-corrected first step is lr * sign(g) (up to eps)
  EXPECT_NEAR(p.value[0], 0.9, 1e-8);
  EXPECT_NEAR(p.value[1], 0.1, 1e-6);
  EXPECT_EQ(p.value[2], 0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, MinimizesQuadratic) {
  nn::Parameter<double> p("p", Shape{1, 1, 1, 2});
  p.value[0] = 3;
  p.value[1] = -2;
  Adam<double> opt({&p});
  for (int i = 0; i < 2000; ++i) {
    for (int k = 0; k < 2; ++k) p.grad[k] = 2 * (p.value[k] - 1);
    opt.step(0.01);
  }
  EXPECT_NEAR(p.value[0], 1, 1e-3);
  EXPECT_NEAR(p.value[1], 1, 1e-3);
}
