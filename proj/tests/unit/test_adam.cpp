#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ffield/adam.hpp"

namespace ffield {
namespace {

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter<double> p("p", Tensor<double>({2, 2}, std::vector<double>{1, -2, 3, 0.5}));
  const Tensor<double> before = p.value;
  Adam<double> adam;
  p.zero_grad();
  adam.step({&p});
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(adam.step_count(), 1);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstSign) {
  // At t=1 the bias-corrected moments are g and g^2, so the step is
  // lr * g / (|g| + eps).
  Parameter<double> p("p", Tensor<double>({1, 3}, 0.0));
  p.grad = Tensor<double>({1, 3}, std::vector<double>{0.003, -40.0, 1.0});
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  Adam<double> adam(cfg);
  adam.step({&p});
  EXPECT_NEAR(p.value[0], -0.01, 1e-12);
  EXPECT_NEAR(p.value[1], 0.01, 1e-12);
  EXPECT_NEAR(p.value[2], -0.01, 1e-12);
}

TEST(Adam, ConvergesOnQuadratic) {
  Parameter<double> x("x", Tensor<double>({1, 1}, 0.0));
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  Adam<double> adam(cfg);
  for (int i = 0; i < 200; ++i) {
    x.grad[0] = 2.0 * (x.value[0] - 2.0);
    adam.step({&x});
  }
  EXPECT_LT(std::abs(x.value[0] - 2.0), 0.01);
  EXPECT_EQ(adam.step_count(), 200);
}

TEST(Adam, MomentsMatchParameterShapes) {
  Parameter<float> a("a", Tensor<float>({3, 2}, 1.0f));
  Parameter<float> b("b", Tensor<float>({1, 5}, 1.0f));
  a.zero_grad();
  b.zero_grad();
  Adam<float> adam;
  adam.step({&a, &b});
  ASSERT_EQ(adam.first_moments().size(), 2u);
  EXPECT_EQ(adam.first_moments()[0].shape(), a.value.shape());
  EXPECT_EQ(adam.second_moments()[1].shape(), b.value.shape());
}

TEST(Adam, NanGradientAbortsWithoutUpdate) {
  Parameter<double> a("a", Tensor<double>({1, 2}, 1.0));
  Parameter<double> b("b", Tensor<double>({1, 2}, 1.0));
  a.grad = Tensor<double>({1, 2}, 0.5);
  b.grad = Tensor<double>({1, 2}, std::vector<double>{0.1, std::numeric_limits<double>::quiet_NaN()});
  Adam<double> adam;
  try {
    adam.step({&a, &b});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
  }
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(b.value[0], 1.0);
  EXPECT_EQ(adam.step_count(), 0);
}

TEST(Adam, StepCountIncrementsByOne) {
  Parameter<double> p("p", Tensor<double>({1, 1}, 0.0));
  Adam<double> adam;
  for (int i = 1; i <= 4; ++i) {
    p.grad[0] = 1.0;
    adam.step({&p});
    EXPECT_EQ(adam.step_count(), i);
  }
}

}  // namespace
}  // namespace ffield
