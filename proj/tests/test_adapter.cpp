#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"

using namespace fersim;

namespace {

template <class Real>
std::vector<Real> random_vector(Engine& rng, std::size_t n, double scale = 1.0) {
  std::vector<Real> v(n);
  for (Real& x : v) x = static_cast<Real>(scale * standard_normal(rng));
  return v;
}

/// Smoothed cross-entropy written out directly from the definition.
double reference_loss(const AdapterParams<double>& p, std::span<const double> x, Expression y, double eps,
                      std::span<const double> mask) {
  ForwardCache<double> cache;
  const auto probs = forward<double>(p, x, mask, cache);
  double loss = 0;
  for (std::size_t c = 0; c < 7; ++c) {
    const double q = (1 - eps) * (c == index_of(y) ? 1.0 : 0.0) + eps / 7;
    loss -= q * std::log(probs[c]);
  }
  return loss;
}

TrainingConfig config_with(double lr, double wd, double b1, double b2, double eps) {
  TrainingConfig c;
  c.learning_rate = lr;
  c.weight_decay = wd;
  c.adam_beta1 = b1;
  c.adam_beta2 = b2;
  c.adam_eps = eps;
  return c;
}

}  // namespace

// Every gradient component against central differences, h = 1e-4.
TEST(Adapter, GradientsMatchCentralFiniteDifferences) {
  const std::size_t D = 5, H = 3;
  const double h = 1e-4;
  Engine rng(31337);
  double worst = 0;
  for (int inst = 0; inst < 100; ++inst) {
    auto [p, opt] = init_params<double>(D, H, rng());
    // Perturb everything so no parameter sits at a special value.
    for (double& v : p.values()) v += 0.3 * standard_normal(rng);
    const auto x = random_vector<double>(rng, D, 2.0);
    const auto y = static_cast<Expression>(uniform_index(rng, 7));
    const double eps = 0.2 * uniform01(rng);
    const auto mask = draw_dropout_mask<double>(H, 0.3, rng);

    TrainingConfig cfg;
    cfg.label_smoothing = eps;
    const auto analytic = loss_and_grad<double>(p, x, y, cfg, mask);
    EXPECT_NEAR(analytic.loss, reference_loss(p, x, y, eps, mask), 1e-12);

    for (std::size_t i = 0; i < p.size(); ++i) {
      auto plus = p, minus = p;
      plus.values()[i] += h;
      minus.values()[i] -= h;
      const double numeric =
          (reference_loss(plus, x, y, eps, mask) - reference_loss(minus, x, y, eps, mask)) / (2 * h);
      const double a = analytic.grads.values()[i];
      const double err = std::abs(a - numeric);
      const double tol = std::max(1e-4 * std::max(std::abs(a), std::abs(numeric)), 1e-7);
      worst = std::max(worst, err / std::max(std::max(std::abs(a), std::abs(numeric)), 1e-3));
      ASSERT_LE(err, tol) << "instance " << inst << " parameter " << i << " analytic " << a << " numeric "
                          << numeric;
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Adapter, GradientOfFloatPathAgreesWithDouble) {
  Engine rng(8);
  auto [pd, od] = init_params<double>(7, 9, 3);
  auto [pf, of] = init_params<float>(7, 9, 3);
  for (std::size_t i = 0; i < pd.size(); ++i) EXPECT_EQ(static_cast<float>(pd.values()[i]), pf.values()[i]);
  const auto xd = random_vector<double>(rng, 7);
  const std::vector<float> xf(xd.begin(), xd.end());
  const auto gd = loss_and_grad<double>(pd, xd, Expression::kSad, TrainingConfig{}, {});
  const auto gf = loss_and_grad<float>(pf, xf, Expression::kSad, TrainingConfig{}, {});
  EXPECT_NEAR(gd.loss, gf.loss, 1e-5);
  for (std::size_t i = 0; i < pd.size(); ++i) EXPECT_NEAR(gd.grads.values()[i], gf.grads.values()[i], 1e-5);
}

TEST(Adapter, InitIsDeterministicAndWithinFanInBounds) {
  auto [a, oa] = init_params<float>(64, 512, 99);
  auto [b, ob] = init_params<float>(64, 512, 99);
  EXPECT_EQ(a, b);
  EXPECT_EQ(oa, ob);
  EXPECT_EQ(oa.step, 0u);
  for (float v : a.ln_gamma()) EXPECT_EQ(v, 1.0f);
  for (float v : a.ln_beta()) EXPECT_EQ(v, 0.0f);
  for (float v : a.b1()) EXPECT_EQ(v, 0.0f);
  for (float v : a.b2()) EXPECT_EQ(v, 0.0f);
  float lo = 0, hi = 0;
  for (float v : a.w1()) {
    EXPECT_GE(v, -0.125f);
    EXPECT_LE(v, 0.125f);
    lo = std::min(lo, v), hi = std::max(hi, v);
  }
  // The bound is actually used, not something much tighter.
  EXPECT_LT(lo, -0.12f);
  EXPECT_GT(hi, 0.12f);
  const float b2 = std::sqrt(1.0f / 512);
  for (float v : a.w2()) EXPECT_LE(std::abs(v), b2);
  for (float v : oa.m.values()) EXPECT_EQ(v, 0.0f);
  for (float v : oa.v.values()) EXPECT_EQ(v, 0.0f);

  auto [c, oc] = init_params<float>(64, 512, 100);
  EXPECT_NE(a, c);
  EXPECT_THROW(init_params<float>(0, 4, 1), ConfigError);
}

TEST(Adapter, LayoutIsContiguousAndComplete) {
  const auto l = adapter_layout(5, 3);
  EXPECT_EQ(l[0].offset, 0u);
  for (std::size_t i = 1; i < l.size(); ++i) EXPECT_EQ(l[i].offset, l[i - 1].offset + l[i - 1].size);
  EXPECT_EQ(AdapterParams<double>::total_size(5, 3), 5u + 5 + 15 + 3 + 21 + 7);
  EXPECT_TRUE(l[2].decayed);
  EXPECT_TRUE(l[4].decayed);
  EXPECT_FALSE(l[0].decayed || l[1].decayed || l[3].decayed || l[5].decayed);
}

TEST(Adapter, SoftmaxIsAValidStrictlyPositiveDistribution) {
  Engine rng(4);
  auto [p, opt] = init_params<float>(16, 32, 4);
  ForwardCache<float> cache;
  for (int i = 0; i < 200; ++i) {
    const auto x = random_vector<float>(rng, 16, 5.0);
    const auto probs = forward<float>(p, x, {}, cache);
    double sum = 0;
    for (float v : probs) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Adapter, LayerNormMakesConstantShiftsInvisible) {
  Engine rng(5);
  auto [p, opt] = init_params<double>(12, 20, 5);
  for (double& v : p.values()) v += 0.1 * standard_normal(rng);
  const auto x = random_vector<double>(rng, 12);
  auto shifted = x;
  for (double& v : shifted) v += 3.75;
  const auto a = predict<double>(p, x);
  const auto b = predict<double>(p, shifted);
  for (std::size_t c = 0; c < 7; ++c) EXPECT_NEAR(a.probs[c], b.probs[c], 1e-12);
  EXPECT_EQ(a.label, b.label);
}

TEST(Adapter, ZeroOutputLayerGivesUniformProbsAndLossLn7) {
  Engine rng(6);
  auto [p, opt] = init_params<double>(8, 10, 6);
  for (double& v : p.w2()) v = 0;
  for (double& v : p.b2()) v = 0;
  const auto x = random_vector<double>(rng, 8);
  const auto pred = predict<double>(p, x);
  for (double v : pred.probs) EXPECT_DOUBLE_EQ(v, 1.0 / 7);
  for (double eps : {0.0, 0.05, 0.5}) {
    TrainingConfig cfg;
    cfg.label_smoothing = eps;
    const auto r = loss_and_grad<double>(p, x, Expression::kFear, cfg, {});
    EXPECT_NEAR(r.loss, std::log(7.0), 1e-12);
    EXPECT_NEAR(std::log(7.0), 1.9459, 1e-4);
  }
}

TEST(Adapter, PerfectPredictionWithoutSmoothingHasZeroLoss) {
  std::array<double, 7> onehot{};
  onehot[2] = 1.0;
  EXPECT_EQ(smoothed_cross_entropy<double>(onehot, Expression::kSad, 0.0), 0.0);
  EXPECT_GT(smoothed_cross_entropy<double>(std::array<double, 7>{0.1, 0.1, 0.4, 0.1, 0.1, 0.1, 0.1},
                                           Expression::kSad, 0.0),
            0.0);
}

TEST(Adapter, PredictionArgmaxAndTieBreak) {
  const std::array<double, 7> probs{0.5, 0.3, 0.2, 0, 0, 0, 0};
  const auto p = prediction_from_probs<double>(probs);
  EXPECT_EQ(p.label, Expression::kNeutral);
  EXPECT_EQ(p.confidence, 0.5);

  const std::array<double, 7> tie{0.1, 0.1, 0.3, 0.1, 0.3, 0.05, 0.05};
  const auto t = prediction_from_probs<double>(tie);
  EXPECT_EQ(t.label, Expression::kSad);
  EXPECT_EQ(t.confidence, 0.3);
}

TEST(Adapter, PredictIsDeterministicAndDoesNotMutate) {
  Engine rng(7);
  auto [p, opt] = init_params<float>(16, 32, 7);
  const auto before = parameter_hash(p, opt);
  const auto x = random_vector<float>(rng, 16);
  const auto a = predict<float>(p, x);
  const auto b = predict<float>(p, x);
  EXPECT_EQ(a.probs, b.probs);
  EXPECT_EQ(a.label, b.label);
  EXPECT_EQ(a.confidence, *std::max_element(a.probs.begin(), a.probs.end()));
  EXPECT_EQ(parameter_hash(p, opt), before);
}

TEST(Adapter, NonFiniteInputIsNumericError) {
  auto [p, opt] = init_params<float>(4, 4, 1);
  std::vector<float> x{1, 2, std::numeric_limits<float>::quiet_NaN(), 4};
  EXPECT_THROW(predict<float>(p, x), NumericError);
  x[2] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(loss_and_grad<float>(p, x, Expression::kHappy, TrainingConfig{}, {}), NumericError);
}

TEST(Adapter, DropoutMaskIsInvertedBernoulli) {
  Engine rng(12);
  const auto mask = draw_dropout_mask<float>(100000, 0.1, rng);
  std::size_t zeros = 0;
  for (float m : mask) {
    if (m == 0) ++zeros;
    else EXPECT_FLOAT_EQ(m, 1.0f / 0.9f);
  }
  EXPECT_NEAR(zeros / 100000.0, 0.1, 0.005);
  const auto none = draw_dropout_mask<float>(10, 0.0, rng);
  for (float m : none) EXPECT_EQ(m, 1.0f);
}

TEST(Adapter, AdamWZeroGradientsZeroDecayIsANoOp) {
  auto [p, opt] = init_params<double>(3, 4, 2);
  const auto before = p;
  AdapterParams<double> zero(3, 4);
  adamw_step(p, opt, zero, config_with(0.1, 0.0, 0.9, 0.999, 1e-8));
  EXPECT_EQ(p, before);
  EXPECT_EQ(opt.step, 1u);
}

TEST(Adapter, AdamWHandStepWithDegenerateBetas) {
  AdapterParams<double> p(1, 1), g(1, 1);
  OptimizerState<double> opt{AdapterParams<double>(1, 1), AdapterParams<double>(1, 1), 0};
  p.w1()[0] = 1.0;
  g.w1()[0] = 1.0;
  adamw_step(p, opt, g, config_with(0.1, 0.0, 0.0, 0.0, 0.0));
  EXPECT_DOUBLE_EQ(p.w1()[0], 0.9);
  EXPECT_EQ(opt.step, 1u);
}

TEST(Adapter, AdamWDecoupledDecayOnlyStep) {
  AdapterParams<double> p(1, 1), g(1, 1);
  OptimizerState<double> opt{AdapterParams<double>(1, 1), AdapterParams<double>(1, 1), 0};
  for (double& v : p.values()) v = 1.0;
  adamw_step(p, opt, g, config_with(0.1, 0.5, 0.9, 0.999, 1e-8));
  EXPECT_DOUBLE_EQ(p.w1()[0], 0.95);
  EXPECT_DOUBLE_EQ(p.w2()[0], 0.95);
  // Biases and LayerNorm parameters are not decayed.
  EXPECT_EQ(p.b1()[0], 1.0);
  EXPECT_EQ(p.b2()[0], 1.0);
  EXPECT_EQ(p.ln_gamma()[0], 1.0);
  EXPECT_EQ(p.ln_beta()[0], 1.0);
}

TEST(Adapter, AdamWBiasCorrectionMatchesHandComputation) {
  AdapterParams<double> p(1, 1), g(1, 1);
  OptimizerState<double> opt{AdapterParams<double>(1, 1), AdapterParams<double>(1, 1), 0};
  const auto cfg = config_with(0.01, 0.0, 0.9, 0.999, 1e-8);
  double theta = 0.5, m = 0, v = 0;
  p.b2()[0] = theta;
  for (int t = 1; t <= 5; ++t) {
    const double grad = 0.3 * t - 0.7;
    g.b2()[0] = grad;
    adamw_step(p, opt, g, cfg);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    theta -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.b2()[0], theta, 1e-12) << "step " << t;
  }
  for (double x : opt.v.values()) EXPECT_GE(x, 0.0);
}

TEST(Adapter, TrainingTrajectoryIsBitwiseReproducible) {
  auto run = [] {
    auto [p, opt] = init_params<float>(8, 16, 5);
    Engine data(1), drop(2);
    ForwardCache<float> cache;
    AdapterParams<float> grads;
    const TrainingConfig cfg;
    for (int i = 0; i < 50; ++i) {
      const auto x = random_vector<float>(data, 8);
      const auto mask = draw_dropout_mask<float>(16, 0.1, drop);
      loss_and_grad<float>(p, x, static_cast<Expression>(i % 7), 0.05, mask, cache, grads);
      adamw_step(p, opt, grads, cfg);
    }
    return parameter_hash(p, opt);
  };
  EXPECT_EQ(run(), run());
}

// 500 single-sample steps on a linearly separable 7-class set.
TEST(Adapter, LearnsASeparableProblem) {
  const std::size_t D = 16, H = 64;
  Engine rng(21);
  std::vector<std::vector<float>> centers;
  for (int c = 0; c < 7; ++c) centers.push_back(random_vector<float>(rng, D, 3.0));
  std::vector<std::vector<float>> xs;
  std::vector<Expression> ys;
  for (int c = 0; c < 7; ++c) {
    for (int k = 0; k < 10; ++k) {
      auto x = centers[c];
      for (float& v : x) v += static_cast<float>(0.3 * standard_normal(rng));
      xs.push_back(x);
      ys.push_back(static_cast<Expression>(c));
    }
  }
  auto [p, opt] = init_params<float>(D, H, 21);
  TrainingConfig cfg;
  cfg.hidden = H;
  ForwardCache<float> cache;
  AdapterParams<float> grads;
  for (int step = 0; step < 500; ++step) {
    const std::size_t i = uniform_index(rng, xs.size());
    const auto mask = draw_dropout_mask<float>(H, cfg.dropout, rng);
    loss_and_grad<float>(p, xs[i], ys[i], cfg.label_smoothing, mask, cache, grads);
    adamw_step(p, opt, grads, cfg);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) correct += predict<float>(p, xs[i]).label == ys[i];
  EXPECT_GE(correct / static_cast<double>(xs.size()), 0.95);
}

TEST(Adapter, CheckpointWritesHeaderAndTensors) {
  fersim::testing::TempDir dir("adapter");
  auto [p, opt] = init_params<float>(3, 2, 1);
  write_checkpoint(p, opt, dir / "ck.bin");
  const std::string bytes = fersim::testing::read_file(dir / "ck.bin");
  const auto nl = bytes.find('\n');
  ASSERT_NE(nl, std::string::npos);
  const auto header = nlohmann::json::parse(bytes.substr(0, nl));
  EXPECT_EQ(header.at("dim"), 3);
  EXPECT_EQ(bytes.size(), nl + 1 + 3 * p.size() * sizeof(float));
}
