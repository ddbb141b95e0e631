#include "noiserefine/core/errors.hpp"
#include "noiserefine/sampler/sampler.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace nr {
namespace {

MlpSpec pixel_spec(int steps = 100) {
  MlpSpec s;
  s.image = {1, 1, 1};
  s.num_classes = 1;
  s.steps = steps;
  return s;
}

MlpSpec image_spec() {
  MlpSpec s;
  s.num_classes = 4;
  return s;
}

Vector constant(double v, Eigen::Index n = 1) { return Vector::Constant(n, v); }

TEST(GuidedScore, ZeroScalesReturnConditional) {
  const AffineStub net(pixel_spec(), 0.0, std::vector<Vector>{constant(1.0), constant(0.0)});
  const Matrix x = Matrix::Constant(1, 1, 0.3);
  const std::vector<Condition> c = {Condition::of(0)};
  long nfe = 0;
  EXPECT_EQ(guided_score(net, x, 5, c, GuidanceSpec{}, &nfe)(0, 0), 1.0);
  EXPECT_EQ(nfe, 1);
}

TEST(GuidedScore, CfgScalarStub) {
  const AffineStub net(pixel_spec(), 0.0, std::vector<Vector>{constant(1.0), constant(0.0)});
  const std::vector<Condition> c = {Condition::of(0)};
  long nfe = 0;
  EXPECT_DOUBLE_EQ(guided_score(net, Matrix::Zero(1, 1), 5, c, GuidanceSpec{7.5, 0.0, nullptr}, &nfe)(0, 0), 8.5);
  EXPECT_EQ(nfe, 2);
}

TEST(GuidedScore, EqualPredictorsCancel) {
  const AffineStub net(pixel_spec(), 0.2, constant(0.7));
  const Matrix x = Matrix::Constant(1, 3, -1.1);
  const auto c = repeat_condition(Condition::of(0), 3);
  const Matrix plain = net.predict(x, 9, c);
  for (double w : {0.5, 3.0, 7.5}) {
    for (double s : {0.0, 1.0, 2.5}) {
      const Matrix g = guided_score(net, x, 9, c, GuidanceSpec{w, s, &net});
      EXPECT_LT((g - plain).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
}

TEST(GuidedScore, DegradedScaleNeedsPredictor) {
  const AffineStub net(pixel_spec(), 0.0, constant(1.0));
  const std::vector<Condition> c = {Condition::of(0)};
  EXPECT_THROW(guided_score(net, Matrix::Zero(1, 1), 5, c, GuidanceSpec{0.0, 1.0, nullptr}), InvalidArgument);
  EXPECT_THROW(guided_score(net, Matrix::Zero(1, 1), 5, c, GuidanceSpec{-1.0, 0.0, nullptr}), InvalidArgument);
}

TEST(GuidedScore, ColumnScalesMatchScalarSpec) {
  const AffineStub net(pixel_spec(), 0.1, std::vector<Vector>{constant(1.0), constant(-0.5)});
  const AffineStub degraded(pixel_spec(), 0.3, constant(0.25));
  const Matrix x = (Matrix(1, 2) << 0.4, -0.9).finished();
  const auto c = repeat_condition(Condition::of(0), 2);
  const ColumnGuidance cg{(Vector(2) << 2.0, 4.0).finished(), (Vector(2) << 0.5, 3.0).finished(), &degraded};
  const Matrix both = guided_score(net, x, 7, c, cg);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const std::vector<Condition> one = {c[static_cast<std::size_t>(j)]};
    const Matrix col = guided_score(net, x.col(j), 7, one, GuidanceSpec{cg.cfg_scale[j], cg.degraded_scale[j], &degraded});
    EXPECT_DOUBLE_EQ(both(0, j), col(0, 0));
  }
}

TEST(DdimStep, ZeroEpsScalesByA) {
  const auto s = default_schedule();
  const Matrix x = Matrix::Constant(4, 2, 0.8);
  const auto next = ddim_step({x, 50}, Matrix::Zero(4, 2), s, 40);
  EXPECT_EQ(next.t, 40);
  EXPECT_EQ(next.x, s.coefficients(50, 40).a * x);
}

TEST(DdimStep, EqualAlphasLeaveStateUnchanged) {
  const auto s = NoiseSchedule::from_alphas({1.0, 0.6, 0.6, 0.2});
  const Matrix x = Matrix::Constant(3, 1, -0.4);
  EXPECT_EQ(ddim_step({x, 2}, Matrix::Constant(3, 1, 5.0), s, 1).x, x);
}

TEST(DdimStep, TwoStepClosedForm) {
  // alpha = [1, 0.5, 0.25], x = eps = 1.
  const auto s = NoiseSchedule::from_alphas({1.0, 0.5, 0.25});
  const Matrix ones = Matrix::Ones(1, 1);
  const auto s1 = ddim_step({ones, 2}, ones, s, 1);
  const double a1 = std::sqrt(2.0), b1 = std::sqrt(0.5) - std::sqrt(2.0) * std::sqrt(0.75);
  EXPECT_NEAR(s1.x(0, 0), a1 + b1, 1e-15);
  // Second substep: a = sqrt(2), b = -1, so x0 = 2 - sqrt(3).
  const auto s0 = ddim_step(s1, ones, s, 0);
  EXPECT_NEAR(s0.x(0, 0), 0.2679491924311228, 1e-15);
}

TEST(DdimStep, RejectsNonDecreasingPair) {
  const auto s = default_schedule();
  EXPECT_THROW(ddim_step({Matrix::Zero(1, 1), 10}, Matrix::Zero(1, 1), s, 10), InvalidArgument);
  EXPECT_THROW(ddim_step({Matrix::Zero(1, 1), 10}, Matrix::Zero(1, 1), s, 12), InvalidArgument);
}

TEST(DdpmStep, ZeroSigmaMatchesDdim) {
  const auto s = default_schedule();
  RngStream rng(1, 0);
  const Matrix x = rng.normal_matrix(5, 3);
  const Matrix eps = rng.normal_matrix(5, 3);
  const Matrix z = rng.normal_matrix(5, 3);
  const auto a = ddpm_step({x, 60}, eps, s, 50, z, 0.0);
  const auto b = ddim_step({x, 60}, eps, s, 50);
  EXPECT_LT((a.x - b.x).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(DdpmStep, NoiseVarianceMatchesSigma) {
  const auto s = default_schedule();
  RngStream rng(2, 0);
  const int n = 10000;
  const Matrix x = Matrix::Constant(1, n, 0.3);
  const Matrix eps = Matrix::Constant(1, n, -0.2);
  const Matrix z = rng.normal_matrix(1, n);
  const Matrix out = ddpm_step({x, 30}, eps, s, 29, z).x;
  const Matrix mean_step = ddpm_step({x, 30}, eps, s, 29, Matrix::Zero(1, n)).x;
  const double var = (out - mean_step).squaredNorm() / n;
  const double sigma = s.sigma(30, 29, 1.0);
  // Standard error of a variance estimate is sigma^2 sqrt(2 / n).
  EXPECT_NEAR(var, sigma * sigma, 4.0 * sigma * sigma * std::sqrt(2.0 / n));
}

TEST(Rollout, PairsEndAtZero) {
  const auto s = default_schedule();
  const auto p = rollout_pairs(s, 10);
  ASSERT_EQ(p.size(), 10u);
  EXPECT_EQ(p.front().first, 100);
  EXPECT_EQ(p.back().second, 0);
  for (std::size_t i = 0; i + 1 < p.size(); ++i) EXPECT_EQ(p[i].second, p[i + 1].first);
  EXPECT_THROW(rollout_pairs(s, 0), InvalidArgument);
  EXPECT_THROW(rollout_pairs(s, 101), InvalidArgument);
}

TEST(Denoise, OneStepWithTrueNoiseRecoversImage) {
  const auto s = default_schedule();
  RngStream rng(3, 0);
  const Matrix x0 = rng.normal_matrix(256, 1);
  const Matrix eps = rng.normal_matrix(256, 1);
  const Matrix xT = forward_diffuse(x0, 100, eps, s);
  const AffineStub oracle(image_spec(), 0.0, Vector(eps.col(0)));
  const std::vector<Condition> c = {Condition::of(0)};
  EXPECT_LT((denoise(xT, c, oracle, s, 1) - x0).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Denoise, ZeroGuidanceIsBitIdentical) {
  const auto s = default_schedule();
  RngStream rng(4, 0);
  const auto net = DenoiserNet::random(image_spec(), rng, false);
  const Matrix xT = rng.normal_matrix(256, 4);
  const auto c = repeat_condition(Condition::of(2), 4);
  const GuidanceSpec zero{};
  EXPECT_EQ(denoise(xT, c, net, s, 10, &zero), denoise(xT, c, net, s, 10));
  const ColumnGuidance zero_cols{Vector::Zero(4), Vector::Zero(4), nullptr};
  EXPECT_EQ(denoise(xT, c, net, s, 10, zero_cols), denoise(xT, c, net, s, 10));
}

TEST(Denoise, EvaluationCounts) {
  const auto s = default_schedule();
  const AffineStub net(image_spec(), 0.1, constant(0.0, 256));
  const Matrix xT = Matrix::Ones(256, 3);
  const auto c = repeat_condition(Condition::of(1), 3);
  const GuidanceSpec cfg{4.0, 0.0, nullptr};
  const GuidanceSpec both{4.0, 2.5, &net};
  SampleTrace u, g1, g2;
  denoise(xT, c, net, s, 10, nullptr, &u);
  denoise(xT, c, net, s, 10, &cfg, &g1);
  denoise(xT, c, net, s, 10, &both, &g2);
  EXPECT_EQ(u.nfe, 10);
  EXPECT_EQ(g1.nfe, 20);
  EXPECT_EQ(g2.nfe, 30);
}

TEST(Denoise, TraceRecordsEveryState) {
  const auto s = default_schedule();
  const AffineStub net(image_spec(), 0.1, constant(0.0, 256));
  SampleTrace trace;
  trace.record = true;
  const auto c = repeat_condition(Condition::of(0), 1);
  const Matrix out = denoise(Matrix::Ones(256, 1), c, net, s, 5, nullptr, &trace);
  ASSERT_EQ(trace.states.size(), 6u);
  EXPECT_EQ(trace.states.front().t, 100);
  EXPECT_EQ(trace.states.back().t, 0);
  EXPECT_EQ(trace.states.back().x, out);
}

TEST(Invert, ConstantDenoiserRoundTripIsExact) {
  const auto s = default_schedule();
  RngStream rng(5, 0);
  const AffineStub net(image_spec(), 0.0, Vector(rng.normal_matrix(256, 1).col(0)));
  const Matrix xT = rng.normal_matrix(256, 3);
  const auto c = repeat_condition(Condition::of(3), 3);
  const InversionConfig cfg{1, 10};
  const Matrix x0 = denoise(xT, c, net, s, 10);
  const Matrix back = invert(x0, c, net, s, cfg);
  EXPECT_LT((back - xT).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((denoise(back, c, net, s, 10) - x0).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Invert, ZeroIterationsIsPlainDdimInversion) {
  const auto s = default_schedule();
  RngStream rng(6, 0);
  const auto net = DenoiserNet::random(image_spec(), rng, false);
  const Matrix x0 = rng.normal_matrix(256, 2);
  const auto c = repeat_condition(Condition::of(1), 2);
  Matrix x = x0;
  const auto pairs = rollout_pairs(s, 4);
  for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) {
    const auto k = s.coefficients(it->first, it->second);
    x = (x - k.b * net.predict(x, it->first, c)) / k.a;
  }
  EXPECT_EQ(invert(x0, c, net, s, InversionConfig{0, 4}), x);
}

TEST(Invert, Deterministic) {
  const auto s = default_schedule();
  RngStream rng(7, 0);
  const auto net = DenoiserNet::random(image_spec(), rng, false);
  const Matrix x0 = rng.normal_matrix(256, 2);
  const auto c = repeat_condition(Condition::of(0), 2);
  EXPECT_EQ(invert(x0, c, net, s, InversionConfig{}), invert(x0, c, net, s, InversionConfig{}));
  EXPECT_THROW(invert(x0, c, net, s, InversionConfig{-1, 10}), InvalidArgument);
}

TEST(Invert, DivergingIterationThrows) {
  // eps = 50 x makes every fixed-point map strongly expansive.
  const auto s = default_schedule();
  const AffineStub net(image_spec(), 50.0, constant(0.0, 256));
  const auto c = repeat_condition(Condition::of(0), 1);
  EXPECT_THROW(invert(Matrix::Ones(256, 1), c, net, s, InversionConfig{10, 10}), NumericError);
}

}  // namespace
}  // namespace nr
