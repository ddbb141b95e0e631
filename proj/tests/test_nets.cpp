#include "noiserefine/core/errors.hpp"
#include "noiserefine/nets/adam.hpp"
#include "noiserefine/nets/checkpoint.hpp"
#include "noiserefine/nets/networks.hpp"
#include "noiserefine/nets/tape.hpp"
#include "noiserefine/training/trainers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>

namespace nr {
namespace {

MlpSpec mini_spec() {
  MlpSpec s;
  s.image = {1, 4, 4};
  s.num_classes = 2;
  s.time_dim = 4;
  s.hidden = 8;
  s.depth = 3;
  s.steps = 10;
  return s;
}

NoiseSchedule mini_schedule() { return NoiseSchedule::linear(10, 0.01, 0.3); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Central differences of `f` with respect to params[i].
double central_difference(Vector& params, Eigen::Index i, const std::function<double()>& f, double h = 1e-5) {
  const double keep = params[i];
  params[i] = keep + h;
  const double up = f();
  params[i] = keep - h;
  const double down = f();
  params[i] = keep;
  return (up - down) / (2.0 * h);
}

TEST(Denoiser, ZeroInitOutputsZero) {
  RngStream rng(1, 0);
  const auto net = DenoiserNet::random(MlpSpec{}, rng, true);
  const Matrix x = rng.normal_matrix(256, 3);
  const std::vector<int> ts = {1, 50, 100};
  const auto conds = std::vector<Condition>{Condition::of(0), Condition::null(), Condition::of(3)};
  EXPECT_TRUE(net.predict_columns(x, ts, conds).isZero(0.0));
}

TEST(Denoiser, Deterministic) {
  RngStream rng(2, 0);
  const auto net = DenoiserNet::random(mini_spec(), rng, false);
  const Tensor x = rng.normal_tensor({1, 4, 4});
  EXPECT_EQ(net.predict(x, 3, Condition::of(1)), net.predict(x, 3, Condition::of(1)));
}

TEST(Denoiser, RejectsInvalidTimestepOrClass) {
  RngStream rng(3, 0);
  const auto net = DenoiserNet::random(mini_spec(), rng, false);
  const Tensor x = rng.normal_tensor({1, 4, 4});
  EXPECT_THROW(net.predict(x, 0, Condition::of(0)), InvalidArgument);
  EXPECT_THROW(net.predict(x, 11, Condition::of(0)), InvalidArgument);
  EXPECT_THROW(net.predict(x, 5, Condition::of(2)), InvalidArgument);
  EXPECT_THROW(net.predict(Tensor::zeros({1, 2, 2}), 5, Condition::of(0)), ShapeMismatch);
}

TEST(Denoiser, TapeMatchesInferenceBitwise) {
  RngStream rng(4, 0);
  const auto sched = mini_schedule();
  for (const auto& net : {DenoiserNet::random(mini_spec(), rng, false),
                          DenoiserNet::random(mini_spec(), sched, rng, false)}) {
    const Matrix x = rng.normal_matrix(16, 5);
    const std::vector<int> ts = {1, 2, 5, 9, 10};
    const auto conds = std::vector<Condition>{Condition::of(0), Condition::null(), Condition::of(1),
                                              Condition::of(0), Condition::null()};
    ad::Tape tape;
    EXPECT_EQ(net.predict_columns(tape, tape.constant(x), ts, conds).value(), net.predict_columns(x, ts, conds));
  }
}

TEST(Denoiser, VelocityOutputAtZeroInit) {
  RngStream rng(5, 0);
  const auto sched = mini_schedule();
  const auto net = DenoiserNet::random(mini_spec(), sched, rng, true);
  EXPECT_EQ(net.parameterization(), Parameterization::velocity);
  const Tensor x = rng.normal_tensor({1, 4, 4});
  const Tensor eps = net.predict(x, 4, Condition::of(0));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(eps[i], std::sqrt(1.0 - sched.alpha(4)) * x[i]);
}

void check_denoiser_gradient(const DenoiserNet& proto) {
  DenoiserNet net = proto;
  RngStream rng(6, 0);
  const Matrix x = rng.normal_matrix(16, 3);
  const std::vector<int> ts = {2, 7, 10};
  const auto conds = std::vector<Condition>{Condition::of(1), Condition::null(), Condition::of(0)};
  Vector grad = Vector::Zero(net.backbone().params().size());
  ad::Tape tape;
  tape.backward(tape.sum(net.predict_columns(tape, tape.constant(x), ts, conds, &grad)));
  auto f = [&] { return net.predict_columns(x, ts, conds).sum(); };
  double worst = 0.0;
  for (int probe = 0; probe < 20; ++probe) {
    const auto i = static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(grad.size()) - 1));
    worst = std::max(worst, rel_err(grad[i], central_difference(net.backbone().params(), i, f)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Denoiser, GradientMatchesFiniteDifferences) {
  RngStream rng(7, 0);
  check_denoiser_gradient(DenoiserNet::random(mini_spec(), rng, false));
  check_denoiser_gradient(DenoiserNet::random(mini_spec(), mini_schedule(), rng, false));
}

TEST(Refiner, IdentityAtInit) {
  RngStream rng(8, 0);
  const auto refiner = RefinerNet::identity(MlpSpec{}, rng);
  const Matrix x = rng.normal_matrix(256, 4);
  const auto conds = repeat_condition(Condition::of(2), 4);
  EXPECT_EQ(refiner.refine(x, conds), x);
  ad::Tape tape;
  EXPECT_EQ(refiner.refine(tape, tape.constant(x), conds).value(), x);
}

TEST(Refiner, GradientMatchesFiniteDifferences) {
  RngStream rng(9, 0);
  RefinerNet refiner(mini_spec());
  refiner.backbone().initialize(rng, false);
  const Matrix x = rng.normal_matrix(16, 4);
  const auto conds = std::vector<Condition>{Condition::of(0), Condition::of(1), Condition::of(1), Condition::of(0)};
  Vector grad = Vector::Zero(refiner.backbone().params().size());
  ad::Tape tape;
  tape.backward(tape.sum(refiner.refine(tape, tape.constant(x), conds, &grad)));
  auto f = [&] { return refiner.refine(x, conds).sum(); };
  double worst = 0.0;
  for (int probe = 0; probe < 20; ++probe) {
    const auto i = static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(grad.size()) - 1));
    worst = std::max(worst, rel_err(grad[i], central_difference(refiner.backbone().params(), i, f)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Refiner, OutputLayerIsLinearInItsWeights) {
  RngStream rng(10, 0);
  RefinerNet refiner(mini_spec());
  refiner.backbone().initialize(rng, false);
  const Matrix x = rng.normal_matrix(16, 3);
  const auto conds = repeat_condition(Condition::of(1), 3);
  const Matrix before = refiner.refine(x, conds);
  const Matrix hidden = refiner.last_hidden(x, conds);
  const int last = refiner.backbone().num_layers() - 1;
  const auto block = refiner.backbone().blocks()[static_cast<std::size_t>(2 * last)];
  const int out = refiner.backbone().output_size();
  const int row = 5, col = 3;  // weight entry (row, col), column-major
  const double delta = 0.37;
  refiner.backbone().params()[block.offset + row + col * out] += delta;
  const Matrix after = refiner.refine(x, conds);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double expected = i == row ? delta * hidden(col, j) : 0.0;
      EXPECT_NEAR(after(i, j) - before(i, j), expected, 1e-12);
    }
  }
}

TEST(Tape, DetachBlocksGradient) {
  RngStream rng(11, 0);
  Mlp mlp(3, 4, 1, 2);
  mlp.initialize(rng, false);
  const Matrix x = rng.normal_matrix(3, 2);
  Vector g1 = Vector::Zero(mlp.params().size());
  {
    ad::Tape tape;
    tape.backward(tape.sum(tape.detach(mlp.forward(tape, tape.constant(x), &g1))));
  }
  EXPECT_TRUE(g1.isZero(0.0));

  Vector g_f = Vector::Zero(mlp.params().size());
  Vector g_sum = Vector::Zero(mlp.params().size());
  {
    ad::Tape tape;
    tape.backward(tape.sum(mlp.forward(tape, tape.constant(x), &g_f)));
  }
  {
    ad::Tape tape;
    ad::Var f = mlp.forward(tape, tape.constant(x), &g_sum);
    ad::Var g = tape.scale(3.0, mlp.forward(tape, tape.constant(2.0 * x), &g_sum));
    tape.backward(tape.sum(tape.add(f, tape.detach(g))));
  }
  EXPECT_EQ(g_sum, g_f);
}

TEST(Tape, DetachIsValueTransparent) {
  ad::Tape tape;
  RngStream rng(12, 0);
  const Matrix m = rng.normal_matrix(4, 4);
  EXPECT_EQ(tape.detach(tape.constant(m)).value(), m);
}

TEST(Tape, InputGradientsMatchFiniteDifferences) {
  RngStream rng(13, 0);
  Mlp mlp(5, 6, 2, 5);
  mlp.initialize(rng, false);
  Matrix x = rng.normal_matrix(5, 3);
  const Vector a = rng.normal_matrix(3, 1).col(0);
  const Vector b = rng.normal_matrix(3, 1).col(0);
  const Matrix target = rng.normal_matrix(5, 3);
  auto build = [&](ad::Tape& tape, ad::Var in) {
    ad::Var y = mlp.forward(tape, in);
    ad::Var z = tape.column_axpby(a, y, b, in);
    return tape.mean_squared_error(tape.add_constant(z, target), Matrix::Zero(5, 3));
  };
  ad::Tape tape;
  ad::Var in = tape.input(x);
  tape.backward(build(tape, in));
  const Matrix g = tape.grad(in);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    auto eval = [&](double v) {
      x.data()[i] = v;
      ad::Tape t2;
      const double out = build(t2, t2.constant(x)).value()(0, 0);
      x.data()[i] = keep;
      return out;
    };
    const double fd = (eval(keep + 1e-5) - eval(keep - 1e-5)) / 2e-5;
    EXPECT_LT(rel_err(g.data()[i], fd), 1e-6);
  }
}

TEST(Tape, GradientsAddAcrossBatch) {
  RngStream rng(14, 0);
  Mlp mlp(3, 4, 2, 3);
  mlp.initialize(rng, false);
  const Matrix x = rng.normal_matrix(3, 4);
  auto grad_of = [&](const Matrix& cols) {
    Vector g = Vector::Zero(mlp.params().size());
    ad::Tape tape;
    tape.backward(tape.sum(mlp.forward(tape, tape.constant(cols), &g)));
    return g;
  };
  Vector parts = Vector::Zero(mlp.params().size());
  for (Eigen::Index j = 0; j < 4; ++j) parts += grad_of(x.col(j));
  EXPECT_LT((grad_of(x) - parts).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Adam, ZeroGradientKeepsParameters) {
  Vector p = Vector::LinSpaced(5, -1.0, 1.0);
  const Vector before = p;
  AdamState st;
  adam_step(p, Vector::Zero(5), st, AdamConfig{});
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ConstantGradientStepApproachesLr) {
  Vector p = Vector::Zero(1);
  AdamState st;
  const AdamConfig cfg{0.01};
  double last = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const double before = p[0];
    adam_step(p, Vector::Constant(1, 0.3), st, cfg);
    last = before - p[0];
  }
  EXPECT_NEAR(last, 0.01, 1e-6);
}

TEST(Adam, ScalarQuadraticConverges) {
  Vector p = Vector::Constant(1, 3.0);
  AdamState st;
  const AdamConfig cfg{1e-2};
  int steps = 0;
  while (std::abs(p[0] - 1.25) >= 1e-6 && steps < 5000) {
    adam_step(p, Vector::Constant(1, 2.0 * (p[0] - 1.25)), st, cfg);
    ++steps;
  }
  EXPECT_LT(std::abs(p[0] - 1.25), 1e-6);
  EXPECT_LE(steps, 5000);
}

TEST(Adam, NonFiniteGradientNamesBlock) {
  Mlp mlp(2, 3, 1, 2);
  Vector g = Vector::Zero(mlp.params().size());
  g[mlp.blocks()[1].offset] = std::nan("");
  AdamState st;
  try {
    adam_step(mlp.params(), g, st, AdamConfig{}, mlp.blocks());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer0.bias"), std::string::npos);
  }
  EXPECT_THROW(adam_step(mlp.params(), Vector::Zero(g.size()), st, AdamConfig{0.0}), InvalidArgument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "nr_test_ck";
  std::filesystem::create_directories(dir);
  RngStream rng(15, 0);
  const auto sched = mini_schedule();
  const auto net = DenoiserNet::random(mini_spec(), sched, rng, false);
  save_denoiser(dir / "d.ck", net, 123, 9);
  const auto back = load_denoiser(dir / "d.ck");
  EXPECT_EQ(back.backbone().params(), net.backbone().params());
  EXPECT_EQ(back.spec(), net.spec());
  EXPECT_EQ(back.alphas(), net.alphas());
  EXPECT_EQ(load_checkpoint(dir / "d.ck").header.step, 123);

  RefinerNet refiner(mini_spec());
  refiner.backbone().initialize(rng, false);
  save_refiner(dir / "r.ck", refiner, 7, 1);
  EXPECT_EQ(load_refiner(dir / "r.ck").backbone().params(), refiner.backbone().params());
  EXPECT_THROW(load_denoiser(dir / "r.ck"), IoError);
  EXPECT_THROW(load_denoiser(dir / "missing.ck"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Msd, ConstantDenoiserOneStepMatchesFullGradient) {
  RngStream rng(16, 0);
  const auto spec = mini_spec();
  const auto sched = mini_schedule();
  RefinerNet refiner(spec);
  refiner.backbone().initialize(rng, false);
  const AffineStub constant(spec, 0.0, Vector(rng.normal_matrix(16, 1).col(0)));
  const Matrix xT = rng.normal_matrix(16, 3);
  const Matrix target = rng.normal_matrix(16, 3);
  const auto conds = repeat_condition(Condition::of(0), 3);
  const auto full = refiner_gradient(refiner, constant, xT, conds, target, sched, 1, GradientMode::full);
  const auto msd = refiner_gradient(refiner, constant, xT, conds, target, sched, 1, GradientMode::msd);
  EXPECT_EQ(full.grad, msd.grad);
  EXPECT_EQ(full.x0, msd.x0);
}

}  // namespace
}  // namespace nr
