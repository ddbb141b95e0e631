#include "noiserefine/analysis/probes.hpp"

#include "noiserefine/core/errors.hpp"
#include "noiserefine/sampler/sampler.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace nr {

Matrix input_jacobian(const NoisePredictor& net, const Vector& x, int t, Condition c) {
  const Eigen::Index d = x.size();
  if (d != net.spec().image_size()) throw ShapeMismatch("input_jacobian: input is not image-sized");
  ad::Tape tape;
  ad::Var in = tape.input(x.replicate(1, d));
  const std::vector<Condition> conds(static_cast<std::size_t>(d), c);
  ad::Var out = net.predict(tape, in, t, conds);
  tape.backward(out, Matrix::Identity(d, d));
  // Column j of the input gradient is row j of J.
  return tape.grad(in).transpose();
}

Matrix finite_difference_jacobian(const NoisePredictor& net, const Vector& x, int t, Condition c, double h) {
  const Eigen::Index d = x.size();
  Matrix probes(d, 2 * d);
  for (Eigen::Index j = 0; j < d; ++j) {
    probes.col(2 * j) = x;
    probes.col(2 * j + 1) = x;
    probes(j, 2 * j) += h;
    probes(j, 2 * j + 1) -= h;
  }
  const std::vector<Condition> conds(static_cast<std::size_t>(2 * d), c);
  const Matrix out = net.predict(probes, t, conds);
  Matrix jac(out.rows(), d);
  for (Eigen::Index j = 0; j < d; ++j) jac.col(j) = (out.col(2 * j) - out.col(2 * j + 1)) / (2.0 * h);
  return jac;
}

JacobianReport summarize_jacobian(int t, Matrix jacobian) {
  if (jacobian.rows() != jacobian.cols() || jacobian.rows() < 2) {
    throw ShapeMismatch("jacobian summary: need a square matrix of size >= 2");
  }
  require_finite(jacobian, "jacobian");
  const auto n = static_cast<double>(jacobian.rows());
  const double diag = jacobian.diagonal().cwiseAbs().sum();
  double off = 0.0;
  for (Eigen::Index j = 0; j < jacobian.cols(); ++j) {
    for (Eigen::Index i = 0; i < jacobian.rows(); ++i) {
      if (i != j) off += std::abs(jacobian(i, j));
    }
  }
  JacobianReport r;
  r.t = t;
  r.mean_abs_diag = diag / n;
  r.mean_abs_offdiag = off / (n * n - n);
  if (r.mean_abs_offdiag > 0.0) {
    r.ratio = r.mean_abs_diag / r.mean_abs_offdiag;
  } else {
    r.ratio = r.mean_abs_diag > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  r.jacobian = std::move(jacobian);
  return r;
}

JacobianReport jacobian_probe(const NoisePredictor& net, const Tensor& x, int t, Condition c) {
  return summarize_jacobian(t, input_jacobian(net, x.vec(), t, c));
}

namespace {

GammaPoint gamma_point(const NoiseSchedule& schedule, int t, int t_prev) {
  const StepCoefficients c = schedule.coefficients(t, t_prev);
  const double ap = schedule.alpha(t_prev);
  return {t, t_prev, schedule.alpha(t), ap, c.gamma / std::sqrt(ap)};
}

}  // namespace

std::vector<GammaPoint> gamma_curve(const NoiseSchedule& schedule) {
  std::vector<GammaPoint> out;
  for (int t = 1; t <= schedule.steps(); ++t) out.push_back(gamma_point(schedule, t, t - 1));
  return out;
}

std::vector<GammaPoint> gamma_curve(const NoiseSchedule& schedule, int steps) {
  std::vector<GammaPoint> out;
  for (const auto& [t, t_prev] : rollout_pairs(schedule, steps)) out.push_back(gamma_point(schedule, t, t_prev));
  return out;
}

Vector slerp(const Vector& x1, const Vector& x2, double a) {
  if (x1.size() != x2.size()) throw ShapeMismatch("slerp: sizes differ");
  if (!x1.allFinite() || !x2.allFinite() || !std::isfinite(a)) throw NumericError("slerp: non-finite input");
  const double n1 = x1.norm();
  const double n2 = x2.norm();
  if (n1 == 0.0 || n2 == 0.0) throw InvalidArgument("slerp: zero input has no direction");
  if (a == 0.0) return x1;
  if (a == 1.0) return x2;
  if (x1 == x2) return x1;
  const Vector u1 = x1 / n1;
  const Vector u2 = x2 / n2;
  const double theta = 2.0 * std::atan2((u1 - u2).norm(), (u1 + u2).norm());
  if (std::numbers::pi - theta < 1e-12) throw InvalidArgument("slerp: inputs are antipodal, great circle undefined");
  const double norm = (1.0 - a) * n1 + a * n2;
  if (theta < 1e-12) return norm * u1;
  const double s = std::sin(theta);
  return norm * ((std::sin((1.0 - a) * theta) / s) * u1 + (std::sin(a * theta) / s) * u2);
}

Tensor slerp(const Tensor& x1, const Tensor& x2, double a) {
  require_same_shape(x1, x2, "slerp");
  const Vector v = slerp(Vector(x1.vec()), Vector(x2.vec()), a);
  return Tensor(x1.shape(), std::vector<double>(v.data(), v.data() + v.size()));
}

Matrix cross_condition_probe(const RefinerNet& refiner, const NoisePredictor& net, const Matrix& xT,
                             std::span<const Condition> c_refine, std::span<const Condition> c_denoise,
                             const NoiseSchedule& schedule, int steps) {
  for (Condition c : c_refine) {
    if (c.is_null()) throw InvalidArgument("cross_condition_probe: the refiner needs a class condition");
  }
  return denoise(refiner.refine(xT, c_refine), c_denoise, net, schedule, steps);
}

Tensor cross_condition_probe(const RefinerNet& refiner, const NoisePredictor& net, const Tensor& xT,
                             Condition c_refine, Condition c_denoise, const NoiseSchedule& schedule, int steps) {
  const Condition cr[] = {c_refine};
  const Condition cd[] = {c_denoise};
  const Matrix out = cross_condition_probe(refiner, net, Matrix(xT.vec()), cr, cd, schedule, steps);
  return Tensor::from_column(out, 0, xT.shape());
}

Matrix class_templates(const ShapesDataset& data, std::size_t count, std::uint64_t offset) {
  if (count == 0) throw InvalidArgument("class_templates: count must be positive");
  Matrix t(static_cast<Eigen::Index>(data.image_shape().size()), kNumShapeClasses);
  for (int c = 0; c < kNumShapeClasses; ++c) t.col(c) = data.class_samples(c, count, offset).rowwise().mean();
  return t;
}

std::vector<int> match_templates(const Matrix& residuals, const Matrix& templates) {
  if (residuals.rows() != templates.rows()) throw ShapeMismatch("match_templates: row counts differ");
  if (templates.cols() < 2) throw InvalidArgument("match_templates: need at least two templates");
  const Vector mean = templates.rowwise().mean();
  Matrix centered = templates.colwise() - mean;
  for (Eigen::Index k = 0; k < centered.cols(); ++k) {
    const double n = centered.col(k).norm();
    if (n > 0.0) centered.col(k) /= n;
  }
  std::vector<int> out;
  for (Eigen::Index j = 0; j < residuals.cols(); ++j) {
    const Vector score = centered.transpose() * residuals.col(j);
    Eigen::Index best = 0;
    score.maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace nr
