#include "noiserefine/analysis/propositions.hpp"

#include "noiserefine/core/errors.hpp"
#include "noiserefine/training/trainers.hpp"

#include <algorithm>
#include <cmath>

namespace nr {

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("pearson: need two equal series of length >= 2");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

Prop1Report verify_prop1(const NoisePredictor& net, std::span<const NoisePair> pairs, const NoiseSchedule& schedule,
                         const InversionConfig& inversion) {
  if (pairs.empty()) throw InvalidArgument("verify_prop1: no pairs");
  const auto n = static_cast<Eigen::Index>(pairs.size());
  const auto d = static_cast<Eigen::Index>(pairs.front().xT.size());
  Matrix xT(d, n), guide(d, n);
  std::vector<Condition> conds;
  for (Eigen::Index j = 0; j < n; ++j) {
    const NoisePair& p = pairs[static_cast<std::size_t>(j)];
    xT.col(j) = p.xT.vec();
    guide.col(j) = p.x0_guide.vec();
    conds.push_back(p.c);
  }

  SampleTrace from_noise{0, true, {}};
  SampleTrace from_inverse{0, true, {}};
  const Matrix x0 = denoise(xT, conds, net, schedule, inversion.steps, nullptr, &from_noise);
  const Matrix inv = invert(guide, conds, net, schedule, inversion);
  denoise(inv, conds, net, schedule, inversion.steps, nullptr, &from_inverse);

  Prop1Report r;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double dn = (xT.col(j) - inv.col(j)).norm();
    const double di = (x0.col(j) - guide.col(j)).norm();
    if (!std::isfinite(dn) || !std::isfinite(di)) throw NumericError("verify_prop1: non-finite distance");
    r.noise_distance.push_back(dn);
    r.image_distance.push_back(di);
    // Inversion can only be exact up to round-off relative to |xT|.
    const bool exact = dn <= 1e-12 * std::max(1.0, xT.col(j).norm());
    r.ratio.push_back(exact ? 0.0 : dn / di);
  }
  r.kappa = *std::max_element(r.ratio.begin(), r.ratio.end());
  r.pearson = n >= 2 ? pearson_correlation(r.noise_distance, r.image_distance) : 0.0;

  const auto steps = rollout_pairs(schedule, inversion.steps);
  double growth = 1.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int t = steps[i].first;
    const Matrix& a = from_noise.states[i].x;
    const Matrix& b = from_inverse.states[i].x;
    const Matrix ea = net.predict(a, t, conds);
    const Matrix eb = net.predict(b, t, conds);
    double lip = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double dx = (a.col(j) - b.col(j)).norm();
      if (dx > 0.0) lip = std::max(lip, (ea.col(j) - eb.col(j)).norm() / dx);
    }
    r.t.push_back(t);
    r.lipschitz.push_back(lip);
    growth *= 1.0 + schedule.coefficients(t, steps[i].second).gamma * lip;
  }
  const double scale = growth * std::sqrt(schedule.alpha(steps.front().first) / schedule.alpha(0));
  std::size_t holds = 0;
  for (std::size_t j = 0; j < r.ratio.size(); ++j) {
    const double bound = scale * r.image_distance[j];
    const double br = r.ratio[j] == 0.0 ? 0.0 : r.noise_distance[j] / bound;
    r.bound_ratio.push_back(br);
    if (br <= 1.0) ++holds;
  }
  r.bound_holds_fraction = static_cast<double>(holds) / static_cast<double>(r.ratio.size());
  return r;
}

std::vector<double> rollout_eta(const NoisePredictor& net, const Vector& g, Condition c, const NoiseSchedule& schedule,
                                int steps) {
  const Eigen::Index d = g.size();
  ad::Tape tape;
  ad::Var start = tape.input(g.replicate(1, d));
  const std::vector<Condition> conds(static_cast<std::size_t>(d), c);
  std::vector<ad::Var> eps;
  ad::Var x = start;
  for (const auto& [t, t_prev] : rollout_pairs(schedule, steps)) {
    const StepCoefficients k = schedule.coefficients(t, t_prev);
    eps.push_back(net.predict(tape, x, t, conds));
    x = tape.axpby(k.a, x, k.b, eps.back());
  }
  const Matrix seed = Matrix::Identity(d, d);
  std::vector<double> eta;
  for (ad::Var e : eps) {
    tape.backward(e, seed);
    eta.push_back(tape.grad(start).trace() / static_cast<double>(d));
  }
  return eta;
}

double predicted_k(const NoiseSchedule& schedule, int steps, std::span<const double> eta) {
  const auto pairs = rollout_pairs(schedule, steps);
  if (eta.size() != pairs.size()) throw InvalidArgument("predicted_k: one eta per rollout step");
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [t, t_prev] = pairs[i];
    sum += schedule.coefficients(t, t_prev).gamma * eta[i] / std::sqrt(schedule.alpha(t_prev));
  }
  return 1.0 - std::sqrt(schedule.alpha(pairs.front().first)) * sum;
}

namespace {

Vector rollout_gradient(const RefinerNet& refiner, const NoisePredictor& net, const Prop2Batch& b,
                        const NoiseSchedule& schedule, const Prop2Config& cfg, GradientMode mode, double* loss) {
  Vector grad = Vector::Zero(refiner.backbone().params().size());
  ad::Tape tape;
  ad::Var x0 = msd_rollout(tape, refiner, &grad, net, b.xT, b.conds, schedule, cfg.steps, mode);
  ad::Var l = tape.scale(cfg.loss_scale, tape.mean_squared_error(x0, b.target));
  tape.backward(l);
  if (loss != nullptr) *loss = l.value()(0, 0);
  if (!grad.allFinite()) throw NumericError("verify_prop2: non-finite gradient");
  return grad;
}

}  // namespace

Prop2Report verify_prop2(const RefinerNet& refiner, const NoisePredictor& net, std::span<const Prop2Batch> batches,
                         const NoiseSchedule& schedule, const Prop2Config& cfg) {
  if (batches.empty()) throw InvalidArgument("verify_prop2: no batches");
  if (cfg.steps < 1) throw InvalidArgument("verify_prop2: steps must be positive");
  if (!(cfg.loss_scale > 0.0)) throw InvalidArgument("verify_prop2: loss scale must be positive");
  Prop2Report r;
  for (const Prop2Batch& b : batches) {
    if (b.xT.cols() < 1 || static_cast<std::size_t>(b.xT.cols()) != b.conds.size()) {
      throw ShapeMismatch("verify_prop2: one condition per column");
    }
    Prop2Row row;
    const Vector full = rollout_gradient(refiner, net, b, schedule, cfg, GradientMode::full, &row.loss);
    const Vector msd = rollout_gradient(refiner, net, b, schedule, cfg, GradientMode::msd, nullptr);
    row.full_norm = full.norm();
    row.msd_norm = msd.norm();
    if (row.msd_norm == 0.0 || row.full_norm == 0.0) throw NumericError("verify_prop2: vanishing gradient");
    const double dot = full.dot(msd);
    row.cosine = std::clamp(dot / (row.full_norm * row.msd_norm), -1.0, 1.0);
    row.k_hat = dot / (row.msd_norm * row.msd_norm);

    const int cols = std::min<int>(cfg.eta_columns, static_cast<int>(b.xT.cols()));
    if (cols > 0) {
      const auto nsteps = rollout_pairs(schedule, cfg.steps).size();
      row.eta.assign(nsteps, 0.0);
      const Matrix g = refiner.refine(b.xT.leftCols(cols), std::span(b.conds).first(static_cast<std::size_t>(cols)));
      for (int j = 0; j < cols; ++j) {
        const std::vector<double> e = rollout_eta(net, g.col(j), b.conds[static_cast<std::size_t>(j)], schedule, cfg.steps);
        for (std::size_t i = 0; i < nsteps; ++i) row.eta[i] += e[i] / cols;
      }
      row.k_predicted = predicted_k(schedule, cfg.steps, row.eta);
    }
    r.mean_cosine += row.cosine;
    r.mean_k_hat += row.k_hat;
    r.rows.push_back(std::move(row));
  }
  r.mean_cosine /= static_cast<double>(r.rows.size());
  r.mean_k_hat /= static_cast<double>(r.rows.size());
  return r;
}

}  // namespace nr
