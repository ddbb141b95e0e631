#include "noiserefine/nets/networks.hpp"

#include "noiserefine/core/errors.hpp"

#include <cmath>

namespace nr {

std::vector<Condition> repeat_condition(Condition c, std::size_t n) { return std::vector<Condition>(n, c); }

Matrix conditioning_features(const MlpSpec& spec, std::span<const int> ts, std::span<const Condition> conds) {
  if (ts.size() != conds.size()) throw ShapeMismatch("conditioning: one timestep per condition");
  const auto cols = static_cast<Eigen::Index>(conds.size());
  Matrix f = Matrix::Zero(spec.time_dim + spec.num_classes + 1, cols);
  const int half = spec.time_dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double t = ts[static_cast<std::size_t>(j)];
      f(i, j) = std::sin(t * freq);
      f(half + i, j) = std::cos(t * freq);
    }
  }
  for (Eigen::Index j = 0; j < cols; ++j) {
    const Condition c = conds[static_cast<std::size_t>(j)];
    const int slot = c.is_null() ? spec.num_classes : c.id;
    f(spec.time_dim + slot, j) = 1.0;
  }
  return f;
}

Mlp::Mlp(int input_size, int hidden, int depth, int output_size) {
  if (input_size < 1 || hidden < 1 || depth < 1 || output_size < 1) {
    throw InvalidArgument("mlp: sizes must be positive");
  }
  int in = input_size;
  for (int l = 0; l < depth; ++l) {
    shapes_.emplace_back(hidden, in);
    in = hidden;
  }
  shapes_.emplace_back(output_size, in);
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < shapes_.size(); ++l) {
    const auto [o, i] = shapes_[l];
    offsets_.push_back(off);
    blocks_.push_back({"layer" + std::to_string(l) + ".weight", off, Eigen::Index{o} * i});
    off += Eigen::Index{o} * i;
    blocks_.push_back({"layer" + std::to_string(l) + ".bias", off, o});
    off += o;
  }
  params_ = Vector::Zero(off);
}

void Mlp::initialize(RngStream& rng, bool zero_output) {
  params_.setZero();
  for (int l = 0; l < num_layers(); ++l) {
    if (zero_output && l == num_layers() - 1) break;
    const auto [o, i] = shapes_[static_cast<std::size_t>(l)];
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(i));
    double* w = params_.data() + offsets_[static_cast<std::size_t>(l)];
    for (Eigen::Index k = 0; k < Eigen::Index{o} * i; ++k) w[k] = std_dev * rng.normal();
  }
}

ad::LinearParams Mlp::layer(int l, Vector* grad) const {
  const auto [o, i] = shapes_.at(static_cast<std::size_t>(l));
  const Eigen::Index off = offsets_[static_cast<std::size_t>(l)];
  const Eigen::Index boff = off + Eigen::Index{o} * i;
  double* gbase = grad != nullptr ? grad->data() : nullptr;
  return ad::LinearParams{Eigen::Map<const Matrix>(params_.data() + off, o, i),
                          Eigen::Map<const Vector>(params_.data() + boff, o),
                          gbase != nullptr ? gbase + off : nullptr, gbase != nullptr ? gbase + boff : nullptr};
}

Matrix Mlp::last_hidden(const Matrix& in) const {
  Matrix h = in;
  for (int l = 0; l + 1 < num_layers(); ++l) h = ad::silu_forward(ad::dense_forward(layer(l), h));
  return h;
}

Matrix Mlp::forward(const Matrix& in) const { return ad::dense_forward(layer(num_layers() - 1), last_hidden(in)); }

ad::Var Mlp::forward(ad::Tape& tape, ad::Var in, Vector* grad) const {
  if (grad != nullptr && grad->size() != params_.size()) throw ShapeMismatch("mlp: gradient sink has wrong size");
  ad::Var h = in;
  for (int l = 0; l + 1 < num_layers(); ++l) h = tape.silu(tape.linear(h, layer(l, grad)));
  return tape.linear(h, layer(num_layers() - 1, grad));
}

Matrix NoisePredictor::predict(const Matrix& x, int t, std::span<const Condition> conds) const {
  const std::vector<int> ts(conds.size(), t);
  return predict_columns(x, ts, conds);
}

ad::Var NoisePredictor::predict(ad::Tape& tape, ad::Var x, int t, std::span<const Condition> conds, Vector* grad) const {
  const std::vector<int> ts(conds.size(), t);
  return predict_columns(tape, x, ts, conds, grad);
}

Tensor NoisePredictor::predict(const Tensor& x, int t, Condition c) const {
  const Condition conds[] = {c};
  Matrix col = x.vec();
  return Tensor::from_column(predict(col, t, conds), 0, x.shape());
}

void NoisePredictor::validate(Eigen::Index rows, Eigen::Index cols, std::span<const int> ts,
                              std::span<const Condition> conds) const {
  const MlpSpec& s = spec();
  if (rows != s.image_size()) {
    throw ShapeMismatch("noise predictor: expected " + std::to_string(s.image_size()) + " rows, got " +
                        std::to_string(rows));
  }
  if (static_cast<std::size_t>(cols) != conds.size() || ts.size() != conds.size()) {
    throw ShapeMismatch("noise predictor: one timestep and condition per column");
  }
  for (int t : ts) {
    if (t < 1 || t > s.steps) throw InvalidArgument("noise predictor: timestep " + std::to_string(t) + " outside [1, T]");
  }
  for (Condition c : conds) {
    if (c.id >= s.num_classes || c.id < -1) throw InvalidArgument("noise predictor: invalid class " + std::to_string(c.id));
  }
}

DenoiserNet::DenoiserNet(MlpSpec spec)
    : spec_(spec), mlp_(spec.input_size(), spec.hidden, spec.depth, spec.image_size()) {}

DenoiserNet::DenoiserNet(MlpSpec spec, const NoiseSchedule& schedule) : DenoiserNet(spec) {
  if (schedule.steps() != spec.steps) throw InvalidArgument("denoiser: schedule T differs from the network's T");
  alphas_.assign(schedule.alphas().begin(), schedule.alphas().end());
}

DenoiserNet DenoiserNet::random(MlpSpec spec, RngStream& rng, bool zero_output) {
  DenoiserNet net(spec);
  net.mlp_.initialize(rng, zero_output);
  return net;
}

DenoiserNet DenoiserNet::random(MlpSpec spec, const NoiseSchedule& schedule, RngStream& rng, bool zero_output) {
  DenoiserNet net(spec, schedule);
  net.mlp_.initialize(rng, zero_output);
  return net;
}

void DenoiserNet::skip_coefficients(std::span<const int> ts, Vector& skip, Vector& out) const {
  skip.resize(static_cast<Eigen::Index>(ts.size()));
  out.resize(static_cast<Eigen::Index>(ts.size()));
  for (std::size_t j = 0; j < ts.size(); ++j) {
    const double a = alphas_[static_cast<std::size_t>(ts[j])];
    skip[static_cast<Eigen::Index>(j)] = std::sqrt(1.0 - a);
    out[static_cast<Eigen::Index>(j)] = std::sqrt(a);
  }
}

Matrix DenoiserNet::predict_columns(const Matrix& x, std::span<const int> ts, std::span<const Condition> conds) const {
  validate(x.rows(), x.cols(), ts, conds);
  Matrix in(spec_.input_size(), x.cols());
  in << x, conditioning_features(spec_, ts, conds);
  if (alphas_.empty()) return mlp_.forward(in);
  Vector skip, out;
  skip_coefficients(ts, skip, out);
  return ad::column_axpby_forward(skip, x, out, mlp_.forward(in));
}

ad::Var DenoiserNet::predict_columns(ad::Tape& tape, ad::Var x, std::span<const int> ts,
                                     std::span<const Condition> conds, Vector* grad) const {
  validate(x.rows(), x.cols(), ts, conds);
  ad::Var m = mlp_.forward(tape, tape.append_rows(x, conditioning_features(spec_, ts, conds)), grad);
  if (alphas_.empty()) return m;
  Vector skip, out;
  skip_coefficients(ts, skip, out);
  return tape.column_axpby(skip, x, out, m);
}

AffineStub::AffineStub(MlpSpec spec, double eta, Vector offset)
    : AffineStub(spec, eta, std::vector<Vector>(static_cast<std::size_t>(spec.num_classes) + 1, offset)) {}

AffineStub::AffineStub(MlpSpec spec, double eta, std::vector<Vector> offsets)
    : spec_(spec), eta_(eta), offsets_(std::move(offsets)) {
  if (offsets_.size() != static_cast<std::size_t>(spec_.num_classes) + 1) {
    throw InvalidArgument("affine stub: need one offset per class plus the null condition");
  }
  for (const Vector& o : offsets_) {
    if (o.size() != spec_.image_size()) throw ShapeMismatch("affine stub: offset must be image-sized");
  }
}

Matrix AffineStub::offsets_for(std::span<const Condition> conds) const {
  Matrix m(spec_.image_size(), static_cast<Eigen::Index>(conds.size()));
  for (std::size_t j = 0; j < conds.size(); ++j) {
    const int slot = conds[j].is_null() ? spec_.num_classes : conds[j].id;
    m.col(static_cast<Eigen::Index>(j)) = offsets_[static_cast<std::size_t>(slot)];
  }
  return m;
}

Matrix AffineStub::predict_columns(const Matrix& x, std::span<const int> ts, std::span<const Condition> conds) const {
  validate(x.rows(), x.cols(), ts, conds);
  return eta_ * x + offsets_for(conds);
}

ad::Var AffineStub::predict_columns(ad::Tape& tape, ad::Var x, std::span<const int> ts,
                                    std::span<const Condition> conds, Vector*) const {
  validate(x.rows(), x.cols(), ts, conds);
  return tape.add_constant(tape.scale(eta_, x), offsets_for(conds));
}

RefinerNet::RefinerNet(MlpSpec spec)
    : spec_(spec), mlp_(spec.input_size(), spec.hidden, spec.depth, spec.image_size()) {}

RefinerNet RefinerNet::identity(MlpSpec spec, RngStream& rng) {
  RefinerNet net(spec);
  net.mlp_.initialize(rng, true);
  return net;
}

Matrix RefinerNet::features(const Matrix& xT, std::span<const Condition> conds) const {
  if (xT.rows() != spec_.image_size()) throw ShapeMismatch("refiner: input is not image-sized");
  if (static_cast<std::size_t>(xT.cols()) != conds.size()) throw ShapeMismatch("refiner: one condition per column");
  for (Condition c : conds) {
    if (c.id >= spec_.num_classes || c.id < -1) throw InvalidArgument("refiner: invalid class " + std::to_string(c.id));
  }
  const std::vector<int> ts(conds.size(), spec_.steps);
  Matrix in(spec_.input_size(), xT.cols());
  in << xT, conditioning_features(spec_, ts, conds);
  return in;
}

Matrix RefinerNet::refine(const Matrix& xT, std::span<const Condition> conds) const {
  return xT + mlp_.forward(features(xT, conds));
}

Tensor RefinerNet::refine(const Tensor& xT, Condition c) const {
  const Condition conds[] = {c};
  Matrix col = xT.vec();
  return Tensor::from_column(refine(col, conds), 0, xT.shape());
}

ad::Var RefinerNet::refine(ad::Tape& tape, ad::Var xT, std::span<const Condition> conds, Vector* grad) const {
  const Matrix extra = features(xT.value(), conds).bottomRows(spec_.input_size() - spec_.image_size());
  ad::Var f = mlp_.forward(tape, tape.append_rows(xT, extra), grad);
  return tape.add(xT, f);
}

Matrix RefinerNet::last_hidden(const Matrix& xT, std::span<const Condition> conds) const {
  return mlp_.last_hidden(features(xT, conds));
}

}  // namespace nr
