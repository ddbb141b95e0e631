#pragma once

#include "noiserefine/core/rng.hpp"
#include "noiserefine/core/schedule.hpp"
#include "noiserefine/core/tensor.hpp"
#include "noiserefine/nets/tape.hpp"

#include <span>
#include <string>
#include <vector>

namespace nr {

/// Class label or the null condition used for unconditional prediction.
struct Condition {
  int id = -1;

  static constexpr Condition null() { return Condition{-1}; }
  static constexpr Condition of(int cls) { return Condition{cls}; }
  bool is_null() const { return id < 0; }
  friend bool operator==(Condition, Condition) = default;
};

std::vector<Condition> repeat_condition(Condition c, std::size_t n);

/// Architecture of the fully connected backbone shared by both networks.
struct MlpSpec {
  ImageShape image;
  int num_classes = 4;
  int time_dim = 32;
  int hidden = 512;
  int depth = 3;
  int steps = 100;  // diffusion step count T

  int image_size() const { return static_cast<int>(image.size()); }
  int input_size() const { return image_size() + time_dim + num_classes + 1; }
  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Named slice of a flat parameter vector.
struct ParamBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

/// Sinusoidal timestep embedding (sin half, cos half) stacked over one-hot
/// condition slots; the last slot is the null condition.
Matrix conditioning_features(const MlpSpec& spec, std::span<const int> ts, std::span<const Condition> conds);

/// Dense SiLU network whose parameters live in one flat vector.
/// Layer l stores its weight (column-major, out x in) then its bias.
class Mlp {
 public:
  Mlp(int input_size, int hidden, int depth, int output_size);

  /// Hidden layers ~ N(0, 1/fan_in), biases zero; output layer zero or the same law.
  void initialize(RngStream& rng, bool zero_output);

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  std::span<const ParamBlock> blocks() const { return blocks_; }
  int num_layers() const { return static_cast<int>(shapes_.size()); }
  int output_size() const { return shapes_.back().first; }

  ad::LinearParams layer(int l, Vector* grad = nullptr) const;

  Matrix forward(const Matrix& in) const;
  /// Activation feeding the output layer.
  Matrix last_hidden(const Matrix& in) const;
  ad::Var forward(ad::Tape& tape, ad::Var in, Vector* grad = nullptr) const;

 private:
  std::vector<std::pair<int, int>> shapes_;  // (out, in) per layer
  std::vector<Eigen::Index> offsets_;
  std::vector<ParamBlock> blocks_;
  Vector params_;
};

/// epsilon prediction eps(x, t, c). Columns of `x` are flattened images; every
/// column carries its own timestep and condition.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  virtual const MlpSpec& spec() const = 0;
  virtual Matrix predict_columns(const Matrix& x, std::span<const int> ts, std::span<const Condition> conds) const = 0;
  /// Records the prediction on `tape`; parameter gradients go to `grad` when given.
  virtual ad::Var predict_columns(ad::Tape& tape, ad::Var x, std::span<const int> ts,
                                  std::span<const Condition> conds, Vector* grad = nullptr) const = 0;

  /// Same timestep for every column.
  Matrix predict(const Matrix& x, int t, std::span<const Condition> conds) const;
  ad::Var predict(ad::Tape& tape, ad::Var x, int t, std::span<const Condition> conds, Vector* grad = nullptr) const;
  Tensor predict(const Tensor& x, int t, Condition c) const;

 protected:
  void validate(Eigen::Index rows, Eigen::Index cols, std::span<const int> ts, std::span<const Condition> conds) const;
};

/// How the backbone output m becomes eps.
/// noise: eps = m. velocity: eps = sqrt(1 - alpha_t) x + sqrt(alpha_t) m.
enum class Parameterization { noise, velocity };

/// The denoiser eps_theta: image ++ time embedding ++ condition one-hot -> noise.
class DenoiserNet final : public NoisePredictor {
 public:
  explicit DenoiserNet(MlpSpec spec);
  /// Velocity parameterization over the alphas of `schedule`.
  DenoiserNet(MlpSpec spec, const NoiseSchedule& schedule);

  static DenoiserNet random(MlpSpec spec, RngStream& rng, bool zero_output = true);
  static DenoiserNet random(MlpSpec spec, const NoiseSchedule& schedule, RngStream& rng, bool zero_output = true);

  const MlpSpec& spec() const override { return spec_; }
  Parameterization parameterization() const { return alphas_.empty() ? Parameterization::noise : Parameterization::velocity; }
  /// Alphas of the velocity parameterization; empty for noise output.
  const std::vector<double>& alphas() const { return alphas_; }
  Mlp& backbone() { return mlp_; }
  const Mlp& backbone() const { return mlp_; }

  Matrix predict_columns(const Matrix& x, std::span<const int> ts, std::span<const Condition> conds) const override;
  ad::Var predict_columns(ad::Tape& tape, ad::Var x, std::span<const int> ts, std::span<const Condition> conds,
                          Vector* grad = nullptr) const override;

 private:
  void skip_coefficients(std::span<const int> ts, Vector& skip, Vector& out) const;

  MlpSpec spec_;
  Mlp mlp_;
  std::vector<double> alphas_;
};

/// eps(x, t, c) = eta * x + offset(c). Constant when eta = 0; Jacobian eta * I.
class AffineStub final : public NoisePredictor {
 public:
  /// Same offset for every condition.
  AffineStub(MlpSpec spec, double eta, Vector offset);
  /// One offset per class followed by the null-condition offset.
  AffineStub(MlpSpec spec, double eta, std::vector<Vector> offsets);

  const MlpSpec& spec() const override { return spec_; }
  double eta() const { return eta_; }

  Matrix predict_columns(const Matrix& x, std::span<const int> ts, std::span<const Condition> conds) const override;
  ad::Var predict_columns(ad::Tape& tape, ad::Var x, std::span<const int> ts, std::span<const Condition> conds,
                          Vector* grad = nullptr) const override;

 private:
  Matrix offsets_for(std::span<const Condition> conds) const;

  MlpSpec spec_;
  double eta_;
  std::vector<Vector> offsets_;
};

/// Residual noise refiner g(x) = x + f(x, T, c); identity while f's output layer is zero.
class RefinerNet {
 public:
  explicit RefinerNet(MlpSpec spec);

  static RefinerNet identity(MlpSpec spec, RngStream& rng);

  const MlpSpec& spec() const { return spec_; }
  Mlp& backbone() { return mlp_; }
  const Mlp& backbone() const { return mlp_; }

  Matrix refine(const Matrix& xT, std::span<const Condition> conds) const;
  Tensor refine(const Tensor& xT, Condition c) const;
  ad::Var refine(ad::Tape& tape, ad::Var xT, std::span<const Condition> conds, Vector* grad = nullptr) const;
  /// Input to f's output layer, for probing linearity in the last layer.
  Matrix last_hidden(const Matrix& xT, std::span<const Condition> conds) const;

 private:
  Matrix features(const Matrix& xT, std::span<const Condition> conds) const;

  MlpSpec spec_;
  Mlp mlp_;
};

}  // namespace nr
