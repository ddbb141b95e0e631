// Command-line front end: training, pair generation, sampling, inversion,
// analysis probes and the acceptance suite, all driven by one config file.
#include "noiserefine/analysis/frequency.hpp"
#include "noiserefine/analysis/mmd.hpp"
#include "noiserefine/analysis/probes.hpp"
#include "noiserefine/analysis/propositions.hpp"
#include "noiserefine/cli/acceptance.hpp"
#include "noiserefine/cli/run_config.hpp"
#include "noiserefine/core/io.hpp"
#include "noiserefine/nets/checkpoint.hpp"
#include "noiserefine/training/dataset.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace nr {
namespace {

constexpr int kExitError = 1;
constexpr int kExitMissing = 2;
constexpr int kExitConfig = 3;
constexpr int kExitAcceptance = 4;

/// A required input artifact is absent.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir = "run";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

// Everything a command needs: the resolved config plus naming helpers.
class Context {
 public:
  Context(const Globals& g, const std::string& command) : dir_(g.run_dir), command_(command) {
    rc_ = g.config_path.empty() ? RunConfig() : RunConfig::load(g.config_path);
    for (const auto& o : g.overrides) rc_.set(o);
    if (g.seed) rc_.set("run.seed", std::to_string(*g.seed));
    if (g.threads) rc_.set("run.threads", std::to_string(*g.threads));
    schedule_.emplace(schedule_from(rc_));
    fs::create_directories(dir_);
    io::write_text(dir_ / ("config_" + rc_.hash() + ".cfg"), rc_.resolved());
  }

  const RunConfig& rc() const { return rc_; }
  const NoiseSchedule& schedule() const { return *schedule_; }
  const fs::path& dir() const { return dir_; }
  std::uint64_t seed() const { return rc_.get_u64("run.seed"); }

  /// <stem>_s<seed>_<hash>.<ext> inside the run directory.
  fs::path artifact(const std::string& stem, const std::string& ext) const {
    return dir_ / (stem + "_s" + std::to_string(seed()) + "_" + rc_.hash() + "." + ext);
  }

  RngStream stream(const std::string& name) const { return RngStream(seed(), RngStream::stream_id(name)); }

  DenoiserNet base() const { return load_model(dir_ / "base.ck", "train-base"); }
  DenoiserNet early() const { return load_model(dir_ / "early.ck", "train-base"); }
  bool has_refiner() const { return fs::exists(dir_ / "refiner.ck"); }
  RefinerNet refiner() const {
    require(dir_ / "refiner.ck", "train-refiner");
    return load_refiner(dir_ / "refiner.ck");
  }
  std::vector<NoisePair> pairs(const std::string& name) const {
    require(dir_ / name / "index.json", "gen-pairs");
    return load_pair_archive(dir_ / name);
  }

 private:
  static void require(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) throw MissingArtifact("missing " + p.string() + " (run '" + producer + "' first)");
  }
  DenoiserNet load_model(const fs::path& p, const std::string& producer) const {
    require(p, producer);
    return load_denoiser(p);
  }

  fs::path dir_;
  std::string command_;
  RunConfig rc_;
  std::optional<NoiseSchedule> schedule_;
};

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(const fs::path& path, const std::string& header, const std::vector<std::vector<double>>& rows) {
  std::string out = header + "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_number(row[i]);
    out += "\n";
  }
  io::write_text(path, out);
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

Tensor batch_tensor(const Matrix& m, const ImageShape& shape) {
  return Tensor({static_cast<std::size_t>(m.cols()), shape.channels, shape.height, shape.width},
                std::vector<double>(m.data(), m.data() + m.size()));
}

Matrix batch_matrix(const Tensor& t, const ImageShape& shape) {
  if (t.rank() == 3) return t.vec();
  if (t.rank() != 4 || Shape(t.shape().begin() + 1, t.shape().end()) != shape.shape()) {
    throw ShapeMismatch("expected [n, C, H, W] images, got " + shape_string(t.shape()));
  }
  return Eigen::Map<const Matrix>(t.data().data(), static_cast<Eigen::Index>(shape.size()),
                                  static_cast<Eigen::Index>(t.dim(0)));
}

void save_grid(const fs::path& path, const Matrix& m, const ImageShape& shape, std::size_t cols) {
  const auto images = unstack_columns(m, shape.shape());
  io::save_pgm(path, io::tile_grid(images, std::min(cols, images.size())));
}

Condition condition_of(long id) { return id < 0 ? Condition::null() : Condition::of(static_cast<int>(id)); }

void print_log_row(const TrainLogRow& r) {
  std::cerr << "step " << r.step << " loss " << r.loss << " grad_norm " << r.grad_norm << "\n";
}

// ---- commands ------------------------------------------------------------------

int cmd_train_base(const Context& ctx) {
  const BaseTrainConfig cfg = base_config_from(ctx.rc());
  const ShapesDataset data(ctx.seed(), static_cast<std::size_t>(ctx.rc().get_int("data.pool_size")));
  const auto res = train_base(data, ctx.schedule(), cfg, print_log_row);
  save_denoiser(ctx.dir() / "base.ck", res.model, cfg.steps, cfg.seed);
  save_denoiser(ctx.dir() / "early.ck", res.early, static_cast<long>(std::ceil(cfg.early_fraction * cfg.steps)),
                cfg.seed);
  io::write_text(ctx.dir() / "base_log.csv", log_csv(res.log));
  return 0;
}

int cmd_gen_pairs(const Context& ctx) {
  const DenoiserNet net = ctx.base();
  const DenoiserNet early = ctx.early();
  const PairGenConfig cfg = pair_config_from(ctx.rc());
  const auto pairs = gen_pairs(net, &early, ctx.schedule(), cfg, static_cast<std::size_t>(ctx.rc().get_int("pairs.count")));
  save_pair_archive(ctx.dir() / "pairs", pairs);
  const auto kept = filter_pairs(pairs, ctx.rc().get_double("pairs.filter_q"));
  save_pair_archive(ctx.dir() / "pairs_filtered", kept);
  std::cerr << "wrote " << pairs.size() << " pairs, " << kept.size() << " after filtering\n";
  return 0;
}

int cmd_train_refiner(const Context& ctx) {
  const DenoiserNet net = ctx.base();
  const RefinerTrainConfig cfg = refiner_config_from(ctx.rc());
  RngStream init = ctx.stream("refiner.init");
  RefinerNet refiner = RefinerNet::identity(net.spec(), init);
  std::unique_ptr<PairSource> source;
  std::optional<DenoiserNet> early;
  if (ctx.rc().get("refiner.source") == "offline") {
    source = std::make_unique<StoredPairSource>(ctx.pairs("pairs_filtered"));
  } else {
    early.emplace(ctx.early());
    source = std::make_unique<OnlinePairSource>(net, &*early, ctx.schedule(), pair_config_from(ctx.rc()));
  }
  const auto res = train_refiner(std::move(refiner), net, *source, ctx.schedule(), cfg, print_log_row);
  save_refiner(ctx.dir() / "refiner.ck", res.refiner, cfg.steps, cfg.seed);
  io::write_text(ctx.dir() / "refiner_log.csv", log_csv(res.log));
  return 0;
}

int cmd_sample(const Context& ctx, bool refined, bool trajectory) {
  const RunConfig& rc = ctx.rc();
  const DenoiserNet net = ctx.base();
  const auto n = static_cast<Eigen::Index>(rc.get_int("sampler.count"));
  const auto conds = repeat_condition(condition_of(rc.get_int("sampler.class")), static_cast<std::size_t>(n));
  RngStream rng = ctx.stream("sample.noise");
  Matrix xT = rng.normal_matrix(net.spec().image_size(), n);
  if (refined) xT = ctx.refiner().refine(xT, conds);

  const double w = rc.get_double("guidance.w");
  const double s = rc.get_double("guidance.s");
  const double eta = rc.get_double("sampler.eta");
  const int steps = static_cast<int>(rc.get_int("sampler.N"));
  std::optional<DenoiserNet> early;
  if (s != 0.0) early.emplace(ctx.early());
  const GuidanceSpec g{w, s, early ? &*early : nullptr};

  SampleTrace trace;
  trace.record = trajectory;
  Matrix x0;
  if (eta > 0.0) {
    if (w != 0.0 || s != 0.0) throw ConfigError("ancestral sampling (sampler.eta > 0) does not take guidance");
    RngStream z = ctx.stream("sample.ancestral");
    x0 = ddpm_sample(xT, conds, net, ctx.schedule(), steps, z, eta);
  } else {
    x0 = denoise(xT, conds, net, ctx.schedule(), steps, &g, &trace);
  }
  const std::string stem = refined ? "sample_refined" : "sample";
  const ImageShape& shape = net.spec().image;
  save_grid(ctx.artifact(stem, "pgm"), x0, shape, 8);
  io::save_tensor(ctx.artifact(stem, "nft"), batch_tensor(x0, shape));
  if (trajectory) {
    const fs::path dir = ctx.dir() / (stem + "_trajectory_s" + std::to_string(ctx.seed()) + "_" + rc.hash());
    fs::create_directories(dir);
    for (std::size_t i = 0; i < trace.states.size(); ++i) {
      char name[48];
      std::snprintf(name, sizeof name, "step%02zu_t%03d.nft", i, trace.states[i].t);
      io::save_tensor(dir / name, batch_tensor(trace.states[i].x, shape));
    }
  }
  write_json(ctx.artifact(stem, "json"), {{"count", n}, {"nfe", trace.nfe}, {"steps", steps}, {"w", w}, {"s", s}});
  return 0;
}

int cmd_invert(const Context& ctx, const std::string& input) {
  const DenoiserNet net = ctx.base();
  const ImageShape& shape = net.spec().image;
  Matrix x0;
  std::vector<Condition> conds;
  if (!input.empty()) {
    x0 = batch_matrix(io::load_tensor(input), shape);
    conds = repeat_condition(condition_of(ctx.rc().get_int("sampler.class")), static_cast<std::size_t>(x0.cols()));
  } else {
    const auto pairs = ctx.pairs("pairs");
    const auto n = std::min<std::size_t>(pairs.size(), static_cast<std::size_t>(ctx.rc().get_int("sampler.count")));
    x0.resize(shape.size(), static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
      x0.col(static_cast<Eigen::Index>(j)) = pairs[j].x0_guide.vec();
      conds.push_back(pairs[j].c);
    }
  }
  const InversionConfig cfg = inversion_config_from(ctx.rc());
  const Matrix noise = invert(x0, conds, net, ctx.schedule(), cfg);
  const Matrix back = denoise(noise, conds, net, ctx.schedule(), cfg.steps);
  std::vector<std::vector<double>> rows;
  for (Eigen::Index j = 0; j < x0.cols(); ++j) {
    rows.push_back({static_cast<double>(j), (back.col(j) - x0.col(j)).squaredNorm() / static_cast<double>(x0.rows())});
  }
  io::save_tensor(ctx.artifact("inverted", "nft"), batch_tensor(noise, shape));
  write_csv(ctx.artifact("invert", "csv"), "index,roundtrip_mse", rows);
  write_json(ctx.artifact("invert", "json"),
             {{"count", x0.cols()},
              {"k", cfg.fixed_point_iters},
              {"mean_roundtrip_mse", (back - x0).squaredNorm() / static_cast<double>(x0.size())}});
  return 0;
}

// Noise batch and its refined counterpart for the frequency probes.
struct RefinedNoise {
  Matrix xT;
  Matrix refined;
  std::vector<Condition> conds;
};

RefinedNoise refined_noise(const Context& ctx, const RefinerNet& refiner) {
  const auto n = static_cast<Eigen::Index>(ctx.rc().get_int("analysis.samples"));
  RefinedNoise r;
  r.conds = repeat_condition(condition_of(ctx.rc().get_int("analysis.class")), static_cast<std::size_t>(n));
  RngStream rng = ctx.stream("analysis.noise");
  r.xT = rng.normal_matrix(refiner.spec().image_size(), n);
  r.refined = refiner.refine(r.xT, r.conds);
  return r;
}

int analyze_hist(const Context& ctx) {
  const RefinerNet refiner = ctx.refiner();
  const RefinedNoise r = refined_noise(ctx, refiner);
  const int bins = static_cast<int>(ctx.rc().get_int("analysis.bins"));
  const double range = ctx.rc().get_double("analysis.hist_range");
  const Histogram h = diff_histogram(r.refined, r.xT, bins, range);
  RngStream rng = ctx.stream("analysis.random_pairs");
  const Matrix a = rng.normal_matrix(r.xT.rows(), r.xT.cols());
  const Matrix b = rng.normal_matrix(r.xT.rows(), r.xT.cols());
  const Histogram base = diff_histogram(a, b, bins, range);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < bins; ++i) {
    rows.push_back({h.edges[i], h.edges[i + 1], static_cast<double>(h.counts[i]), h.density[i], base.density[i]});
  }
  write_csv(ctx.artifact("hist", "csv"), "lo,hi,count,density,random_density", rows);
  write_json(ctx.artifact("hist", "json"),
             {{"mean_abs", h.mean_abs}, {"random_mean_abs", base.mean_abs}, {"samples", h.samples}});
  return 0;
}

int analyze_bands(const Context& ctx) {
  const RefinerNet refiner = ctx.refiner();
  const RefinedNoise r = refined_noise(ctx, refiner);
  BandEnergyConfig bc;
  bc.baseline_draws = static_cast<int>(ctx.rc().get_int("analysis.baseline_draws"));
  bc.seed = ctx.seed();
  const BandReport b = band_energy(r.refined - r.xT, refiner.spec().image, ctx.rc().get_doubles("analysis.band_edges"), bc);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < b.bands(); ++i) {
    rows.push_back({b.edges[i], b.edges[i + 1], static_cast<double>(b.bin_count[i]), b.energy[i], b.fraction[i],
                    b.baseline_fraction[i], b.baseline_std[i]});
  }
  write_csv(ctx.artifact("bands", "csv"), "lo,hi,bins,energy,fraction,baseline_fraction,baseline_std", rows);
  write_json(ctx.artifact("bands", "json"),
             {{"total_energy", b.total_energy}, {"partition_error", b.partition_error}, {"inputs", b.inputs}});
  return 0;
}

BandSwapMode band_mode(const std::string& m) {
  if (m == "replace_band") return BandSwapMode::replace_band;
  if (m == "keep_only") return BandSwapMode::keep_only;
  if (m == "keep_and_reinit") return BandSwapMode::keep_and_reinit;
  throw ConfigError("'analysis.band_mode' must be replace_band, keep_only or keep_and_reinit");
}

int analyze_band_swap(const Context& ctx) {
  const DenoiserNet net = ctx.base();
  const RefinerNet refiner = ctx.refiner();
  const RefinedNoise r = refined_noise(ctx, refiner);
  const ImageShape& shape = net.spec().image;
  const Band band{ctx.rc().get_double("analysis.band_lo"), ctx.rc().get_double("analysis.band_hi")};
  const BandSwapMode mode = band_mode(ctx.rc().get("analysis.band_mode"));
  RngStream rng = ctx.stream("analysis.reinit");
  Matrix hybrid(r.xT.rows(), r.xT.cols());
  for (Eigen::Index j = 0; j < r.xT.cols(); ++j) {
    const Tensor x = Tensor::from_column(r.xT, j, shape.shape());
    const Tensor y = Tensor::from_column(r.refined, j, shape.shape());
    const Tensor z = rng.normal_tensor(shape.shape());
    hybrid.col(j) = band_swap_probe(x, y, band, mode, &z).vec();
  }
  const int steps = static_cast<int>(ctx.rc().get_int("sampler.N"));
  const Matrix out_plain = denoise(r.xT, r.conds, net, ctx.schedule(), steps);
  const Matrix out_refined = denoise(r.refined, r.conds, net, ctx.schedule(), steps);
  const Matrix out_hybrid = denoise(hybrid, r.conds, net, ctx.schedule(), steps);
  std::vector<std::vector<double>> rows;
  for (Eigen::Index j = 0; j < r.xT.cols(); ++j) {
    const double d = static_cast<double>(r.xT.rows());
    rows.push_back({static_cast<double>(j), (out_hybrid.col(j) - out_refined.col(j)).squaredNorm() / d,
                    (out_hybrid.col(j) - out_plain.col(j)).squaredNorm() / d});
  }
  write_csv(ctx.artifact("band_swap", "csv"), "index,mse_to_refined,mse_to_plain", rows);
  const Eigen::Index cols = std::min<Eigen::Index>(8, r.xT.cols());
  Matrix grid(r.xT.rows(), 3 * cols);
  grid << out_plain.leftCols(cols), out_refined.leftCols(cols), out_hybrid.leftCols(cols);
  save_grid(ctx.artifact("band_swap", "pgm"), grid, shape, static_cast<std::size_t>(cols));
  write_json(ctx.artifact("band_swap", "json"),
             {{"band", {band.lo, band.hi}}, {"mode", ctx.rc().get("analysis.band_mode")}, {"count", r.xT.cols()}});
  return 0;
}

int analyze_jacobian(const Context& ctx) {
  const DenoiserNet net = ctx.base();
  RngStream rng = ctx.stream("analysis.jacobian");
  const Tensor x = rng.normal_tensor(net.spec().image.shape());
  const int t = static_cast<int>(ctx.rc().get_int("analysis.t"));
  const JacobianReport r = jacobian_probe(net, x, t, condition_of(ctx.rc().get_int("analysis.class")));
  write_csv(ctx.artifact("jacobian", "csv"), "t,mean_abs_diag,mean_abs_offdiag,ratio",
            {{static_cast<double>(t), r.mean_abs_diag, r.mean_abs_offdiag, r.ratio}});
  const Matrix a = r.jacobian.cwiseAbs();
  io::save_pgm(ctx.artifact("jacobian", "pgm"),
               Tensor({static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(a.cols())},
                      std::vector<double>(a.data(), a.data() + a.size())));
  write_json(ctx.artifact("jacobian", "json"),
             {{"t", t}, {"mean_abs_diag", r.mean_abs_diag}, {"mean_abs_offdiag", r.mean_abs_offdiag},
              {"ratio", r.ratio}});
  return 0;
}

int analyze_gamma(const Context& ctx) {
  std::vector<std::vector<double>> rows;
  for (const GammaPoint& p : gamma_curve(ctx.schedule())) {
    rows.push_back({static_cast<double>(p.t), static_cast<double>(p.t_prev), p.alpha, p.alpha_prev, p.value});
  }
  write_csv(ctx.artifact("gamma", "csv"), "t,t_prev,alpha,alpha_prev,value", rows);
  rows.clear();
  const int steps = static_cast<int>(ctx.rc().get_int("sampler.N"));
  for (const GammaPoint& p : gamma_curve(ctx.schedule(), steps)) {
    rows.push_back({static_cast<double>(p.t), static_cast<double>(p.t_prev), p.alpha, p.alpha_prev, p.value});
  }
  write_csv(ctx.artifact("gamma_rollout", "csv"), "t,t_prev,alpha,alpha_prev,value", rows);
  write_json(ctx.artifact("gamma", "json"), {{"T", ctx.schedule().steps()}, {"rollout_steps", steps}});
  return 0;
}

int analyze_prop1(const Context& ctx) {
  const DenoiserNet net = ctx.base();
  auto pairs = ctx.pairs("pairs");
  pairs.resize(std::min<std::size_t>(pairs.size(), static_cast<std::size_t>(ctx.rc().get_int("analysis.prop1_pairs"))));
  const Prop1Report r = verify_prop1(net, pairs, ctx.schedule(), inversion_config_from(ctx.rc()));
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < r.noise_distance.size(); ++i) {
    rows.push_back({static_cast<double>(i), r.noise_distance[i], r.image_distance[i], r.ratio[i], r.bound_ratio[i]});
  }
  write_csv(ctx.artifact("prop1", "csv"), "index,noise_distance,image_distance,ratio,bound_ratio", rows);
  rows.clear();
  for (std::size_t i = 0; i < r.t.size(); ++i) rows.push_back({static_cast<double>(r.t[i]), r.lipschitz[i]});
  write_csv(ctx.artifact("prop1_lipschitz", "csv"), "t,lipschitz", rows);
  write_json(ctx.artifact("prop1", "json"), {{"pairs", pairs.size()},
                                              {"pearson", r.pearson},
                                              {"kappa", r.kappa},
                                              {"bound_holds_fraction", r.bound_holds_fraction}});
  return 0;
}

int analyze_prop2(const Context& ctx) {
  const DenoiserNet net = ctx.base();
  RngStream init = ctx.stream("refiner.init");
  const RefinerNet refiner = ctx.has_refiner() ? ctx.refiner() : RefinerNet::identity(net.spec(), init);
  StoredPairSource source(ctx.pairs("pairs"));
  RngStream rng = ctx.stream("analysis.prop2");
  std::vector<Prop2Batch> batches;
  const auto count = ctx.rc().get_int("analysis.prop2_batches");
  for (long b = 0; b < count; ++b) {
    PairBatch pb = source.next(rng, static_cast<std::size_t>(ctx.rc().get_int("analysis.prop2_batch")));
    batches.push_back({std::move(pb.xT), std::move(pb.conds), std::move(pb.target)});
  }
  Prop2Config cfg;
  cfg.steps = static_cast<int>(ctx.rc().get_int("analysis.prop2_N"));
  const Prop2Report r = verify_prop2(refiner, net, batches, ctx.schedule(), cfg);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const Prop2Row& row = r.rows[i];
    rows.push_back({static_cast<double>(i), row.loss, row.cosine, row.k_hat, row.k_predicted, row.full_norm,
                    row.msd_norm});
  }
  write_csv(ctx.artifact("prop2", "csv"), "batch,loss,cosine,k_hat,k_predicted,full_norm,msd_norm", rows);
  write_json(ctx.artifact("prop2", "json"),
             {{"N", cfg.steps}, {"mean_cosine", r.mean_cosine}, {"mean_k_hat", r.mean_k_hat}});
  return 0;
}

int analyze_slerp(const Context& ctx) {
  const DenoiserNet net = ctx.base();
  const ImageShape& shape = net.spec().image;
  RngStream rng = ctx.stream("analysis.slerp");
  const Vector x1 = rng.normal_matrix(shape.size(), 1).col(0);
  const Vector x2 = rng.normal_matrix(shape.size(), 1).col(0);
  const auto points = static_cast<int>(ctx.rc().get_int("analysis.slerp_points"));
  if (points < 2) throw ConfigError("'analysis.slerp_points' must be at least 2");
  Matrix noise(shape.size(), points);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < points; ++i) {
    const double a = static_cast<double>(i) / (points - 1);
    noise.col(i) = slerp(x1, x2, a);
    rows.push_back({a, noise.col(i).norm()});
  }
  const auto conds = repeat_condition(condition_of(ctx.rc().get_int("analysis.class")), static_cast<std::size_t>(points));
  if (ctx.has_refiner()) noise = ctx.refiner().refine(noise, conds);
  const Matrix out = denoise(noise, conds, net, ctx.schedule(), static_cast<int>(ctx.rc().get_int("sampler.N")));
  write_csv(ctx.artifact("slerp", "csv"), "ratio,noise_norm", rows);
  save_grid(ctx.artifact("slerp", "pgm"), out, shape, static_cast<std::size_t>(points));
  write_json(ctx.artifact("slerp", "json"), {{"points", points}, {"refined", ctx.has_refiner()}});
  return 0;
}

int analyze_cross_cond(const Context& ctx) {
  const DenoiserNet net = ctx.base();
  const RefinerNet refiner = ctx.refiner();
  const ImageShape& shape = net.spec().image;
  const auto n = static_cast<Eigen::Index>(ctx.rc().get_int("analysis.samples"));
  RngStream rng = ctx.stream("analysis.cross_cond");
  const Matrix xT = rng.normal_matrix(shape.size(), n);
  const Condition cr = condition_of(ctx.rc().get_int("analysis.c_refine"));
  const Condition cd = condition_of(ctx.rc().get_int("analysis.c_denoise"));
  const auto refine_conds = repeat_condition(cr, static_cast<std::size_t>(n));
  const auto denoise_conds = repeat_condition(cd, static_cast<std::size_t>(n));
  const int steps = static_cast<int>(ctx.rc().get_int("sampler.N"));
  const Matrix out = cross_condition_probe(refiner, net, xT, refine_conds, denoise_conds, ctx.schedule(), steps);
  const Matrix plain = denoise(xT, denoise_conds, net, ctx.schedule(), steps);
  const ShapesDataset data(ctx.seed());
  const Matrix templates = class_templates(data, 256, 1ULL << 40);
  const auto match = match_templates(out - plain, templates);
  std::vector<std::vector<double>> rows;
  int hits = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    rows.push_back({static_cast<double>(j), static_cast<double>(match[j])});
    hits += match[j] == cr.id ? 1 : 0;
  }
  write_csv(ctx.artifact("cross_cond", "csv"), "index,matched_class", rows);
  const Eigen::Index cols = std::min<Eigen::Index>(8, n);
  Matrix grid(shape.size(), 2 * cols);
  grid << plain.leftCols(cols), out.leftCols(cols);
  save_grid(ctx.artifact("cross_cond", "pgm"), grid, shape, static_cast<std::size_t>(cols));
  write_json(ctx.artifact("cross_cond", "json"),
             {{"c_refine", cr.id}, {"c_denoise", cd.id}, {"match_fraction", static_cast<double>(hits) / n}});
  return 0;
}

int analyze_mmd(const Context& ctx) {
  const DenoiserNet net = ctx.base();
  const double w = ctx.rc().get_double("guidance.w");
  const double s = ctx.rc().get_double("guidance.s");
  std::optional<DenoiserNet> early;
  if (s != 0.0) early.emplace(ctx.early());
  std::optional<RefinerNet> refiner;
  if (ctx.has_refiner()) refiner.emplace(ctx.refiner());
  const GuidanceSpec g{w, s, early ? &*early : nullptr};
  const auto n = static_cast<Eigen::Index>(ctx.rc().get_int("analysis.mmd_samples"));
  const int steps = static_cast<int>(ctx.rc().get_int("sampler.N"));
  const int guided_steps = static_cast<int>(ctx.rc().get_int("sampler.N_guided"));
  const ShapesDataset data(ctx.seed());
  RngStream rng = ctx.stream("analysis.mmd");
  std::vector<std::vector<double>> rows;
  json summary = json::array();
  for (int c = 0; c < kNumShapeClasses; ++c) {
    const Matrix real = data.class_samples(c, static_cast<std::size_t>(n), 1ULL << 40);
    const double bw = median_heuristic(real);
    const Matrix xT = rng.normal_matrix(real.rows(), n);
    const auto conds = repeat_condition(Condition::of(c), static_cast<std::size_t>(n));
    const double mu = mmd2_unbiased(denoise(xT, conds, net, ctx.schedule(), steps), real, bw);
    const double mg = mmd2_unbiased(denoise(xT, conds, net, ctx.schedule(), guided_steps, &g), real, bw);
    const double mr = refiner ? mmd2_unbiased(denoise(refiner->refine(xT, conds), conds, net, ctx.schedule(), steps),
                                              real, bw)
                              : std::nan("");
    rows.push_back({static_cast<double>(c), bw, mu, mr, mg});
    summary.push_back({{"class", c}, {"bandwidth", bw}, {"unguided", mu}, {"refined", mr}, {"guided", mg}});
  }
  write_csv(ctx.artifact("mmd", "csv"), "class,bandwidth,unguided,refined,guided", rows);
  write_json(ctx.artifact("mmd", "json"), {{"per_class", summary}, {"w", w}, {"s", s}});
  return 0;
}

int cmd_accept(const Context& ctx, const std::vector<int>& only) {
  AcceptanceOptions opts;
  opts.config = ctx.rc();
  opts.work_dir = ctx.dir();
  opts.only = only;
  opts.log = &std::cerr;
  const AcceptanceReport report = run_acceptance(opts);
  io::write_text(ctx.artifact("acceptance", "json"), report.json);
  for (const auto& r : report.results) std::cout << format_result(r) << "\n";
  return report.all_passed() ? 0 : kExitAcceptance;
}

void emit_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace
}  // namespace nr

int main(int argc, char** argv) {
  using namespace nr;
  CLI::App app{"Noise refinement toolkit: train, sample, invert and analyze."};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "key=value configuration file");
  app.add_option("--set", g.overrides, "override one key (repeatable)");
  app.add_option("--run-dir", g.run_dir, "directory holding every artifact")->capture_default_str();
  app.add_option("--seed", g.seed, "root seed (overrides run.seed)");
  app.add_option("--threads", g.threads, "worker threads (overrides run.threads)");

  bool refined = false, trajectory = false;
  std::string input;
  std::vector<int> only;
  auto* train_base_cmd = app.add_subcommand("train-base", "train the denoiser and its early checkpoint");
  auto* gen_pairs_cmd = app.add_subcommand("gen-pairs", "generate and filter guided noise pairs");
  auto* train_refiner_cmd = app.add_subcommand("train-refiner", "train the noise refiner");
  auto* sample_cmd = app.add_subcommand("sample", "draw samples");
  sample_cmd->add_flag("--refined", refined, "refine the initial noise first");
  sample_cmd->add_flag("--trajectory", trajectory, "dump every intermediate latent");
  auto* invert_cmd = app.add_subcommand("invert", "map images back to noise");
  invert_cmd->add_option("--input", input, "NFTENSOR of images; defaults to the stored pair targets");
  auto* analyze_cmd = app.add_subcommand("analyze", "diagnostic probes");
  analyze_cmd->require_subcommand(1);
  const std::vector<std::pair<std::string, int (*)(const Context&)>> probes = {
      {"hist", analyze_hist},         {"bands", analyze_bands},   {"band-swap", analyze_band_swap},
      {"jacobian", analyze_jacobian}, {"gamma", analyze_gamma},   {"prop1", analyze_prop1},
      {"prop2", analyze_prop2},       {"slerp", analyze_slerp},   {"cross-cond", analyze_cross_cond},
      {"mmd", analyze_mmd},
  };
  for (const auto& [name, fn] : probes) analyze_cmd->add_subcommand(name, name + " probe");
  auto* accept_cmd = app.add_subcommand("accept", "run the acceptance suite");
  accept_cmd->add_option("--only", only, "criterion ids to run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return kExitConfig;
  }

  try {
    if (*train_base_cmd) return cmd_train_base(Context(g, "train-base"));
    if (*gen_pairs_cmd) return cmd_gen_pairs(Context(g, "gen-pairs"));
    if (*train_refiner_cmd) return cmd_train_refiner(Context(g, "train-refiner"));
    if (*sample_cmd) return cmd_sample(Context(g, "sample"), refined, trajectory);
    if (*invert_cmd) return cmd_invert(Context(g, "invert"), input);
    if (*accept_cmd) return cmd_accept(Context(g, "accept"), only);
    for (const auto& [name, fn] : probes) {
      if (*analyze_cmd->get_subcommand(name)) return fn(Context(g, "analyze " + name));
    }
  } catch (const ConfigError& e) {
    emit_error("config", e.what());
    return kExitConfig;
  } catch (const MissingArtifact& e) {
    emit_error("missing_checkpoint", e.what());
    return kExitMissing;
  } catch (const std::exception& e) {
    emit_error("runtime", e.what());
    return kExitError;
  }
  return kExitError;
}
