#include "noiserefine/cli/run_config.hpp"

#include "noiserefine/core/io.hpp"
#include "noiserefine/core/rng.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace nr {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"run.seed", "0", "root seed; every random stream derives from it"},
      {"run.threads", "1", "worker threads for pair generation"},
      {"schedule.T", "100", "diffusion steps"},
      {"schedule.beta_start", "0.001", "first beta of the linear schedule"},
      {"schedule.beta_end", "0.1", "last beta of the linear schedule"},
      {"model.hidden", "512", "hidden width"},
      {"model.depth", "3", "hidden layers"},
      {"model.time_dim", "32", "sinusoidal embedding size"},
      {"model.parameterization", "noise", "denoiser output: noise | velocity"},
      {"data.pool_size", "0", "distinct training images per class-seed pool; 0 draws fresh images"},
      {"base.steps", "20000", "base training steps"},
      {"base.batch", "64", "base batch size"},
      {"base.lr", "0.001", "base learning rate"},
      {"base.lr_schedule", "cosine", "constant | cosine"},
      {"base.cond_dropout", "0.1", "probability of the null condition during training"},
      {"base.early_fraction", "0.05", "degraded checkpoint position as a fraction of steps"},
      {"base.log_every", "100", "log interval"},
      {"sampler.N", "10", "guidance-free steps"},
      {"sampler.N_guided", "20", "guided steps for pair targets"},
      {"sampler.eta", "0", "0 runs DDIM; > 0 runs ancestral sampling with this eta"},
      {"sampler.count", "16", "samples drawn by the sample command"},
      {"sampler.class", "0", "class sampled by the sample command; -1 is the null condition"},
      {"guidance.w", "0", "CFG scale for the sample command"},
      {"guidance.s", "0", "degraded-predictor scale for the sample command"},
      {"pairs.count", "4096", "pairs generated"},
      {"pairs.w_min", "3", "lower bound of the random CFG scale"},
      {"pairs.w_max", "5", "upper bound of the random CFG scale"},
      {"pairs.s_min", "2", "lower bound of the random degraded scale"},
      {"pairs.s_max", "3", "upper bound of the random degraded scale"},
      {"pairs.quality_draws", "8", "(t, eps) draws per quality score"},
      {"pairs.filter_q", "25", "percent of pairs kept by quality"},
      {"pairs.chunk", "64", "pairs per generation task"},
      {"refiner.steps", "2000", "refiner training steps"},
      {"refiner.batch", "64", "refiner batch size"},
      {"refiner.lr", "0.0001", "refiner learning rate"},
      {"refiner.lr_schedule", "constant", "constant | cosine"},
      {"refiner.mode", "msd", "msd | full"},
      {"refiner.source", "online", "online | offline (reads the pair archive)"},
      {"refiner.log_every", "50", "log interval"},
      {"inversion.k", "5", "fixed-point iterations per inversion step"},
      {"inversion.steps", "10", "inversion steps"},
      {"analysis.bins", "40", "histogram bins"},
      {"analysis.hist_range", "4", "histogram upper edge"},
      {"analysis.band_edges", "0,0.25,0.5,0.75,1", "radial band edges"},
      {"analysis.baseline_draws", "1000", "white-noise simulations for the band baseline"},
      {"analysis.samples", "64", "noises per probe"},
      {"analysis.t", "100", "timestep of the Jacobian probe"},
      {"analysis.class", "0", "class used by single-class probes"},
      {"analysis.band_lo", "0", "band lower radius for band-swap"},
      {"analysis.band_hi", "0.25", "band upper radius for band-swap"},
      {"analysis.band_mode", "replace_band", "replace_band | keep_only | keep_and_reinit"},
      {"analysis.slerp_points", "9", "interpolation ratios including both ends"},
      {"analysis.prop1_pairs", "200", "pairs for the noise/image distance study"},
      {"analysis.prop2_N", "3", "rollout steps for the gradient comparison"},
      {"analysis.prop2_batches", "32", "batches for the gradient comparison"},
      {"analysis.prop2_batch", "16", "batch size for the gradient comparison"},
      {"analysis.c_refine", "0", "refiner condition for cross-cond"},
      {"analysis.c_denoise", "-1", "denoising condition for cross-cond; -1 is null"},
      {"analysis.mmd_samples", "200", "samples per class for mmd"},
      {"accept.seeds", "0,1,2", "seeds of the seed-averaged criteria"},
      {"accept.base_steps", "3000", "base training steps for the acceptance suite"},
      {"accept.pairs", "4096", "pairs generated per seed"},
      {"accept.refiner_steps", "1500", "refiner steps per seed"},
      {"accept.filter_steps", "1000", "refiner steps in the filtering ablation"},
      {"accept.eval_samples", "200", "samples per class for MMD"},
      {"accept.timing_samples", "64", "batch used for wall-clock timing"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const ConfigKey& k : config_keys()) values_[k.name] = k.default_value;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig rc;
  std::istringstream is(text);
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key=value, got '" + t + "'");
    }
    try {
      rc.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse(text, path.string());
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  if (value.empty()) throw ConfigError("empty value for '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("value '" + text + "' of '" + key + "' is not a valid number");
  }
  return v;
}

}  // namespace

long RunConfig::get_int(const std::string& key) const { return parse_number<long>(key, get(key)); }
std::uint64_t RunConfig::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }
double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("value '" + v + "' of '" + key + "' is not a boolean");
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  std::istringstream is(get(key));
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
  return out;
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(resolved())));
  return buf;
}

namespace {

LrSchedule lr_schedule_from(const RunConfig& rc, const std::string& key) {
  const std::string& v = rc.get(key);
  if (v == "constant") return LrSchedule::constant;
  if (v == "cosine") return LrSchedule::cosine;
  throw ConfigError("'" + key + "' must be constant or cosine, got '" + v + "'");
}

int positive_int(const RunConfig& rc, const std::string& key) {
  const long v = rc.get_int(key);
  if (v < 1 || v > 1'000'000'000) throw ConfigError("'" + key + "' must be a positive integer");
  return static_cast<int>(v);
}

}  // namespace

NoiseSchedule schedule_from(const RunConfig& rc) {
  try {
    return NoiseSchedule::linear(positive_int(rc, "schedule.T"), rc.get_double("schedule.beta_start"),
                                 rc.get_double("schedule.beta_end"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

MlpSpec spec_from(const RunConfig& rc) {
  MlpSpec s;
  s.hidden = positive_int(rc, "model.hidden");
  s.depth = positive_int(rc, "model.depth");
  s.time_dim = positive_int(rc, "model.time_dim");
  if (s.time_dim % 2 != 0) throw ConfigError("'model.time_dim' must be even");
  s.steps = positive_int(rc, "schedule.T");
  return s;
}

BaseTrainConfig base_config_from(const RunConfig& rc) {
  BaseTrainConfig c;
  c.spec = spec_from(rc);
  c.steps = positive_int(rc, "base.steps");
  c.batch = positive_int(rc, "base.batch");
  c.lr = rc.get_double("base.lr");
  c.lr_schedule = lr_schedule_from(rc, "base.lr_schedule");
  const std::string& p = rc.get("model.parameterization");
  if (p == "noise") {
    c.parameterization = Parameterization::noise;
  } else if (p == "velocity") {
    c.parameterization = Parameterization::velocity;
  } else {
    throw ConfigError("'model.parameterization' must be noise or velocity, got '" + p + "'");
  }
  c.cond_dropout = rc.get_double("base.cond_dropout");
  c.early_fraction = rc.get_double("base.early_fraction");
  if (!(c.early_fraction > 0.0 && c.early_fraction <= 1.0)) throw ConfigError("'base.early_fraction' must be in (0, 1]");
  c.seed = rc.get_u64("run.seed");
  c.log_every = rc.get_int("base.log_every");
  return c;
}

PairGenConfig pair_config_from(const RunConfig& rc) {
  PairGenConfig c;
  c.guided_steps = positive_int(rc, "sampler.N_guided");
  c.w_lo = rc.get_double("pairs.w_min");
  c.w_hi = rc.get_double("pairs.w_max");
  c.s_lo = rc.get_double("pairs.s_min");
  c.s_hi = rc.get_double("pairs.s_max");
  if (c.w_lo > c.w_hi || c.s_lo > c.s_hi) throw ConfigError("scale ranges must satisfy min <= max");
  c.quality_draws = positive_int(rc, "pairs.quality_draws");
  c.chunk = static_cast<std::size_t>(positive_int(rc, "pairs.chunk"));
  c.seed = rc.get_u64("run.seed");
  c.threads = positive_int(rc, "run.threads");
  const double q = rc.get_double("pairs.filter_q");
  if (!(q > 0.0 && q <= 100.0)) throw ConfigError("'pairs.filter_q' must be in (0, 100]");
  return c;
}

RefinerTrainConfig refiner_config_from(const RunConfig& rc) {
  RefinerTrainConfig c;
  c.steps = positive_int(rc, "refiner.steps");
  c.batch = positive_int(rc, "refiner.batch");
  c.lr = rc.get_double("refiner.lr");
  c.lr_schedule = lr_schedule_from(rc, "refiner.lr_schedule");
  c.sampler_steps = positive_int(rc, "sampler.N");
  const std::string& m = rc.get("refiner.mode");
  if (m == "msd") {
    c.mode = GradientMode::msd;
  } else if (m == "full") {
    c.mode = GradientMode::full;
  } else {
    throw ConfigError("'refiner.mode' must be msd or full, got '" + m + "'");
  }
  const std::string& src = rc.get("refiner.source");
  if (src != "online" && src != "offline") throw ConfigError("'refiner.source' must be online or offline");
  c.seed = rc.get_u64("run.seed");
  c.log_every = rc.get_int("refiner.log_every");
  return c;
}

InversionConfig inversion_config_from(const RunConfig& rc) {
  InversionConfig c;
  const long k = rc.get_int("inversion.k");
  if (k < 0) throw ConfigError("'inversion.k' must be >= 0");
  c.fixed_point_iters = static_cast<int>(k);
  c.steps = positive_int(rc, "inversion.steps");
  return c;
}

}  // namespace nr
