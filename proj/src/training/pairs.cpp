#include "noiserefine/training/pairs.hpp"

#include "noiserefine/core/errors.hpp"
#include "noiserefine/core/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace nr {

std::vector<double> quality_scores(const Matrix& x0, std::span<const Condition> conds, const NoisePredictor& net,
                                   const NoiseSchedule& schedule, std::span<RngStream> rngs, int draws) {
  if (draws < 1) throw InvalidArgument("quality_score: need at least one draw");
  if (rngs.size() != static_cast<std::size_t>(x0.cols())) throw ShapeMismatch("quality_score: one stream per column");
  const Eigen::Index n = x0.cols();
  Vector total = Vector::Zero(n);
  std::vector<int> ts(static_cast<std::size_t>(n));
  Matrix eps(x0.rows(), n), xt(x0.rows(), n);
  for (int d = 0; d < draws; ++d) {
    for (Eigen::Index j = 0; j < n; ++j) {
      RngStream& rng = rngs[static_cast<std::size_t>(j)];
      const int t = rng.uniform_int(1, schedule.steps());
      ts[static_cast<std::size_t>(j)] = t;
      rng.fill_normal({eps.col(j).data(), static_cast<std::size_t>(x0.rows())});
      const double a = schedule.alpha(t);
      xt.col(j) = std::sqrt(a) * x0.col(j) + std::sqrt(1.0 - a) * eps.col(j);
    }
    const Matrix pred = net.predict_columns(xt, ts, conds);
    total += (pred - eps).colwise().squaredNorm().transpose() / static_cast<double>(x0.rows());
  }
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = -total[j] / draws;
  return out;
}

double quality_score(const Tensor& x0, Condition c, const NoisePredictor& net, const NoiseSchedule& schedule,
                     RngStream& rng, int draws) {
  const Condition conds[] = {c};
  const Matrix col = x0.vec();
  return quality_scores(col, conds, net, schedule, std::span<RngStream>(&rng, 1), draws).front();
}

std::vector<NoisePair> gen_pairs(const NoisePredictor& net, const NoisePredictor* degraded,
                                 const NoiseSchedule& schedule, const PairGenConfig& cfg, std::size_t count,
                                 std::size_t first_index) {
  if (cfg.chunk == 0) throw InvalidArgument("gen_pairs: chunk must be positive");
  if (cfg.w_lo > cfg.w_hi || cfg.s_lo > cfg.s_hi || cfg.w_lo < 0.0 || cfg.s_lo < 0.0) {
    throw InvalidArgument("gen_pairs: invalid guidance scale range");
  }
  const MlpSpec& spec = net.spec();
  const Shape shape = spec.image.shape();
  std::vector<NoisePair> out(count);
  const std::size_t num_chunks = (count + cfg.chunk - 1) / cfg.chunk;

  auto run_chunk = [&](std::size_t chunk) {
    const std::size_t begin = chunk * cfg.chunk;
    const std::size_t n = std::min(cfg.chunk, count - begin);
    std::vector<RngStream> rngs;
    rngs.reserve(n);
    Matrix xT(spec.image_size(), static_cast<Eigen::Index>(n));
    std::vector<Condition> conds(n);
    ColumnGuidance g{Vector(static_cast<Eigen::Index>(n)), Vector(static_cast<Eigen::Index>(n)), degraded};
    for (std::size_t i = 0; i < n; ++i) {
      auto& rng = rngs.emplace_back(cfg.seed, RngStream::stream_id("pairs", first_index + begin + i));
      conds[i] = Condition::of(rng.uniform_int(0, spec.num_classes - 1));
      rng.fill_normal({xT.col(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(xT.rows())});
      g.cfg_scale[static_cast<Eigen::Index>(i)] = rng.uniform(cfg.w_lo, cfg.w_hi);
      g.degraded_scale[static_cast<Eigen::Index>(i)] = rng.uniform(cfg.s_lo, cfg.s_hi);
    }
    const Matrix x0 = denoise(xT, conds, net, schedule, cfg.guided_steps, g);
    const std::vector<double> q = quality_scores(x0, conds, net, schedule, rngs, cfg.quality_draws);
    for (std::size_t i = 0; i < n; ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      out[begin + i] = NoisePair{Tensor::from_column(xT, col, shape), conds[i], Tensor::from_column(x0, col, shape),
                                 g.cfg_scale[col], g.degraded_scale[col], q[i]};
    }
  };

  const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(num_chunks)));
  if (threads == 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) run_chunk(c);
    return out;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = static_cast<std::size_t>(w); c < num_chunks; c += static_cast<std::size_t>(threads)) run_chunk(c);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<NoisePair> filter_pairs(const std::vector<NoisePair>& pairs, double q) {
  if (pairs.empty()) throw InvalidArgument("filter_pairs: empty input");
  if (!(q > 0.0 && q <= 100.0)) throw InvalidArgument("filter_pairs: q must lie in (0, 100]");
  const std::size_t n = pairs.size();
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(q * static_cast<double>(n) / 100.0 + 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pairs[a].quality > pairs[b].quality; });
  order.resize(std::min(keep, n));
  std::sort(order.begin(), order.end());
  std::vector<NoisePair> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(pairs[i]);
  return out;
}

void save_pair_archive(const std::filesystem::path& dir, const std::vector<NoisePair>& pairs) {
  if (pairs.empty()) throw InvalidArgument("save_pair_archive: no pairs");
  std::filesystem::create_directories(dir);
  const Shape img = pairs.front().xT.shape();
  Shape stacked{pairs.size()};
  stacked.insert(stacked.end(), img.begin(), img.end());
  Tensor xT(stacked), x0(stacked);
  const std::size_t sz = shape_size(img);
  nlohmann::json records = nlohmann::json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::copy(pairs[i].xT.data().begin(), pairs[i].xT.data().end(), xT.data().begin() + static_cast<std::ptrdiff_t>(i * sz));
    std::copy(pairs[i].x0_guide.data().begin(), pairs[i].x0_guide.data().end(),
              x0.data().begin() + static_cast<std::ptrdiff_t>(i * sz));
    records.push_back({{"c", pairs[i].c.id}, {"w", pairs[i].w_used}, {"s", pairs[i].s_used}, {"quality", pairs[i].quality}});
  }
  io::save_tensor(dir / "xT.nft", xT);
  io::save_tensor(dir / "x0_guide.nft", x0);
  const nlohmann::json index = {{"format", "noiserefine-pairs"},
                                {"count", pairs.size()},
                                {"image_shape", img},
                                {"fields", {{"xT", "xT.nft"}, {"x0_guide", "x0_guide.nft"}}},
                                {"records", records}};
  io::write_text(dir / "index.json", index.dump(1) + "\n");
}

std::vector<NoisePair> load_pair_archive(const std::filesystem::path& dir) {
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(io::read_text(dir / "index.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt pair index in " + dir.string() + ": " + e.what());
  }
  const auto img = index.at("image_shape").get<Shape>();
  const Tensor xT = io::load_tensor(dir / index.at("fields").at("xT").get<std::string>());
  const Tensor x0 = io::load_tensor(dir / index.at("fields").at("x0_guide").get<std::string>());
  const auto& records = index.at("records");
  const std::size_t sz = shape_size(img);
  if (xT.size() != records.size() * sz || x0.size() != records.size() * sz) throw IoError("pair archive size mismatch");
  std::vector<NoisePair> pairs;
  pairs.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto first = static_cast<std::ptrdiff_t>(i * sz);
    NoisePair p;
    p.xT = Tensor(img, std::vector<double>(xT.data().begin() + first, xT.data().begin() + first + static_cast<std::ptrdiff_t>(sz)));
    p.x0_guide = Tensor(img, std::vector<double>(x0.data().begin() + first, x0.data().begin() + first + static_cast<std::ptrdiff_t>(sz)));
    p.c = Condition::of(records[i].at("c").get<int>());
    p.w_used = records[i].at("w").get<double>();
    p.s_used = records[i].at("s").get<double>();
    p.quality = records[i].at("quality").get<double>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace nr
