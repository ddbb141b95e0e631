#include "noiserefine/nets/checkpoint.hpp"

#include "noiserefine/core/errors.hpp"
#include "noiserefine/core/io.hpp"

#include <json.hpp>

#include <fstream>

namespace nr {

namespace {

nlohmann::json spec_to_json(const MlpSpec& s) {
  return {{"channels", s.image.channels}, {"height", s.image.height}, {"width", s.image.width},
          {"num_classes", s.num_classes}, {"time_dim", s.time_dim},   {"hidden", s.hidden},
          {"depth", s.depth},             {"steps", s.steps}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.image = {j.at("channels").get<std::size_t>(), j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>()};
  s.num_classes = j.at("num_classes").get<int>();
  s.time_dim = j.at("time_dim").get<int>();
  s.hidden = j.at("hidden").get<int>();
  s.depth = j.at("depth").get<int>();
  s.steps = j.at("steps").get<int>();
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const Vector& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  nlohmann::json j = {{"format", "noiserefine-checkpoint"},
                      {"kind", header.kind},
                      {"arch", spec_to_json(header.spec)},
                      {"step", header.step},
                      {"seed", header.seed}};
  if (!header.velocity_alphas.empty()) j["velocity_alphas"] = header.velocity_alphas;
  os << j.dump() << '\n';
  io::write_tensor(os, Tensor({static_cast<std::size_t>(params.size())},
                              std::vector<double>(params.data(), params.data() + params.size())));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing checkpoint " + path.string());
  std::string line;
  std::getline(is, line);
  Checkpoint ck;
  try {
    const auto j = nlohmann::json::parse(line);
    if (j.at("format") != "noiserefine-checkpoint") throw IoError("not a checkpoint: " + path.string());
    ck.header.kind = j.at("kind").get<std::string>();
    ck.header.spec = spec_from_json(j.at("arch"));
    ck.header.step = j.at("step").get<long>();
    ck.header.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("velocity_alphas")) ck.header.velocity_alphas = j.at("velocity_alphas").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  const Tensor p = io::read_tensor(is);
  ck.params = p.vec();
  return ck;
}

void save_denoiser(const std::filesystem::path& path, const DenoiserNet& net, long step, std::uint64_t seed) {
  save_checkpoint(path, {"denoiser", net.spec(), step, seed, net.alphas()}, net.backbone().params());
}

DenoiserNet load_denoiser(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.header.kind != "denoiser") throw IoError(path.string() + " holds a " + ck.header.kind + ", not a denoiser");
  DenoiserNet net = ck.header.velocity_alphas.empty()
                        ? DenoiserNet(ck.header.spec)
                        : DenoiserNet(ck.header.spec, NoiseSchedule::from_alphas(ck.header.velocity_alphas));
  if (ck.params.size() != net.backbone().params().size()) throw IoError("checkpoint parameter count mismatch");
  net.backbone().params() = ck.params;
  return net;
}

void save_refiner(const std::filesystem::path& path, const RefinerNet& net, long step, std::uint64_t seed) {
  save_checkpoint(path, {"refiner", net.spec(), step, seed, {}}, net.backbone().params());
}

RefinerNet load_refiner(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.header.kind != "refiner") throw IoError(path.string() + " holds a " + ck.header.kind + ", not a refiner");
  RefinerNet net(ck.header.spec);
  if (ck.params.size() != net.backbone().params().size()) throw IoError("checkpoint parameter count mismatch");
  net.backbone().params() = ck.params;
  return net;
}

}  // namespace nr
