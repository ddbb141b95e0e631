#pragma once

#include "noiserefine/nets/networks.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nr {

struct CheckpointHeader {
  std::string kind;  // "denoiser" or "refiner"
  MlpSpec spec;
  long step = 0;
  std::uint64_t seed = 0;
  std::vector<double> velocity_alphas;  // empty unless a velocity-parameterized denoiser
};

/// One line of JSON (architecture, step, seed), then the NFTENSOR-framed parameter vector.
void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const Vector& params);

struct Checkpoint {
  CheckpointHeader header;
  Vector params;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_denoiser(const std::filesystem::path& path, const DenoiserNet& net, long step, std::uint64_t seed);
DenoiserNet load_denoiser(const std::filesystem::path& path);
void save_refiner(const std::filesystem::path& path, const RefinerNet& net, long step, std::uint64_t seed);
RefinerNet load_refiner(const std::filesystem::path& path);

}  // namespace nr
