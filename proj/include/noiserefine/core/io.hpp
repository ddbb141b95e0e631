#pragma once

#include "noiserefine/core/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>

namespace nr::io {

/// NFTENSOR framing: magic "NFTENSOR", u32 rank, rank x u32 dims, f64 data, all little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Binary P5 PGM of a [H, W] or [1, H, W] image, mapping [min, max] to [0, 255].
void save_pgm(const std::filesystem::path& path, const Tensor& image);
/// Tiles equally shaped single-channel images into a grid with `cols` columns.
Tensor tile_grid(std::span<const Tensor> images, std::size_t cols, double pad_value = -1.0);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace nr::io
