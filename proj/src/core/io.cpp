#include "noiserefine/core/io.hpp"

#include "noiserefine/core/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nr::io {

namespace {

constexpr std::array<char, 8> kMagic{'N', 'F', 'T', 'E', 'N', 'S', 'O', 'R'};

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw IoError("NFTENSOR: truncated stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw IoError("NFTENSOR: write failed");
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw IoError("NFTENSOR: bad magic");
  const auto rank = get_le<std::uint32_t>(is);
  if (rank > 16) throw IoError("NFTENSOR: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint32_t>(is);
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

void save_pgm(const std::filesystem::path& path, const Tensor& image) {
  std::size_t h = 0, w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && image.dim(0) == 1) {
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw ShapeMismatch("save_pgm: expected single-channel image, got " + shape_string(image.shape()));
  }
  const auto [lo, hi] = std::minmax_element(image.data().begin(), image.data().end());
  const double span = *hi - *lo;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : image.data()) {
    const double u = span > 0.0 ? (v - *lo) / span : 0.0;
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0))));
  }
  if (!os) throw IoError("save_pgm: write failed");
}

Tensor tile_grid(std::span<const Tensor> images, std::size_t cols, double pad_value) {
  if (images.empty() || cols == 0) throw InvalidArgument("tile_grid: nothing to tile");
  const Tensor& first = images.front();
  const std::size_t h = first.dim(first.rank() - 2);
  const std::size_t w = first.dim(first.rank() - 1);
  const std::size_t rows = (images.size() + cols - 1) / cols;
  const std::size_t gh = rows * (h + 1) - 1;
  const std::size_t gw = cols * (w + 1) - 1;
  Tensor grid = Tensor::full({gh, gw}, pad_value);
  for (std::size_t k = 0; k < images.size(); ++k) {
    require_same_shape(images[k], first, "tile_grid");
    const std::size_t oy = (k / cols) * (h + 1);
    const std::size_t ox = (k % cols) * (w + 1);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) grid[(oy + y) * gw + ox + x] = images[k][y * w + x];
  }
  return grid;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace nr::io
