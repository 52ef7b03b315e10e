#include "render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "markovgen/error.hpp"

namespace markovgen::cli {
namespace {

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  auto byte = [&](double u) { return static_cast<std::uint8_t>(std::lround(std::clamp(u + m, 0.0, 1.0) * 255.0)); };
  return {byte(r), byte(g), byte(b)};
}

}  // namespace

std::vector<Rgb> make_palette(VocabSpec vocab, std::uint64_t seed) {
  validate(vocab);
  std::vector<int> order(static_cast<std::size_t>(vocab.size));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Rgb> palette;
  palette.reserve(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double hue = static_cast<double>(order[k]) / vocab.size;
    // Alternate brightness so neighbouring hues stay distinguishable.
    palette.push_back(hsv_to_rgb(hue, 0.75, k % 2 == 0 ? 0.95 : 0.7));
  }
  return palette;
}

void write_ppm(const std::filesystem::path& path, const TokenGrid& grid, const std::vector<Rgb>& palette,
               int scale) {
  validate(grid);
  require(static_cast<int>(palette.size()) >= grid.vocab.size, ErrorCode::kDimensionMismatch,
          "palette smaller than the vocabulary");
  require(scale >= 1, ErrorCode::kInvalidArgument, "render scale must be >= 1");
  const int w = grid.geometry.width * scale;
  const int h = grid.geometry.height * scale;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Rgb& c = palette[grid.at({y / scale, x / scale})];
      std::copy(c.begin(), c.end(), pixels.begin() + (static_cast<std::ptrdiff_t>(y) * w + x) * 3);
    }
  }
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace markovgen::cli
