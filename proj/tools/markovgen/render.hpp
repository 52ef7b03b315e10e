#pragma once

// Palette rendering of token grids as binary PPM (P6) images.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "markovgen/types.hpp"

namespace markovgen::cli {

using Rgb = std::array<std::uint8_t, 3>;

// V evenly spaced hues, assigned to labels by a seeded permutation.
std::vector<Rgb> make_palette(VocabSpec vocab, std::uint64_t seed);

// Each token becomes a `scale` x `scale` block.
void write_ppm(const std::filesystem::path& path, const TokenGrid& grid, const std::vector<Rgb>& palette,
               int scale = 8);

}  // namespace markovgen::cli
