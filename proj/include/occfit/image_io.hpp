#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace occ {

using Rgb = std::array<std::uint8_t, 3>;

/// Fixed class palette: class c uses kClassPalette[c % 16]; pixels with no rendered surface use
/// kBackgroundColor.
inline constexpr std::array<Rgb, 16> kClassPalette{{
    {128, 64, 128},   // 0  purple
    {244, 35, 232},   // 1  pink
    {70, 70, 70},     // 2  dark gray
    {0, 0, 142},      // 3  navy
    {220, 20, 60},    // 4  crimson
    {107, 142, 35},   // 5  olive
    {152, 251, 152},  // 6  pale green
    {70, 130, 180},   // 7  steel blue
    {220, 220, 0},    // 8  yellow
    {250, 170, 30},   // 9  orange
    {190, 153, 153},  // 10 rose gray
    {0, 60, 100},     // 11 deep blue
    {0, 80, 100},     // 12 teal
    {119, 11, 32},    // 13 maroon
    {255, 255, 255},  // 14 white
    {0, 255, 255},    // 15 cyan
}};
inline constexpr Rgb kBackgroundColor{0, 0, 0};

Rgb class_color(int class_id);

/// Binary 16-bit PGM (P5, maxval 65535, big-endian samples as the format requires).
void write_pgm16(const std::filesystem::path& path, int width, int height, std::span<const std::uint16_t> pixels);

/// Binary PPM (P6, maxval 255), row-major RGB.
void write_ppm(const std::filesystem::path& path, int width, int height, std::span<const Rgb> pixels);

struct Image16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;
};

Image16 read_pgm16(const std::filesystem::path& path);

}  // namespace occ
