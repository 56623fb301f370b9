#include "occfit/image_io.hpp"

#include "occfit/common.hpp"

#include <fstream>

namespace occ {

Rgb class_color(int class_id) {
  if (class_id < 0) return kBackgroundColor;
  return kClassPalette[static_cast<std::size_t>(class_id) % kClassPalette.size()];
}

void write_pgm16(const std::filesystem::path& path, int width, int height, std::span<const std::uint16_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw InputError("pgm pixel count does not match image size");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "P5\n" << width << ' ' << height << "\n65535\n";
  for (std::uint16_t p : pixels) {
    const char bytes[2] = {static_cast<char>(p >> 8), static_cast<char>(p & 0xFF)};
    out.write(bytes, 2);
  }
}

void write_ppm(const std::filesystem::path& path, int width, int height, std::span<const Rgb> pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw InputError("ppm pixel count does not match image size");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  for (const Rgb& p : pixels) {
    out.write(reinterpret_cast<const char*>(p.data()), 3);
  }
}

Image16 read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  Image16 img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 65535 || img.width <= 0 || img.height <= 0) {
    throw InputError(path.string() + ": not a 16-bit binary PGM");
  }
  in.get();
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height));
  for (auto& p : img.pixels) {
    unsigned char bytes[2];
    if (!in.read(reinterpret_cast<char*>(bytes), 2)) throw InputError(path.string() + ": truncated PGM");
    p = static_cast<std::uint16_t>((bytes[0] << 8) | bytes[1]);
  }
  return img;
}

}  // namespace occ
