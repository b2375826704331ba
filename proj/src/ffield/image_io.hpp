#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ffield {

// Decoded PNG: interleaved samples, 8- or 16-bit depth stored widened.
struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray / palette index) or 3 (RGB)
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

using Bytes = std::vector<std::uint8_t>;
using PaletteEntry = std::array<std::uint8_t, 3>;

// Palette images decode to their raw indices (channels == 1).
PngImage DecodePng(const Bytes& bytes);
PngImage ReadPng(const std::string& path);

Bytes EncodePngRgb8(int width, int height, const std::vector<std::uint8_t>& rgb);
Bytes EncodePngGray8(int width, int height, const std::vector<std::uint8_t>& gray);
Bytes EncodePngGray16(int width, int height, const std::vector<std::uint16_t>& gray);
Bytes EncodePngIndexed(int width, int height, const std::vector<std::uint8_t>& indices,
                       const std::vector<PaletteEntry>& palette);

Bytes ReadFileBytes(const std::string& path);
// Creates missing parent directories.
void WriteFileBytes(const std::string& path, const Bytes& bytes);
void CreateParentDirectories(const std::string& path);

}  // namespace ffield
