#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dendrite/image.hpp"

namespace dendrite {

// 8-bit grayscale PNG, foreground written as 255.
std::vector<std::uint8_t> encode_png(const DendriteImage& image);

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> levels;
};

// Decodes any libpng-readable PNG (palette, gray 1-16 bit, RGB(A)) to 8-bit gray.
GrayImage decode_png_gray(std::span<const std::uint8_t> bytes);

// Decode, grayscale, binarize at `threshold` (level >= threshold is foreground).
DendriteImage ingest(std::span<const std::uint8_t> bytes, int threshold = 128);

void write_png(const std::filesystem::path& path, const DendriteImage& image);
DendriteImage read_png(const std::filesystem::path& path, int threshold = 128);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace dendrite
