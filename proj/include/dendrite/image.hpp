#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dendrite {

enum class Provenance : std::uint8_t { synthetic, ingested };

// Row-major binary raster. 1 = metallic deposit, 0 = substrate.
struct DendriteImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  Provenance provenance = Provenance::synthetic;

  DendriteImage() = default;
  DendriteImage(int w, int h, Provenance p = Provenance::synthetic)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0), provenance(p) {}

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  // Out-of-bounds reads as background.
  std::uint8_t get(int x, int y) const { return in_bounds(x, y) ? at(x, y) : 0; }

  std::size_t foreground_count() const {
    std::size_t n = 0;
    for (auto p : pixels) n += p;
    return n;
  }

  // Pixel equality; provenance is metadata and not compared.
  bool same_pixels(const DendriteImage& other) const {
    return width == other.width && height == other.height && pixels == other.pixels;
  }
};

// Number of 8-connected foreground components.
std::size_t count_components(const DendriteImage& image);

// Labels 8-connected components (0 = background, 1..n). Returns n.
std::size_t label_components(const DendriteImage& image, std::vector<int>& labels);

}  // namespace dendrite
