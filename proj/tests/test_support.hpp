#pragma once

#include <cstdint>
#include <map>
#include <tuple>
#include <vector>

#include "dendrite/corpus.hpp"
#include "dendrite/graph_extract.hpp"
#include "dendrite/image.hpp"
#include "dendrite/pattern_sim.hpp"

namespace dendrite::fixtures {

inline GrowthParams standard_growth(int particles = 4000) {
  GrowthParams p;
  p.lattice_size = 256;
  p.particle_count = particles;
  return p;
}

// Generated images, memoized per (seed, count, particles) within a test binary.
inline const std::vector<DendriteImage>& images(std::uint64_t seed, std::size_t count, int particles = 4000) {
  static std::map<std::tuple<std::uint64_t, std::size_t, int>, std::vector<DendriteImage>> cache;
  auto& slot = cache[{seed, count, particles}];
  if (slot.empty()) {
    for (std::size_t i = 0; i < count; ++i) slot.push_back(generate(corpus_params(standard_growth(particles), seed, i)));
  }
  return slot;
}

inline const std::vector<CorpusEntry>& corpus(std::uint64_t seed, std::size_t count) {
  static std::map<std::pair<std::uint64_t, std::size_t>, std::vector<CorpusEntry>> cache;
  auto& slot = cache[{seed, count}];
  if (slot.empty()) slot = build_corpus(standard_growth(), seed, count);
  return slot;
}

// Raster from rows of '#' (foreground) and '.'.
inline DendriteImage raster(const std::vector<const char*>& rows) {
  const int h = static_cast<int>(rows.size());
  int w = 0;
  for (const char* r : rows) w = std::max(w, static_cast<int>(std::char_traits<char>::length(r)));
  DendriteImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; rows[y][x] != '\0'; ++x) img.at(x, y) = rows[y][x] == '#' ? 1 : 0;
  }
  return img;
}

}  // namespace dendrite::fixtures
