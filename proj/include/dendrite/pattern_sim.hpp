#pragma once

#include <cstdint>
#include <utility>

#include "dendrite/image.hpp"

namespace dendrite {

struct GrowthParams {
  int lattice_size = 256;
  int particle_count = 4000;
  double stickiness = 1.0;
  int spawn_radius_margin = 5;
  std::uint64_t rng_seed = 0;
};

void validate(const GrowthParams& params);

// Diffusion-limited aggregation grown from a seed at the lattice center.
// Walkers spawn on a circle of radius (aggregate radius + margin), are killed
// beyond twice that radius or off-lattice, and stick on 8-neighbor contact
// with probability `stickiness`.
DendriteImage generate(const GrowthParams& params);

struct Perturbation {
  double noise_rate = 0.0;
  std::pair<int, int> shift{0, 0};
  double rotation_deg = 0.0;
  std::uint64_t rng_seed = 0;
};

// Pixel-flip noise, then zero-filled translation, then nearest-neighbor
// rotation about the image center.
DendriteImage perturb(const DendriteImage& image, const Perturbation& p);

}  // namespace dendrite
