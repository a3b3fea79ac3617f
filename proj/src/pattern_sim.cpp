#include "dendrite/pattern_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dendrite/error.hpp"
#include "random.hpp"

namespace dendrite {

void validate(const GrowthParams& params) {
  if (params.lattice_size < 16) {
    throw Error(ErrorCode::invalid_params, "lattice_size must be >= 16");
  }
  const long long cells = static_cast<long long>(params.lattice_size) * params.lattice_size;
  if (params.particle_count < 0 || params.particle_count >= cells) {
    throw Error(ErrorCode::invalid_params, "particle_count must be in [0, lattice_size^2)");
  }
  if (!(params.stickiness > 0.0 && params.stickiness <= 1.0)) {
    throw Error(ErrorCode::invalid_params, "stickiness must be in (0, 1]");
  }
  if (params.spawn_radius_margin < 0) {
    throw Error(ErrorCode::invalid_params, "spawn_radius_margin must be non-negative");
  }
}

namespace {

// Occupancy plus a capped distance field to the nearest attached particle,
// used to let walkers jump across empty space.
class Aggregate {
 public:
  static constexpr int kFieldRadius = 12;

  explicit Aggregate(int n)
      : n_(n),
        occupied_(static_cast<std::size_t>(n) * n, 0),
        dist2_(static_cast<std::size_t>(n) * n, kFieldRadius * kFieldRadius) {}

  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < n_ && y < n_; }
  bool occupied(int x, int y) const { return inside(x, y) && occupied_[idx(x, y)] != 0; }
  // 8-neighbor contact with the aggregate.
  bool touching(int x, int y) const { return inside(x, y) && dist2_[idx(x, y)] <= 2; }
  // Lower bound on the distance to the nearest particle, capped at kFieldRadius.
  double clearance(int x, int y) const { return std::sqrt(static_cast<double>(dist2_[idx(x, y)])); }

  void attach(int x, int y) {
    occupied_[idx(x, y)] = 1;
    constexpr int r = kFieldRadius;
    for (int dy = -r; dy <= r; ++dy) {
      const int ny = y + dy;
      if (ny < 0 || ny >= n_) continue;
      for (int dx = -r; dx <= r; ++dx) {
        const int nx = x + dx;
        if (nx < 0 || nx >= n_) continue;
        auto& d = dist2_[idx(nx, ny)];
        const int d2 = dx * dx + dy * dy;
        if (d2 < d) d = d2;
      }
    }
  }

  DendriteImage to_image() const {
    DendriteImage img(n_, n_, Provenance::synthetic);
    img.pixels = occupied_;
    return img;
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * n_ + x; }

  int n_;
  std::vector<std::uint8_t> occupied_;
  std::vector<int> dist2_;
};

constexpr int kStepX[4] = {1, -1, 0, 0};
constexpr int kStepY[4] = {0, 0, 1, -1};

}  // namespace

DendriteImage generate(const GrowthParams& params) {
  validate(params);
  const int n = params.lattice_size;
  const int center = n / 2;

  detail::Rng rng(params.rng_seed);
  Aggregate agg(n);
  agg.attach(center, center);
  double aggregate_radius = 0.0;

  for (int particle = 0; particle < params.particle_count; ++particle) {
    bool stuck = false;
    while (!stuck) {
      // Walkers live on the unbounded plane; only in-lattice cells can attach.
      const double spawn = aggregate_radius + params.spawn_radius_margin + 1.0;
      const double kill2 = 4.0 * spawn * spawn;

      int x = 0;
      int y = 0;
      do {
        const double angle = 2.0 * std::numbers::pi * rng.uniform();
        x = center + static_cast<int>(std::lround(spawn * std::cos(angle)));
        y = center + static_cast<int>(std::lround(spawn * std::sin(angle)));
      } while (agg.occupied(x, y));

      while (true) {
        if (agg.touching(x, y)) {
          if (params.stickiness >= 1.0 || rng.uniform() < params.stickiness) {
            agg.attach(x, y);
            const double dx = x - center;
            const double dy = y - center;
            aggregate_radius = std::max(aggregate_radius, std::sqrt(dx * dx + dy * dy));
            stuck = true;
            break;
          }
        }

        const double rx = x - center;
        const double ry = y - center;
        double free_radius = std::sqrt(rx * rx + ry * ry) - aggregate_radius - 2.0;
        if (agg.inside(x, y)) {
          free_radius = std::max(free_radius, agg.clearance(x, y) - 2.0);
        } else {
          const int ox = x < 0 ? -x : (x >= n ? x - n + 1 : 0);
          const int oy = y < 0 ? -y : (y >= n ? y - n + 1 : 0);
          free_radius = std::max(free_radius, static_cast<double>(std::max(ox, oy)) - 1.0);
        }
        if (free_radius >= 2.0) {
          const double angle = 2.0 * std::numbers::pi * rng.uniform();
          x += static_cast<int>(std::lround(free_radius * std::cos(angle)));
          y += static_cast<int>(std::lround(free_radius * std::sin(angle)));
        } else {
          const int d = rng.direction4();
          const int nx = x + kStepX[d];
          const int ny = y + kStepY[d];
          if (agg.occupied(nx, ny)) continue;
          x = nx;
          y = ny;
        }
        const double ox = x - center;
        const double oy = y - center;
        if (ox * ox + oy * oy > kill2) break;
      }
    }
  }
  return agg.to_image();
}

DendriteImage perturb(const DendriteImage& image, const Perturbation& p) {
  const int lattice = std::max(image.width, image.height);
  if (!(p.noise_rate >= 0.0 && p.noise_rate <= 0.5)) {
    throw Error(ErrorCode::invalid_params, "noise_rate must be in [0, 0.5]");
  }
  if (std::abs(p.shift.first) > lattice / 8 || std::abs(p.shift.second) > lattice / 8) {
    throw Error(ErrorCode::invalid_params, "shift components must be <= lattice_size/8");
  }
  if (!std::isfinite(p.rotation_deg)) {
    throw Error(ErrorCode::invalid_params, "rotation must be finite");
  }

  DendriteImage noisy = image;
  if (p.noise_rate > 0.0) {
    detail::Rng rng(p.rng_seed);
    for (auto& px : noisy.pixels) {
      if (rng.uniform() < p.noise_rate) px ^= 1u;
    }
  }

  DendriteImage shifted = noisy;
  if (p.shift.first != 0 || p.shift.second != 0) {
    std::fill(shifted.pixels.begin(), shifted.pixels.end(), 0);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        shifted.at(x, y) = noisy.get(x - p.shift.first, y - p.shift.second);
      }
    }
  }

  if (p.rotation_deg == 0.0) return shifted;

  DendriteImage rotated(image.width, image.height, image.provenance);
  const double theta = p.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double cx = (image.width - 1) / 2.0;
  const double cy = (image.height - 1) / 2.0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      // Inverse mapping: sample the source at R(-theta) * (p - center).
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      const int ix = static_cast<int>(std::lround(sx));
      const int iy = static_cast<int>(std::lround(sy));
      rotated.at(x, y) = shifted.get(ix, iy);
    }
  }
  return rotated;
}

}  // namespace dendrite
