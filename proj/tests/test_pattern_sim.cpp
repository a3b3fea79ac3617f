#include <gtest/gtest.h>
#include <png.h>

#include <cmath>
#include <queue>
#include <random>
#include <set>

#include "dendrite/error.hpp"
#include "dendrite/pattern_sim.hpp"
#include "dendrite/png_io.hpp"
#include "test_support.hpp"

using namespace dendrite;

namespace {

// Flood fill, independent of label_components.
std::size_t flood_components(const DendriteImage& img) {
  std::vector<std::uint8_t> seen(img.pixels.size(), 0);
  std::size_t n = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!img.at(x, y) || seen[y * img.width + x]) continue;
      ++n;
      std::queue<std::pair<int, int>> q;
      q.push({x, y});
      seen[y * img.width + x] = 1;
      while (!q.empty()) {
        auto [cx, cy] = q.front();
        q.pop();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (!img.in_bounds(nx, ny) || !img.at(nx, ny) || seen[ny * img.width + nx]) continue;
            seen[ny * img.width + nx] = 1;
            q.push({nx, ny});
          }
        }
      }
    }
  }
  return n;
}

// Plain lattice-step DLA: four-direction unit steps only, respawn on escape.
// Returns the number of particles that attached.
int reference_walk(int n, int particles, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(n) * n, 0);
  const int c = n / 2;
  occ[c * n + c] = 1;
  double radius = 0;
  int attached = 0;
  auto touching = [&](int x, int y) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if ((dx || dy) && nx >= 0 && ny >= 0 && nx < n && ny < n && occ[ny * n + nx]) return true;
      }
    return false;
  };
  std::uniform_real_distribution<double> angle(0, 2 * M_PI);
  for (int p = 0; p < particles; ++p) {
    while (true) {
      const double spawn = radius + 3;
      const double a = angle(rng);
      int x = c + static_cast<int>(std::lround(spawn * std::cos(a)));
      int y = c + static_cast<int>(std::lround(spawn * std::sin(a)));
      bool done = false;
      while (true) {
        if (x < 0 || y < 0 || x >= n || y >= n || std::hypot(x - c, y - c) > 2 * spawn) break;
        if (!occ[y * n + x] && touching(x, y)) {
          occ[y * n + x] = 1;
          radius = std::max(radius, std::hypot(x - c, y - c));
          ++attached;
          done = true;
          break;
        }
        const int d = static_cast<int>(rng() % 4);
        const int nx = x + (d == 0) - (d == 1), ny = y + (d == 2) - (d == 3);
        if (nx >= 0 && ny >= 0 && nx < n && ny < n && occ[ny * n + nx]) continue;
        x = nx;
        y = ny;
      }
      if (done) break;
    }
  }
  // Attached pixels counted from the lattice, not the loop counter.
  int on = 0;
  for (auto v : occ) on += v;
  return on - 1 == attached ? attached : -1;
}

// Box-counting dimension: least-squares slope of log N(s) against log(1/s),
// over box sizes between the lattice regime and the cluster radius.
double box_dimension(const DendriteImage& img) {
  std::vector<double> xs, ys;
  for (int s : {4, 8, 16, 32, 64}) {
    std::set<std::pair<int, int>> boxes;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (img.at(x, y)) boxes.insert({x / s, y / s});
    xs.push_back(std::log(1.0 / s));
    ys.push_back(std::log(static_cast<double>(boxes.size())));
  }
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<std::uint8_t> gray_png(int w, int h, const std::vector<std::uint8_t>& levels, int bit_depth = 8) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        v->insert(v->end(), data, data + len);
      },
      nullptr);
  png_set_IHDR(png, info, w, h, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row((w * bit_depth + 7) / 8);
  for (int y = 0; y < h; ++y) {
    std::fill(row.begin(), row.end(), 0);
    for (int x = 0; x < w; ++x) {
      const std::uint8_t v = levels[y * w + x];
      if (bit_depth == 8) {
        row[x] = v;
      } else if (v) {
        row[x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

TEST(Generate, ZeroParticlesLeavesOnlyTheSeed) {
  GrowthParams p;
  p.lattice_size = 64;
  p.particle_count = 0;
  const auto img = generate(p);
  EXPECT_EQ(img.foreground_count(), 1u);
  EXPECT_EQ(img.at(32, 32), 1);
}

TEST(Generate, Deterministic) {
  GrowthParams p;
  p.lattice_size = 128;
  p.particle_count = 800;
  p.rng_seed = 99;
  EXPECT_TRUE(generate(p).same_pixels(generate(p)));
  p.stickiness = 0.4;
  EXPECT_TRUE(generate(p).same_pixels(generate(p)));
}

TEST(Generate, Seed7Has4001ConnectedPixels) {
  GrowthParams p;
  p.lattice_size = 256;
  p.particle_count = 4000;
  p.stickiness = 1.0;
  p.rng_seed = 7;
  const auto img = generate(p);
  EXPECT_EQ(img.width * img.height, static_cast<int>(img.pixels.size()));
  EXPECT_EQ(img.foreground_count(), 4001u);
  EXPECT_EQ(flood_components(img), 1u);
  EXPECT_EQ(img.at(128, 128), 1);
  EXPECT_EQ(img.provenance, Provenance::synthetic);
}

TEST(Generate, ReferenceWalkAttachesEveryParticle) {
  // A naive unit-step walker agrees that every particle attaches exactly once.
  EXPECT_EQ(reference_walk(128, 200, 7), 200);
  GrowthParams p;
  p.lattice_size = 128;
  p.particle_count = 200;
  p.rng_seed = 7;
  EXPECT_EQ(generate(p).foreground_count(), 201u);
}

TEST(Generate, LowStickinessStillConnected) {
  GrowthParams p;
  p.lattice_size = 128;
  p.particle_count = 1000;
  p.stickiness = 0.3;
  p.rng_seed = 3;
  const auto img = generate(p);
  EXPECT_EQ(img.foreground_count(), 1001u);
  EXPECT_EQ(flood_components(img), 1u);
}

TEST(Generate, InvalidParams) {
  auto expect_invalid = [](GrowthParams p) {
    try {
      generate(p);
      ADD_FAILURE() << "accepted invalid params";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::invalid_params);
    }
  };
  GrowthParams p;
  p.lattice_size = 15;
  expect_invalid(p);
  p = {};
  p.lattice_size = 16;
  p.particle_count = 256;
  expect_invalid(p);
  p = {};
  p.stickiness = 0.0;
  expect_invalid(p);
  p = {};
  p.stickiness = 1.5;
  expect_invalid(p);
  p = {};
  p.particle_count = -1;
  expect_invalid(p);
}

TEST(Generate, CorpusImagesAreConnectedAndDistinct) {
  const auto& imgs = fixtures::images(1, 200);
  std::set<std::vector<std::uint8_t>> distinct;
  for (const auto& img : imgs) {
    EXPECT_EQ(flood_components(img), 1u);
    EXPECT_EQ(img.foreground_count(), 4001u);
    distinct.insert(img.pixels);
  }
  EXPECT_EQ(distinct.size(), imgs.size());
}

TEST(Generate, BoxCountingDimensionInDlaRange) {
  for (const auto& img : fixtures::images(1, 5)) {
    const double d = box_dimension(img);
    EXPECT_GE(d, 1.5);
    EXPECT_LE(d, 1.9);
  }
}

TEST(Perturb, IdentityPerturbation) {
  const auto& img = fixtures::images(1, 1)[0];
  EXPECT_TRUE(perturb(img, {0.0, {0, 0}, 0.0, 5}).same_pixels(img));
}

TEST(Perturb, RejectsOutOfRange) {
  const auto& img = fixtures::images(1, 1)[0];
  for (const Perturbation& p : {Perturbation{1.0, {0, 0}, 0.0, 1}, Perturbation{0.6, {0, 0}, 0.0, 1},
                                Perturbation{-0.1, {0, 0}, 0.0, 1}, Perturbation{0.0, {33, 0}, 0.0, 1},
                                Perturbation{0.0, {0, -33}, 0.0, 1}}) {
    try {
      perturb(img, p);
      ADD_FAILURE() << "accepted noise " << p.noise_rate << " shift " << p.shift.first << "," << p.shift.second;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::invalid_params);
    }
  }
  EXPECT_NO_THROW(perturb(img, {0.5, {32, -32}, 10.0, 1}));
}

TEST(Perturb, FlipCountWithinThreeSigmaOfBinomial) {
  const auto& img = fixtures::images(1, 1)[0];
  const double n = 65536, p = 0.01;
  const double mean = n * p, sigma = std::sqrt(n * p * (1 - p));
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const auto noisy = perturb(img, {0.01, {0, 0}, 0.0, seed});
    std::size_t flips = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) flips += img.pixels[i] != noisy.pixels[i];
    EXPECT_NEAR(static_cast<double>(flips), mean, 3 * sigma) << "seed " << seed;
  }
}

TEST(Perturb, DeterministicAndSeedSensitive) {
  const auto& img = fixtures::images(1, 1)[0];
  const Perturbation p{0.02, {3, -2}, 4.5, 11};
  EXPECT_TRUE(perturb(img, p).same_pixels(perturb(img, p)));
  Perturbation q = p;
  q.rng_seed = 12;
  EXPECT_FALSE(perturb(img, p).same_pixels(perturb(img, q)));
}

TEST(Perturb, ShiftTranslatesWithZeroFill) {
  DendriteImage img(16, 16);
  img.at(2, 3) = 1;
  img.at(15, 15) = 1;
  const auto out = perturb(img, {0.0, {2, 1}, 0.0, 0});
  EXPECT_EQ(out.at(4, 4), 1);
  EXPECT_EQ(out.foreground_count(), 1u);  // the corner pixel left the frame
}

TEST(Perturb, QuarterTurnIsExact) {
  DendriteImage img(9, 9);
  img.at(6, 4) = 1;  // right of center
  const auto out = perturb(img, {0.0, {0, 0}, 90.0, 0});
  EXPECT_EQ(out.foreground_count(), 1u);
  EXPECT_EQ(out.at(4, 6), 1);  // y grows downward, so +90 deg sends +x to +y
}

TEST(Ingest, AllBlackIsEmptyForeground) {
  const auto png = gray_png(8, 8, std::vector<std::uint8_t>(64, 0));
  try {
    ingest(png);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_foreground);
  }
}

TEST(Ingest, GarbageIsDecodeFailure) {
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  try {
    ingest(junk);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::decode_failure);
  }
}

TEST(Ingest, RoundTripIsLossless) {
  const auto& img = fixtures::images(1, 1)[0];
  const auto back = ingest(encode_png(img));
  EXPECT_TRUE(back.same_pixels(img));
  EXPECT_EQ(back.provenance, Provenance::ingested);
}

TEST(Ingest, GradientThresholdSemantics) {
  std::vector<std::uint8_t> levels(256 * 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 256; ++x) levels[y * 256 + x] = static_cast<std::uint8_t>(x);
  const auto img = ingest(gray_png(256, 2, levels), 128);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 256; ++x) EXPECT_EQ(img.at(x, y), x >= 128 ? 1 : 0) << x;
}

TEST(Ingest, OneBitGray) {
  std::vector<std::uint8_t> levels(10 * 3, 0);
  levels[1 * 10 + 4] = 1;
  levels[2 * 10 + 9] = 1;
  const auto img = ingest(gray_png(10, 3, levels, 1));
  EXPECT_EQ(img.foreground_count(), 2u);
  EXPECT_EQ(img.at(4, 1), 1);
  EXPECT_EQ(img.at(9, 2), 1);
}
