#include <vector>

#include "dendrite/error.hpp"
#include "dendrite/graph_extract.hpp"

namespace dendrite {

namespace {

// Neighbors in Zhang-Suen order: P2 (north) clockwise to P9 (north-west).
constexpr int kDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};
constexpr int kDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};

void neighborhood(const DendriteImage& img, int x, int y, int (&p)[8]) {
  for (int k = 0; k < 8; ++k) p[k] = img.get(x + kDx[k], y + kDy[k]);
}

bool zhang_suen_pass(DendriteImage& img, int step) {
  std::vector<int> doomed;
  int p[8];
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!img.at(x, y)) continue;
      neighborhood(img, x, y, p);
      int b = 0;
      int a = 0;
      for (int k = 0; k < 8; ++k) {
        b += p[k];
        if (p[k] == 0 && p[(k + 1) % 8] == 1) ++a;
      }
      if (b < 2 || b > 6 || a != 1) continue;
      const int n = p[0], e = p[2], s = p[4], w = p[6];
      if (step == 0) {
        if (n * e * s != 0 || e * s * w != 0) continue;
      } else {
        if (n * e * w != 0 || n * s * w != 0) continue;
      }
      doomed.push_back(y * img.width + x);
    }
  }
  for (int idx : doomed) img.pixels[idx] = 0;
  return !doomed.empty();
}

// Yokoi connectivity number for 8-connectivity; 1 means removing the pixel
// does not change local topology.
int yokoi8(const int (&p)[8]) {
  // Work on the complement, 4-neighbors at even indices.
  int c = 0;
  for (int k = 0; k < 8; k += 2) {
    const int a = 1 - p[k];
    const int b = 1 - p[(k + 1) % 8];
    const int d = 1 - p[(k + 2) % 8];
    c += a - a * b * d;
  }
  return c;
}

bool remove_staircases(DendriteImage& img) {
  bool changed = false;
  int p[8];
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!img.at(x, y)) continue;
      neighborhood(img, x, y, p);
      int b = 0;
      for (int v : p) b += v;
      if (b < 2) continue;
      const int n = p[0], e = p[2], s = p[4], w = p[6];
      const bool corner = (n && e) || (e && s) || (s && w) || (w && n);
      if (!corner) continue;
      if (yokoi8(p) != 1) continue;
      img.at(x, y) = 0;
      changed = true;
    }
  }
  return changed;
}

}  // namespace

DendriteImage skeletonize(const DendriteImage& image) {
  if (image.foreground_count() == 0) {
    throw Error(ErrorCode::empty_foreground, "cannot skeletonize an empty image");
  }
  DendriteImage img = image;
  bool changed = true;
  while (changed) {
    bool thinning = true;
    while (thinning) {
      const bool first = zhang_suen_pass(img, 0);
      const bool second = zhang_suen_pass(img, 1);
      thinning = first || second;
    }
    changed = remove_staircases(img);
  }
  return img;
}

}  // namespace dendrite
