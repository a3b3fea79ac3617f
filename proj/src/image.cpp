#include "dendrite/image.hpp"

namespace dendrite {

std::size_t label_components(const DendriteImage& image, std::vector<int>& labels) {
  labels.assign(image.pixels.size(), 0);
  std::vector<int> stack;
  int next = 0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const int idx = y * image.width + x;
      if (!image.pixels[idx] || labels[idx]) continue;
      ++next;
      labels[idx] = next;
      stack.push_back(idx);
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        const int cx = cur % image.width;
        const int cy = cur / image.width;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx;
            const int ny = cy + dy;
            if (!image.in_bounds(nx, ny)) continue;
            const int nidx = ny * image.width + nx;
            if (image.pixels[nidx] && !labels[nidx]) {
              labels[nidx] = next;
              stack.push_back(nidx);
            }
          }
        }
      }
    }
  }
  return static_cast<std::size_t>(next);
}

std::size_t count_components(const DendriteImage& image) {
  std::vector<int> labels;
  return label_components(image, labels);
}

}  // namespace dendrite
