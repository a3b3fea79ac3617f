#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "dendrite/graph.hpp"
#include "dendrite/image.hpp"

namespace dendrite {

struct ExtractOptions {
  // Foreground pixels with no 8-neighbor are treated as speckle and dropped
  // (unless that would empty the image).
  bool drop_isolated = true;
  // Cross-shaped dilation before thinning. Bridges single-pixel breaks and
  // absorbs one-pixel speckle so re-scans thin to the same skeleton.
  bool bridge_gaps = true;
  // 3x3 majority vote after dilation; trims one-pixel bumps along the outline.
  bool smooth = true;
  // Skeleton tips are regrown up to this many pixels straight on through the
  // cleaned foreground, undoing the erosion thinning causes at stroke ends.
  int regrow_tips = 2;
  double junction_merge_radius = 2.0;
  // Endpoint branches shorter than this (px) hanging off a junction are pruned.
  double min_spur_length = 3.0;
  // Pruning is repeated this many times (each round followed by splicing out
  // degree-2 nodes), so twigs of twigs are removed too.
  int prune_rounds = 1;
};

// Applies the pre-thinning cleanup: speckle removal, dilation, majority
// smoothing, then keeps the largest 8-connected component.
DendriteImage clean_pattern(const DendriteImage& image, const ExtractOptions& options = {});

// Zhang-Suen thinning followed by removal of redundant staircase pixels,
// iterated to a fixed point.
DendriteImage skeletonize(const DendriteImage& image);

KeyPointGraph extract_graph(const DendriteImage& image, const ExtractOptions& options = {});

struct TagId {
  std::array<std::uint8_t, 32> bytes{};

  std::string hex() const;
  static TagId from_hex(const std::string& hex);
  friend bool operator==(const TagId&, const TagId&) = default;
  friend auto operator<=>(const TagId&, const TagId&) = default;
};

// Stable text form hashed by canonical_id: nodes sorted by (x, y, kind) with
// coordinates quantized to 0.1 px, edges remapped and sorted by endpoint ids.
std::string canonical_serialization(const KeyPointGraph& graph);

// SHA-256 of canonical_serialization.
TagId canonical_id(const KeyPointGraph& graph);

}  // namespace dendrite
