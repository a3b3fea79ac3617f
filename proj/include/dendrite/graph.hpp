#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dendrite {

enum class KeyPointKind : std::uint8_t { endpoint, junction, root };

std::string_view kind_name(KeyPointKind kind);
KeyPointKind parse_kind(std::string_view name);

struct KeyPoint {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  KeyPointKind kind = KeyPointKind::endpoint;
};

struct GraphEdge {
  int a = 0;  // parent side (towards the root)
  int b = 0;
  double arc_length = 0.0;
  double chord_angle = 0.0;  // angle of (b - a), in [-pi, pi)
};

// Pixel frame -> canonical frame: canonical = scale * R(rotation) * (pixel - centroid).
struct Normalization {
  double centroid_x = 0.0;
  double centroid_y = 0.0;
  double rotation = 0.0;  // radians
  double scale = 1.0;
  bool orientation_tie_break = false;
};

struct KeyPointGraph {
  std::vector<KeyPoint> nodes;  // nodes[i].id == i
  std::vector<GraphEdge> edges;
  Normalization normalization;

  std::size_t size() const { return nodes.size(); }
  int root() const;  // index of the root node, -1 if none
  std::vector<int> degrees() const;
};

// Checks the tree/kind/root invariants. Returns an empty string on success,
// otherwise a description of the first violation.
std::string check_invariants(const KeyPointGraph& graph);

nlohmann::ordered_json to_json(const KeyPointGraph& graph);
KeyPointGraph graph_from_json(const nlohmann::json& doc);

// Wraps an angle into [-pi, pi).
double wrap_angle(double radians);

}  // namespace dendrite
