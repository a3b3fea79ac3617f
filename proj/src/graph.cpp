#include "dendrite/graph.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "dendrite/error.hpp"

namespace dendrite {

std::string_view kind_name(KeyPointKind kind) {
  switch (kind) {
    case KeyPointKind::endpoint: return "endpoint";
    case KeyPointKind::junction: return "junction";
    case KeyPointKind::root: return "root";
  }
  return "endpoint";
}

KeyPointKind parse_kind(std::string_view name) {
  if (name == "endpoint") return KeyPointKind::endpoint;
  if (name == "junction") return KeyPointKind::junction;
  if (name == "root") return KeyPointKind::root;
  throw Error(ErrorCode::bad_request, "unknown key point kind '" + std::string(name) + "'");
}

double wrap_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians + std::numbers::pi, two_pi);
  if (r < 0) r += two_pi;
  r -= std::numbers::pi;
  if (r >= std::numbers::pi) r -= two_pi;
  return r;
}

int KeyPointGraph::root() const {
  for (const auto& n : nodes) {
    if (n.kind == KeyPointKind::root) return n.id;
  }
  return -1;
}

std::vector<int> KeyPointGraph::degrees() const {
  std::vector<int> deg(nodes.size(), 0);
  for (const auto& e : edges) {
    ++deg[static_cast<std::size_t>(e.a)];
    ++deg[static_cast<std::size_t>(e.b)];
  }
  return deg;
}

std::string check_invariants(const KeyPointGraph& graph) {
  const auto n = graph.nodes.size();
  if (n == 0) return "graph has no nodes";
  for (std::size_t i = 0; i < n; ++i) {
    if (graph.nodes[i].id != static_cast<int>(i)) return "node ids must equal their index";
  }
  if (graph.edges.size() != n - 1) return "edge count must be node count - 1";

  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& e : graph.edges) {
    if (e.a < 0 || e.b < 0 || e.a >= static_cast<int>(n) || e.b >= static_cast<int>(n) || e.a == e.b) {
      return "edge endpoint out of range";
    }
    const int ra = find(e.a);
    const int rb = find(e.b);
    if (ra == rb) return "graph contains a cycle";
    parent[ra] = rb;
    const double dx = graph.nodes[e.b].x - graph.nodes[e.a].x;
    const double dy = graph.nodes[e.b].y - graph.nodes[e.a].y;
    if (e.arc_length + 1e-9 < std::hypot(dx, dy)) return "arc shorter than chord";
    if (!(e.chord_angle >= -std::numbers::pi && e.chord_angle < std::numbers::pi)) {
      return "chord angle outside [-pi, pi)";
    }
  }

  int roots = 0;
  const auto deg = graph.degrees();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = graph.nodes[i];
    if (node.kind == KeyPointKind::root) {
      ++roots;
      continue;
    }
    if (node.kind == KeyPointKind::endpoint && deg[i] != 1) return "endpoint with degree != 1";
    if (node.kind == KeyPointKind::junction && deg[i] < 3) return "junction with degree < 3";
  }
  if (roots != 1) return "graph must have exactly one root";
  return {};
}

nlohmann::ordered_json to_json(const KeyPointGraph& graph) {
  nlohmann::ordered_json doc;
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& n : graph.nodes) {
    nlohmann::ordered_json j;
    j["id"] = n.id;
    j["x"] = n.x;
    j["y"] = n.y;
    j["kind"] = kind_name(n.kind);
    nodes.push_back(std::move(j));
  }
  auto edges = nlohmann::ordered_json::array();
  for (const auto& e : graph.edges) {
    nlohmann::ordered_json j;
    j["a"] = e.a;
    j["b"] = e.b;
    j["arc_length"] = e.arc_length;
    j["chord_angle"] = e.chord_angle;
    edges.push_back(std::move(j));
  }
  doc["nodes"] = std::move(nodes);
  doc["edges"] = std::move(edges);
  nlohmann::ordered_json norm;
  norm["centroid_x"] = graph.normalization.centroid_x;
  norm["centroid_y"] = graph.normalization.centroid_y;
  norm["rotation"] = graph.normalization.rotation;
  norm["scale"] = graph.normalization.scale;
  norm["orientation_tie_break"] = graph.normalization.orientation_tie_break;
  doc["normalization"] = std::move(norm);
  return doc;
}

KeyPointGraph graph_from_json(const nlohmann::json& doc) {
  KeyPointGraph g;
  try {
    for (const auto& j : doc.at("nodes")) {
      g.nodes.push_back({j.at("id").get<int>(), j.at("x").get<double>(), j.at("y").get<double>(),
                         parse_kind(j.at("kind").get<std::string>())});
    }
    for (const auto& j : doc.at("edges")) {
      g.edges.push_back({j.at("a").get<int>(), j.at("b").get<int>(), j.at("arc_length").get<double>(),
                         j.at("chord_angle").get<double>()});
    }
    const auto& n = doc.at("normalization");
    g.normalization.centroid_x = n.at("centroid_x").get<double>();
    g.normalization.centroid_y = n.at("centroid_y").get<double>();
    g.normalization.rotation = n.at("rotation").get<double>();
    g.normalization.scale = n.at("scale").get<double>();
    g.normalization.orientation_tie_break = n.value("orientation_tie_break", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_request, std::string("malformed graph document: ") + e.what());
  }
  return g;
}

}  // namespace dendrite
