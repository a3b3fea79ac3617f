#include "dendrite/graph_extract.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <queue>
#include <set>
#include <tuple>

#include "dendrite/error.hpp"

namespace dendrite {

namespace {

// 4-neighbors first so tracing prefers straight steps.
constexpr int kNx[8] = {1, 0, -1, 0, 1, -1, -1, 1};
constexpr int kNy[8] = {0, 1, 0, -1, 1, 1, -1, -1};

struct DisjointSet {
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (a < b) std::swap(a, b);
    parent[a] = b;
    return true;
  }
  std::vector<int> parent;
};

struct RawEdge {
  int u;
  int v;
  double length;
};

struct PixelGraph {
  std::vector<double> node_x;
  std::vector<double> node_y;
  std::vector<RawEdge> edges;
};

PixelGraph trace_key_points(const DendriteImage& skel, double merge_radius) {
  const int w = skel.width;
  const int h = skel.height;
  auto neighbor_count = [&](int x, int y) {
    int c = 0;
    for (int k = 0; k < 8; ++k) c += skel.get(x + kNx[k], y + kNy[k]);
    return c;
  };

  std::vector<int> node_of(static_cast<std::size_t>(w) * h, -1);
  std::vector<int> junction_pixels;
  PixelGraph graph;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!skel.at(x, y)) continue;
      const int c = neighbor_count(x, y);
      if (c == 1) {
        node_of[y * w + x] = static_cast<int>(graph.node_x.size());
        graph.node_x.push_back(x);
        graph.node_y.push_back(y);
      } else if (c >= 3) {
        junction_pixels.push_back(y * w + x);
      }
    }
  }

  // Merge junction pixels within the radius into one node at their centroid.
  DisjointSet clusters(junction_pixels.size());
  const int r = static_cast<int>(std::ceil(merge_radius));
  const double r2 = merge_radius * merge_radius;
  std::vector<int> junction_slot(static_cast<std::size_t>(w) * h, -1);
  for (std::size_t i = 0; i < junction_pixels.size(); ++i) junction_slot[junction_pixels[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < junction_pixels.size(); ++i) {
    const int x = junction_pixels[i] % w;
    const int y = junction_pixels[i] / w;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (dx * dx + dy * dy > r2) continue;
        const int nx = x + dx;
        const int ny = y + dy;
        if (!skel.in_bounds(nx, ny)) continue;
        const int j = junction_slot[ny * w + nx];
        if (j >= 0) clusters.unite(static_cast<int>(i), j);
      }
    }
  }
  std::map<int, int> cluster_node;
  std::vector<double> sum_x;
  std::vector<double> sum_y;
  std::vector<int> count;
  for (std::size_t i = 0; i < junction_pixels.size(); ++i) {
    const int rep = clusters.find(static_cast<int>(i));
    auto [it, inserted] = cluster_node.try_emplace(rep, static_cast<int>(graph.node_x.size() + cluster_node.size()));
    (void)inserted;
    node_of[junction_pixels[i]] = it->second;
  }
  const std::size_t endpoint_count = graph.node_x.size();
  graph.node_x.resize(endpoint_count + cluster_node.size(), 0.0);
  graph.node_y.resize(endpoint_count + cluster_node.size(), 0.0);
  count.assign(graph.node_x.size(), 0);
  for (int idx : junction_pixels) {
    const int node = node_of[idx];
    graph.node_x[node] += idx % w;
    graph.node_y[node] += idx / w;
    ++count[node];
  }
  for (std::size_t n = endpoint_count; n < graph.node_x.size(); ++n) {
    graph.node_x[n] /= count[n];
    graph.node_y[n] /= count[n];
  }

  auto offset = [&](int node, int pixel) {
    return std::hypot(graph.node_x[node] - pixel % w, graph.node_y[node] - pixel / w);
  };

  std::vector<std::uint8_t> on_arc(static_cast<std::size_t>(w) * h, 0);
  std::set<std::pair<int, int>> direct_links;
  std::vector<int> key_pixels;
  for (int i = 0; i < w * h; ++i) {
    if (node_of[i] >= 0) key_pixels.push_back(i);
  }

  for (int start : key_pixels) {
    const int u = node_of[start];
    const int sx = start % w;
    const int sy = start / w;
    for (int k = 0; k < 8; ++k) {
      const int qx = sx + kNx[k];
      const int qy = sy + kNy[k];
      if (!skel.in_bounds(qx, qy) || !skel.at(qx, qy)) continue;
      const int q = qy * w + qx;
      const double first_step = (k < 4) ? 1.0 : std::numbers::sqrt2;
      if (node_of[q] >= 0) {
        if (node_of[q] == u) continue;
        const auto key = std::minmax(start, q);
        if (direct_links.insert(key).second) {
          graph.edges.push_back({u, node_of[q], first_step + offset(u, start) + offset(node_of[q], q)});
        }
        continue;
      }
      if (on_arc[q]) continue;

      int prev = start;
      int cur = q;
      double length = first_step;
      int end = -1;
      while (true) {
        on_arc[cur] = 1;
        const int cx = cur % w;
        const int cy = cur / w;
        int next = -1;
        double step = 0.0;
        // A key pixel adjacent to the walk ends the arc.
        for (int j = 0; j < 8 && end < 0; ++j) {
          const int nx = cx + kNx[j];
          const int ny = cy + kNy[j];
          if (!skel.in_bounds(nx, ny) || !skel.at(nx, ny)) continue;
          const int n = ny * w + nx;
          if (n == prev || node_of[n] < 0) continue;
          if (n == start && length < 2.5) continue;
          end = n;
          step = (j < 4) ? 1.0 : std::numbers::sqrt2;
        }
        if (end >= 0) {
          length += step;
          break;
        }
        for (int j = 0; j < 8; ++j) {
          const int nx = cx + kNx[j];
          const int ny = cy + kNy[j];
          if (!skel.in_bounds(nx, ny) || !skel.at(nx, ny)) continue;
          const int n = ny * w + nx;
          if (n == prev || on_arc[n]) continue;
          next = n;
          step = (j < 4) ? 1.0 : std::numbers::sqrt2;
          break;
        }
        if (next < 0) break;
        length += step;
        prev = cur;
        cur = next;
      }
      if (end < 0) continue;
      const int v = node_of[end];
      if (v == u) continue;  // self-loop through a junction cluster
      graph.edges.push_back({u, v, length + offset(u, start) + offset(v, end)});
    }
  }
  return graph;
}

struct TreeNode {
  double x;
  double y;
  bool alive = true;
};

struct TreeEdge {
  int u;
  int v;
  double length;
  bool alive = true;
};

// Maximum spanning forest on arc length, then the component with the most nodes.
void reduce_to_tree(std::vector<TreeNode>& nodes, std::vector<TreeEdge>& edges) {
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = edges[a];
    const auto& eb = edges[b];
    if (ea.length != eb.length) return ea.length > eb.length;
    return std::minmax(ea.u, ea.v) < std::minmax(eb.u, eb.v);
  });
  DisjointSet forest(nodes.size());
  for (auto i : order) {
    if (!forest.unite(edges[i].u, edges[i].v)) edges[i].alive = false;
  }
  std::map<int, int> sizes;
  for (std::size_t i = 0; i < nodes.size(); ++i) ++sizes[forest.find(static_cast<int>(i))];
  int best = -1;
  int best_size = 0;
  for (auto [rep, size] : sizes) {
    if (size > best_size) {
      best = rep;
      best_size = size;
    }
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (forest.find(static_cast<int>(i)) != best) nodes[i].alive = false;
  }
  for (auto& e : edges) {
    if (e.alive && !nodes[e.u].alive) e.alive = false;
  }
}

std::vector<std::vector<int>> incidence(const std::vector<TreeNode>& nodes, const std::vector<TreeEdge>& edges) {
  std::vector<std::vector<int>> inc(nodes.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!edges[i].alive) continue;
    inc[edges[i].u].push_back(static_cast<int>(i));
    inc[edges[i].v].push_back(static_cast<int>(i));
  }
  return inc;
}

void prune_spurs(std::vector<TreeNode>& nodes, std::vector<TreeEdge>& edges, double min_length) {
  auto inc = incidence(nodes, edges);
  std::vector<std::pair<double, int>> spurs;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].alive && inc[i].size() == 1 && edges[inc[i][0]].length < min_length) {
      spurs.emplace_back(edges[inc[i][0]].length, static_cast<int>(i));
    }
  }
  std::sort(spurs.begin(), spurs.end());
  std::vector<int> degree(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) degree[i] = static_cast<int>(inc[i].size());
  for (auto [len, leaf] : spurs) {
    const auto& e = edges[inc[leaf][0]];
    const int other = e.u == leaf ? e.v : e.u;
    if (degree[leaf] != 1 || degree[other] < 3) continue;
    edges[inc[leaf][0]].alive = false;
    nodes[leaf].alive = false;
    --degree[other];
    degree[leaf] = 0;
  }
}

void splice_degree_two(std::vector<TreeNode>& nodes, std::vector<TreeEdge>& edges) {
  // Splicing keeps every other node's degree, so one pass in index order suffices.
  auto inc = incidence(nodes, edges);
  const auto relink = [&](int node, int old_edge, int new_edge) {
    auto& list = inc[node];
    list.erase(std::find(list.begin(), list.end(), old_edge));
    list.push_back(new_edge);
  };
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].alive || inc[i].size() != 2) continue;
    const int k1 = inc[i][0];
    const int k2 = inc[i][1];
    const int a = edges[k1].u == static_cast<int>(i) ? edges[k1].v : edges[k1].u;
    const int b = edges[k2].u == static_cast<int>(i) ? edges[k2].v : edges[k2].u;
    edges[k1].alive = false;
    edges[k2].alive = false;
    nodes[i].alive = false;
    inc[i].clear();
    const int k = static_cast<int>(edges.size());
    edges.push_back({a, b, edges[k1].length + edges[k2].length});
    relink(a, k1, k);
    relink(b, k2, k);
  }
}

struct Moments {
  double cx = 0;
  double cy = 0;
  double sxx = 0;
  double syy = 0;
  double sxy = 0;
};

Moments foreground_moments(const DendriteImage& img) {
  Moments m;
  double n = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!img.at(x, y)) continue;
      m.cx += x;
      m.cy += y;
      n += 1;
    }
  }
  m.cx /= n;
  m.cy /= n;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!img.at(x, y)) continue;
      const double dx = x - m.cx;
      const double dy = y - m.cy;
      m.sxx += dx * dx;
      m.syy += dy * dy;
      m.sxy += dx * dy;
    }
  }
  m.sxx /= n;
  m.syy /= n;
  m.sxy /= n;
  return m;
}

std::int64_t quantize(double v) { return static_cast<std::int64_t>(std::llround(v * 10.0)); }

using NodeKey = std::tuple<std::int64_t, std::int64_t, int>;

NodeKey node_key(const KeyPoint& n) { return {quantize(n.x), quantize(n.y), static_cast<int>(n.kind)}; }

// Relabels nodes in canonical (x, y, kind) order and sorts edges.
void canonicalize_labels(KeyPointGraph& g) {
  std::vector<int> order(g.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ka = node_key(g.nodes[a]);
    const auto kb = node_key(g.nodes[b]);
    if (ka != kb) return ka < kb;
    return std::tie(g.nodes[a].x, g.nodes[a].y) < std::tie(g.nodes[b].x, g.nodes[b].y);
  });
  std::vector<int> new_id(g.nodes.size());
  std::vector<KeyPoint> nodes(g.nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    new_id[order[i]] = static_cast<int>(i);
    nodes[i] = g.nodes[order[i]];
    nodes[i].id = static_cast<int>(i);
  }
  for (auto& e : g.edges) {
    e.a = new_id[e.a];
    e.b = new_id[e.b];
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const GraphEdge& x, const GraphEdge& y) {
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });
  g.nodes = std::move(nodes);
}

std::vector<NodeKey> sorted_keys(const std::vector<KeyPoint>& nodes) {
  std::vector<NodeKey> keys;
  keys.reserve(nodes.size());
  for (const auto& n : nodes) keys.push_back(node_key(n));
  std::sort(keys.begin(), keys.end());
  return keys;
}

// Thinning a dilated stroke erodes each tip by about the stroke half-width.
// Regrow every endpoint straight on, through pixels of `cleaned`, for at most
// `steps` pixels, stopping before the tip would touch another skeleton pixel.
DendriteImage extend_endpoints(const DendriteImage& skel, const DendriteImage& cleaned, int steps) {
  DendriteImage out = skel;
  auto neighbours = [&](int x, int y, int& nx, int& ny) {
    int n = 0;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if ((dx || dy) && out.get(x + dx, y + dy)) {
          ++n;
          nx = x + dx;
          ny = y + dy;
        }
      }
    }
    return n;
  };
  std::vector<std::pair<int, int>> tips;
  for (int y = 0; y < skel.height; ++y) {
    for (int x = 0; x < skel.width; ++x) {
      int nx = 0;
      int ny = 0;
      if (skel.at(x, y) && neighbours(x, y, nx, ny) == 1) tips.emplace_back(x, y);
    }
  }
  for (auto [x, y] : tips) {
    int px = 0;
    int py = 0;
    if (neighbours(x, y, px, py) != 1) continue;
    const int dx = x - px;
    const int dy = y - py;
    for (int step = 0; step < steps; ++step) {
      const int tx = x + dx;
      const int ty = y + dy;
      if (!cleaned.get(tx, ty) || out.get(tx, ty)) break;
      // The new tip may only touch the current tip.
      bool clear = true;
      for (int oy = -1; oy <= 1 && clear; ++oy) {
        for (int ox = -1; ox <= 1; ++ox) {
          const int cx = tx + ox;
          const int cy = ty + oy;
          if ((ox || oy) && !(cx == x && cy == y) && out.get(cx, cy)) {
            clear = false;
            break;
          }
        }
      }
      if (!clear) break;
      out.at(tx, ty) = 1;
      x = tx;
      y = ty;
    }
  }
  return out;
}

}  // namespace

DendriteImage clean_pattern(const DendriteImage& image, const ExtractOptions& options) {
  DendriteImage source = image;
  if (options.drop_isolated) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        if (!image.at(x, y)) continue;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) n += (dx || dy) ? image.get(x + dx, y + dy) : 0;
        }
        if (n == 0) source.at(x, y) = 0;
      }
    }
    if (source.foreground_count() == 0) source = image;
  }
  DendriteImage work = source;
  if (options.bridge_gaps) {
    for (int y = 0; y < source.height; ++y) {
      for (int x = 0; x < source.width; ++x) {
        if (source.at(x, y)) continue;
        if (source.get(x - 1, y) || source.get(x + 1, y) || source.get(x, y - 1) || source.get(x, y + 1)) {
          work.at(x, y) = 1;
        }
      }
    }
  }
  if (options.smooth) {
    // 3x3 majority vote.
    const DendriteImage grown = work;
    for (int y = 0; y < grown.height; ++y) {
      for (int x = 0; x < grown.width; ++x) {
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) n += grown.get(x + dx, y + dy);
        }
        work.at(x, y) = n >= 5 ? 1 : 0;
      }
    }
    if (work.foreground_count() == 0) work = grown;
  }
  std::vector<int> labels;
  const auto n = label_components(work, labels);
  if (n <= 1) return work;
  std::vector<std::size_t> sizes(n + 1, 0);
  for (int l : labels) ++sizes[l];
  int keep = 1;
  for (std::size_t l = 2; l <= n; ++l) {
    if (sizes[l] > sizes[keep]) keep = static_cast<int>(l);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) work.pixels[i] = labels[i] == keep ? 1 : 0;
  return work;
}

KeyPointGraph extract_graph(const DendriteImage& image, const ExtractOptions& options) {
  if (image.foreground_count() == 0) {
    throw Error(ErrorCode::empty_foreground, "image has no foreground pixels");
  }
  const DendriteImage cleaned = clean_pattern(image, options);
  DendriteImage skel = skeletonize(cleaned);
  if (options.regrow_tips > 0) skel = extend_endpoints(skel, cleaned, options.regrow_tips);
  const PixelGraph raw = trace_key_points(skel, options.junction_merge_radius);
  if (raw.node_x.size() < 2) {
    throw Error(ErrorCode::degenerate_pattern, "fewer than 2 key points");
  }

  std::vector<TreeNode> nodes;
  nodes.reserve(raw.node_x.size());
  for (std::size_t i = 0; i < raw.node_x.size(); ++i) nodes.push_back({raw.node_x[i], raw.node_y[i]});
  std::vector<TreeEdge> edges;
  edges.reserve(raw.edges.size());
  for (const auto& e : raw.edges) edges.push_back({e.u, e.v, e.length});

  reduce_to_tree(nodes, edges);
  splice_degree_two(nodes, edges);
  for (int round = 0; round < options.prune_rounds; ++round) {
    prune_spurs(nodes, edges, options.min_spur_length);
    splice_degree_two(nodes, edges);
  }

  // Compact the surviving tree.
  std::vector<int> remap(nodes.size(), -1);
  std::vector<TreeNode> live_nodes;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].alive) continue;
    remap[i] = static_cast<int>(live_nodes.size());
    live_nodes.push_back(nodes[i]);
  }
  std::vector<TreeEdge> live_edges;
  for (const auto& e : edges) {
    if (e.alive) live_edges.push_back({remap[e.u], remap[e.v], e.length});
  }
  if (live_nodes.size() < 2) {
    throw Error(ErrorCode::degenerate_pattern, "fewer than 2 key points after simplification");
  }

  const Moments m = foreground_moments(cleaned);
  std::vector<int> degree(live_nodes.size(), 0);
  for (const auto& e : live_edges) {
    ++degree[e.u];
    ++degree[e.v];
  }
  int root = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < live_nodes.size(); ++i) {
    const double d = std::hypot(live_nodes[i].x - m.cx, live_nodes[i].y - m.cy);
    if (d < best) {
      best = d;
      root = static_cast<int>(i);
    }
  }

  // Principal axis of the cleaned foreground.
  const double trace = m.sxx + m.syy;
  const double gap = std::sqrt((m.sxx - m.syy) * (m.sxx - m.syy) + 4.0 * m.sxy * m.sxy);
  const double lambda1 = 0.5 * (trace + gap);
  const double lambda2 = 0.5 * (trace - gap);
  const double axis = 0.5 * std::atan2(2.0 * m.sxy, m.sxx - m.syy);
  const bool tie = lambda1 <= 0.0 || (lambda1 - lambda2) < 0.01 * lambda1;

  auto build = [&](double rotation) {
    KeyPointGraph g;
    const double c = std::cos(rotation);
    const double s = std::sin(rotation);
    g.nodes.resize(live_nodes.size());
    for (std::size_t i = 0; i < live_nodes.size(); ++i) {
      const double dx = live_nodes[i].x - m.cx;
      const double dy = live_nodes[i].y - m.cy;
      KeyPointKind kind = degree[i] == 1 ? KeyPointKind::endpoint : KeyPointKind::junction;
      if (static_cast<int>(i) == root) kind = KeyPointKind::root;
      g.nodes[i] = {static_cast<int>(i), c * dx - s * dy, s * dx + c * dy, kind};
    }
    g.normalization = {m.cx, m.cy, wrap_angle(rotation), 1.0, tie};
    return g;
  };

  // Candidate rotations: the axis to +x, and its half-turn. Near-isotropic
  // patterns also consider the quarter turns.
  std::vector<double> candidates = {-axis, -axis + std::numbers::pi};
  if (tie) {
    candidates.push_back(-axis + std::numbers::pi / 2);
    candidates.push_back(-axis + 3 * std::numbers::pi / 2);
  }
  std::vector<KeyPointGraph> admissible;
  for (double rot : candidates) {
    auto g = build(rot);
    if (g.nodes[root].y >= 0.0) admissible.push_back(std::move(g));
  }
  KeyPointGraph graph;
  const bool need_tie_break = admissible.size() > 1;
  if (admissible.empty()) {
    graph = build(candidates[0]);
  } else if (!need_tie_break) {
    graph = std::move(admissible.front());
  } else {
    std::size_t pick = 0;
    auto best_keys = sorted_keys(admissible[0].nodes);
    for (std::size_t i = 1; i < admissible.size(); ++i) {
      auto keys = sorted_keys(admissible[i].nodes);
      if (keys < best_keys) {
        best_keys = std::move(keys);
        pick = i;
      }
    }
    graph = std::move(admissible[pick]);
  }

  // Orient edges away from the root.
  std::vector<std::vector<std::pair<int, double>>> adj(live_nodes.size());
  for (const auto& e : live_edges) {
    adj[e.u].emplace_back(e.v, e.length);
    adj[e.v].emplace_back(e.u, e.length);
  }
  std::vector<int> seen(live_nodes.size(), 0);
  std::queue<int> frontier;
  frontier.push(root);
  seen[root] = 1;
  while (!frontier.empty()) {
    const int cur = frontier.front();
    frontier.pop();
    for (auto [next, length] : adj[cur]) {
      if (seen[next]) continue;
      seen[next] = 1;
      const double dx = graph.nodes[next].x - graph.nodes[cur].x;
      const double dy = graph.nodes[next].y - graph.nodes[cur].y;
      graph.edges.push_back({cur, next, length, wrap_angle(std::atan2(dy, dx))});
      frontier.push(next);
    }
  }
  canonicalize_labels(graph);
  return graph;
}

std::string canonical_serialization(const KeyPointGraph& graph) {
  KeyPointGraph g = graph;
  canonicalize_labels(g);
  std::string out = "nodes";
  for (const auto& n : g.nodes) {
    out += ';';
    out += std::to_string(quantize(n.x));
    out += ',';
    out += std::to_string(quantize(n.y));
    out += ',';
    out += kind_name(n.kind);
  }
  out += "|edges";
  for (const auto& e : g.edges) {
    out += ';';
    out += std::to_string(e.a);
    out += ',';
    out += std::to_string(e.b);
    out += ',';
    out += std::to_string(quantize(e.arc_length));
  }
  return out;
}

}  // namespace dendrite
