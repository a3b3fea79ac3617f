#include "dendrite/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "dendrite/error.hpp"

namespace dendrite {

PreparedGraph::PreparedGraph(const KeyPointGraph& graph) {
  const std::size_t n = graph.nodes.size();
  x_.resize(n);
  y_.resize(n);
  degree_.assign(n, 0);
  kind_.resize(n);
  mean_arc_.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    x_[i] = graph.nodes[i].x;
    y_[i] = graph.nodes[i].y;
  }
  edges_.reserve(graph.edges.size());
  arc_.reserve(graph.edges.size());
  for (const auto& e : graph.edges) {
    edges_.emplace_back(e.a, e.b);
    arc_.push_back(e.arc_length);
    ++degree_[e.a];
    ++degree_[e.b];
    mean_arc_[e.a] += e.arc_length;
    mean_arc_[e.b] += e.arc_length;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (degree_[i] > 0) mean_arc_[i] /= degree_[i];
    kind_[i] = degree_[i] == 1 ? 0 : 1;
  }
  adj_offset_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) adj_offset_[i + 1] = adj_offset_[i] + degree_[i];
  adj_.resize(static_cast<std::size_t>(adj_offset_[n]));
  std::vector<int> fill(adj_offset_.begin(), adj_offset_.end() - 1);
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    const auto [a, b] = edges_[k];
    adj_[fill[a]++] = {b, static_cast<int>(k)};
    adj_[fill[b]++] = {a, static_cast<int>(k)};
  }
}

bool PreparedGraph::adjacent(int u, int v) const {
  for (int k = adj_offset_[u]; k < adj_offset_[u + 1]; ++k) {
    if (adj_[k].first == v) return true;
  }
  return false;
}

int compare(const PreparedGraph& a, const PreparedGraph& b) {
  if (a.size() != b.size()) return a.size() < b.size() ? -1 : 1;
  if (a.edge_count() != b.edge_count()) return a.edge_count() < b.edge_count() ? -1 : 1;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.x_[i] != b.x_[i]) return a.x_[i] < b.x_[i] ? -1 : 1;
    if (a.y_[i] != b.y_[i]) return a.y_[i] < b.y_[i] ? -1 : 1;
    if (a.degree_[i] != b.degree_[i]) return a.degree_[i] < b.degree_[i] ? -1 : 1;
    if (a.mean_arc_[i] != b.mean_arc_[i]) return a.mean_arc_[i] < b.mean_arc_[i] ? -1 : 1;
  }
  if (a.edges_ != b.edges_) return a.edges_ < b.edges_ ? -1 : 1;
  return 0;
}

namespace {

struct Point {
  double x;
  double y;
};

class Placement {
 public:
  explicit Placement(const RigidTransform& t)
      : c_(std::cos(t.rotation)), s_(std::sin(t.rotation)), tx_(t.tx), ty_(t.ty) {}
  Point operator()(double x, double y) const { return {c_ * x - s_ * y + tx_, s_ * x + c_ * y + ty_}; }

 private:
  double c_;
  double s_;
  double tx_;
  double ty_;
};

Point apply(const RigidTransform& t, double x, double y) { return Placement(t)(x, y); }

double node_distance(const PreparedGraph& a, int i, const PreparedGraph& b, int j, Point pb,
                     const MatchOptions& o) {
  double d = std::hypot(a.x()[i] - pb.x, a.y()[i] - pb.y);
  if (a.kind()[i] != b.kind()[j]) d += o.kind_weight;
  d += o.degree_weight * std::abs(a.degree()[i] - b.degree()[j]);
  d += o.arc_weight * std::abs(a.mean_arc()[i] - b.mean_arc()[j]);
  return d;
}

// Bucket grid over the first graph's node positions.
class PointGrid {
 public:
  PointGrid(std::span<const double> xs, std::span<const double> ys, double cell) : cell_(cell) {
    min_x_ = std::numeric_limits<double>::infinity();
    min_y_ = min_x_;
    double max_x = -min_x_;
    double max_y = -min_x_;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      min_x_ = std::min(min_x_, xs[i]);
      min_y_ = std::min(min_y_, ys[i]);
      max_x = std::max(max_x, xs[i]);
      max_y = std::max(max_y, ys[i]);
    }
    cols_ = static_cast<int>((max_x - min_x_) / cell_) + 1;
    rows_ = static_cast<int>((max_y - min_y_) / cell_) + 1;
    head_.assign(static_cast<std::size_t>(cols_) * rows_, -1);
    next_.assign(xs.size(), -1);
    for (std::size_t i = xs.size(); i-- > 0;) {
      const std::size_t c = cell_of(xs[i], ys[i]);
      next_[i] = head_[c];
      head_[c] = static_cast<int>(i);
    }
  }

  template <typename Fn>
  void for_near(double x, double y, Fn&& fn) const {
    const int cx = static_cast<int>(std::floor((x - min_x_) / cell_));
    const int cy = static_cast<int>(std::floor((y - min_y_) / cell_));
    for (int gy = std::max(0, cy - 1); gy <= std::min(rows_ - 1, cy + 1); ++gy) {
      for (int gx = std::max(0, cx - 1); gx <= std::min(cols_ - 1, cx + 1); ++gx) {
        for (int i = head_[static_cast<std::size_t>(gy) * cols_ + gx]; i >= 0; i = next_[i]) fn(i);
      }
    }
  }

 private:
  std::size_t cell_of(double x, double y) const {
    const int cx = static_cast<int>((x - min_x_) / cell_);
    const int cy = static_cast<int>((y - min_y_) / cell_);
    return static_cast<std::size_t>(cy) * cols_ + cx;
  }

  double cell_;
  double min_x_;
  double min_y_;
  int cols_ = 0;
  int rows_ = 0;
  std::vector<int> head_;
  std::vector<int> next_;
};

// Minimum-cost assignment of every row (rows <= cols) via shortest augmenting
// paths with potentials. Returns the column of each row.
std::vector<int> hungarian(const std::vector<double>& cost, int rows, int cols) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0.0);
  std::vector<double> v(cols + 1, 0.0);
  std::vector<int> p(cols + 1, 0);
  std::vector<int> way(cols + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of(rows, -1);
  for (int j = 1; j <= cols; ++j) {
    if (p[j] != 0) col_of[p[j] - 1] = j - 1;
  }
  return col_of;
}

struct Candidate {
  int a;
  int b;
  double distance;
};

int find_root(std::vector<int>& parent, int v) {
  while (parent[v] != v) v = parent[v] = parent[parent[v]];
  return v;
}

RigidTransform fit_rigid(const PreparedGraph& a, const PreparedGraph& b, const std::vector<int>& mate) {
  double ax = 0, ay = 0, bx = 0, by = 0;
  int n = 0;
  for (std::size_t i = 0; i < mate.size(); ++i) {
    if (mate[i] < 0) continue;
    ax += a.x()[i];
    ay += a.y()[i];
    bx += b.x()[mate[i]];
    by += b.y()[mate[i]];
    ++n;
  }
  ax /= n;
  ay /= n;
  bx /= n;
  by /= n;
  double dot = 0;
  double cross = 0;
  for (std::size_t i = 0; i < mate.size(); ++i) {
    if (mate[i] < 0) continue;
    const double px = a.x()[i] - ax;
    const double py = a.y()[i] - ay;
    const double qx = b.x()[mate[i]] - bx;
    const double qy = b.y()[mate[i]] - by;
    dot += qx * px + qy * py;
    cross += qx * py - qy * px;
  }
  RigidTransform t;
  t.rotation = std::atan2(cross, dot);
  const double c = std::cos(t.rotation);
  const double s = std::sin(t.rotation);
  t.tx = ax - (c * bx - s * by);
  t.ty = ay - (s * bx + c * by);
  return t;
}

// Junction nodes of one graph (all nodes when there are fewer than 3), for coarse alignment.
struct Anchors {
  std::vector<int> index;
  std::vector<double> x;
  std::vector<double> y;
  explicit Anchors(const PreparedGraph& g) {
    const auto junctions = std::count(g.kind().begin(), g.kind().end(), std::uint8_t{1});
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (junctions >= 3 && g.kind()[i] == 0) continue;
      index.push_back(static_cast<int>(i));
      x.push_back(g.x()[i]);
      y.push_back(g.y()[i]);
    }
  }
};

// Mutual nearest anchors by position within `radius`, as mates over the nodes
// of `a`. `close_pairs` counts the pairs nearer than `close`.
std::vector<int> mutual_nearest(const PreparedGraph& a, const Anchors& aa, const Anchors& bb, const PointGrid& grid,
                                const RigidTransform& t, double radius, double close, int& close_pairs) {
  const std::size_t na = aa.index.size();
  const std::size_t nb = bb.index.size();
  std::vector<int> best_b(na, -1);
  std::vector<double> best_b_d(na, radius * radius);
  std::vector<int> best_a(nb, -1);
  const Placement place(t);
  for (std::size_t j = 0; j < nb; ++j) {
    const Point pb = place(bb.x[j], bb.y[j]);
    double best = radius * radius;
    grid.for_near(pb.x, pb.y, [&](int i) {
      const double dx = aa.x[i] - pb.x;
      const double dy = aa.y[i] - pb.y;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best) {
        best = d2;
        best_a[j] = i;
      }
      if (d2 < best_b_d[i]) {
        best_b_d[i] = d2;
        best_b[i] = static_cast<int>(j);
      }
    });
  }
  std::vector<int> mate(a.size(), -1);
  close_pairs = 0;
  for (std::size_t i = 0; i < na; ++i) {
    if (best_b[i] >= 0 && best_a[best_b[i]] == static_cast<int>(i)) {
      mate[aa.index[i]] = bb.index[best_b[i]];
      if (best_b_d[i] < close * close) ++close_pairs;
    }
  }
  return mate;
}

Assignment assign_with_grid(const PreparedGraph& a, const PreparedGraph& b, const PointGrid& grid,
                            const RigidTransform& t, const MatchOptions& o) {
  const int na = static_cast<int>(a.size());
  const int nb = static_cast<int>(b.size());
  std::vector<Candidate> cands;
  const Placement place(t);
  for (int j = 0; j < nb; ++j) {
    const Point pb = place(b.x()[j], b.y()[j]);
    grid.for_near(pb.x, pb.y, [&](int i) {
      const double d = node_distance(a, i, b, j, pb, o);
      if (d < o.tau_node) cands.push_back({i, j, d});
    });
  }

  Assignment out;
  out.mate.assign(na, -1);
  if (!cands.empty()) {
    // Independent components of the admissible bipartite graph are solved separately.
    std::vector<int> parent(static_cast<std::size_t>(na + nb));
    std::iota(parent.begin(), parent.end(), 0);
    for (const auto& c : cands) {
      const int ra = find_root(parent, c.a);
      const int rb = find_root(parent, na + c.b);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    std::vector<std::pair<int, int>> order;  // (component, candidate)
    order.reserve(cands.size());
    for (std::size_t k = 0; k < cands.size(); ++k) order.emplace_back(find_root(parent, cands[k].a), static_cast<int>(k));
    std::sort(order.begin(), order.end());

    std::vector<int> row_slot(na, -1);
    std::vector<int> col_slot(nb, -1);
    std::vector<int> rows;
    std::vector<int> cols;
    std::vector<double> cost;
    for (std::size_t begin = 0; begin < order.size();) {
      std::size_t end = begin;
      while (end < order.size() && order[end].first == order[begin].first) ++end;
      if (end - begin == 1) {
        const auto& c = cands[order[begin].second];
        out.mate[c.a] = c.b;
        out.total_weight += o.tau_node - c.distance;
        begin = end;
        continue;
      }
      rows.clear();
      cols.clear();
      for (std::size_t k = begin; k < end; ++k) {
        const auto& c = cands[order[k].second];
        if (row_slot[c.a] < 0) {
          row_slot[c.a] = static_cast<int>(rows.size());
          rows.push_back(c.a);
        }
        if (col_slot[c.b] < 0) {
          col_slot[c.b] = static_cast<int>(cols.size());
          cols.push_back(c.b);
        }
      }
      const bool transpose = rows.size() > cols.size();
      const int r = static_cast<int>(transpose ? cols.size() : rows.size());
      const int m = static_cast<int>(transpose ? rows.size() : cols.size());
      cost.assign(static_cast<std::size_t>(r) * m, 0.0);
      for (std::size_t k = begin; k < end; ++k) {
        const auto& c = cands[order[k].second];
        const int ri = transpose ? col_slot[c.b] : row_slot[c.a];
        const int ci = transpose ? row_slot[c.a] : col_slot[c.b];
        cost[static_cast<std::size_t>(ri) * m + ci] = c.distance - o.tau_node;
      }
      const auto assigned = hungarian(cost, r, m);
      for (int ri = 0; ri < r; ++ri) {
        const int ci = assigned[ri];
        if (ci < 0) continue;
        const double c = cost[static_cast<std::size_t>(ri) * m + ci];
        if (c >= 0.0) continue;
        const int ai = transpose ? rows[ci] : rows[ri];
        const int bj = transpose ? cols[ri] : cols[ci];
        out.mate[ai] = bj;
        out.total_weight += -c;
      }
      for (int ai : rows) row_slot[ai] = -1;
      for (int bj : cols) col_slot[bj] = -1;
      begin = end;
    }
  }

  for (int m : out.mate) out.matched_nodes += m >= 0 ? 1 : 0;
  out.consistent_edges = count_consistent_edges(a, b, out.mate, o);
  out.value = score_value(a.size(), b.size(), a.edge_count(), b.edge_count(), out.matched_nodes,
                          out.consistent_edges);
  return out;
}

// Consistent edges of `g` given node mates into `other` (and the reverse map).
int consistent_one_way(const PreparedGraph& g, const PreparedGraph& other, const std::vector<int>& mate,
                       const std::vector<int>& other_mate, const MatchOptions& o) {
  int consistent = 0;
  struct Frame {
    int node;
    int via_edge;
    double length;
  };
  std::vector<Frame> stack;
  for (std::size_t k = 0; k < g.edge_count(); ++k) {
    const auto [u, v] = g.edges()[k];
    const int mu = mate[u];
    const int mv = mate[v];
    if (mu < 0 || mv < 0) continue;
    if (other.adjacent(mu, mv)) {
      ++consistent;
      continue;
    }
    const double target = g.arc_length()[k];
    const double tol = std::max(o.path_tolerance_px, o.path_tolerance_rel * target);
    const double limit = target + tol;
    bool found = false;
    stack.clear();
    stack.push_back({mu, -1, 0.0});
    while (!stack.empty() && !found) {
      const Frame f = stack.back();
      stack.pop_back();
      for (const auto& [next, edge] : other.neighbors(f.node)) {
        if (edge == f.via_edge) continue;
        const double len = f.length + other.arc_length()[edge];
        if (len > limit) continue;
        if (next == mv) {
          if (std::abs(len - target) <= tol) found = true;
          break;
        }
        if (other_mate[next] >= 0) continue;  // interior nodes must be unmatched
        stack.push_back({next, edge, len});
      }
    }
    if (found) ++consistent;
  }
  return consistent;
}

}  // namespace

int count_consistent_edges(const PreparedGraph& a, const PreparedGraph& b, const std::vector<int>& mate,
                           const MatchOptions& options) {
  std::vector<int> reverse(b.size(), -1);
  for (std::size_t i = 0; i < mate.size(); ++i) {
    if (mate[i] >= 0) reverse[mate[i]] = static_cast<int>(i);
  }
  return consistent_one_way(a, b, mate, reverse, options) + consistent_one_way(b, a, reverse, mate, options);
}

namespace {

void require_scorable(const PreparedGraph& g) {
  if (g.size() < 2 || g.edge_count() == 0) {
    throw Error(ErrorCode::degenerate_graph, "graph matching needs at least 2 nodes and 1 edge");
  }
}

}  // namespace

double descriptor_distance(const PreparedGraph& a, int i, const PreparedGraph& b, int j, const RigidTransform& t,
                           const MatchOptions& options) {
  return node_distance(a, i, b, j, apply(t, b.x()[j], b.y()[j]), options);
}

double score_value(std::size_t nodes_a, std::size_t nodes_b, std::size_t edges_a, std::size_t edges_b, int matched,
                   int consistent) {
  const double node_term = 2.0 * matched / static_cast<double>(nodes_a + nodes_b);
  const double edge_term = edges_a + edges_b == 0 ? 0.0 : consistent / static_cast<double>(edges_a + edges_b);
  return std::clamp(node_term * edge_term, 0.0, 1.0);
}

Assignment assign_nodes(const PreparedGraph& a, const PreparedGraph& b, const RigidTransform& b_to_a,
                        const MatchOptions& options) {
  require_scorable(a);
  require_scorable(b);
  const PointGrid grid(a.x(), a.y(), options.tau_node);
  return assign_with_grid(a, b, grid, b_to_a, options);
}

MatchScore graph_match_score(const PreparedGraph& first, const PreparedGraph& second, const MatchOptions& options) {
  require_scorable(first);
  require_scorable(second);
  const bool swap = compare(first, second) > 0;
  const PreparedGraph& a = swap ? second : first;
  const PreparedGraph& b = swap ? first : second;

  const PointGrid grid(a.x(), a.y(), options.tau_node);
  const double coarse_radius = options.coarse_align_factor * options.tau_node;
  const Anchors a_anchors(a);
  const Anchors b_anchors(b);
  const PointGrid coarse_grid(a_anchors.x, a_anchors.y, coarse_radius);
  const Assignment identity = assign_with_grid(a, b, grid, RigidTransform{}, options);
  MatchScore best{identity.value, identity.matched_nodes, 0};
  if (best.value >= 1.0) return best;
  const auto consider = [&](const Assignment& asg) {
    if (asg.value > best.value || (asg.value == best.value && asg.matched_nodes > best.matched_nodes)) {
      best.value = asg.value;
      best.matched_nodes = asg.matched_nodes;
    }
  };

  // Rank coarsely aligned starts by how many nodes land close to a partner.
  struct Start {
    RigidTransform t;
    int close_pairs = 0;
  };
  std::vector<Start> starts;
  const int rotations = std::max(1, options.start_rotations);
  starts.reserve(static_cast<std::size_t>(rotations));
  for (int k = 0; k < rotations; ++k) {
    Start st{{2.0 * std::numbers::pi * k / rotations, 0.0, 0.0}, 0};
    for (int round = 0; round <= options.coarse_align_rounds; ++round) {
      const auto mates = mutual_nearest(a, a_anchors, b_anchors, coarse_grid, st.t, coarse_radius,
                                         options.tau_node, st.close_pairs);
      if (round == options.coarse_align_rounds) break;
      if (std::count_if(mates.begin(), mates.end(), [](int m) { return m >= 0; }) < 3) break;
      st.t = fit_rigid(a, b, mates);
    }
    starts.push_back(st);
  }
  std::stable_sort(starts.begin(), starts.end(),
                   [](const Start& x, const Start& y) { return x.close_pairs > y.close_pairs; });

  const int refine = std::min<int>(options.refine_starts, static_cast<int>(starts.size()));
  for (int sidx = 0; sidx < refine && best.value < 1.0; ++sidx) {
    RigidTransform t = starts[sidx].t;
    Assignment asg = assign_with_grid(a, b, grid, t, options);
    consider(asg);
    for (int round = 0; round < options.refine_iterations && best.value < 1.0; ++round) {
      if (asg.matched_nodes < 3) break;
      const RigidTransform next = fit_rigid(a, b, asg.mate);
      const double moved = std::abs(wrap_angle(next.rotation - t.rotation)) * 200.0 + std::abs(next.tx - t.tx) +
                           std::abs(next.ty - t.ty);
      t = next;
      asg = assign_with_grid(a, b, grid, t, options);
      consider(asg);
      if (moved < 1e-3) break;
    }
  }
  return best;
}

MatchScore graph_match_score(const KeyPointGraph& a, const KeyPointGraph& b, const MatchOptions& options) {
  return graph_match_score(PreparedGraph(a), PreparedGraph(b), options);
}

std::vector<RecordId> shortlist(const Surrogate& query, std::span<const IndexEntry> index, std::size_t k) {
  if (index.empty()) throw Error(ErrorCode::empty_index, "shortlist over an empty index");
  if (k == 0) throw Error(ErrorCode::invalid_params, "k must be positive");
  struct Ranked {
    double d2;
    RecordId id;
  };
  std::vector<Ranked> all;
  all.reserve(index.size());
  for (const auto& e : index) {
    if (e.surrogate.model_version != query.model_version) {
      throw Error(ErrorCode::model_version_mismatch,
                  "query model version " + std::to_string(query.model_version) + " but index entry " +
                      std::to_string(e.id) + " has version " + std::to_string(e.surrogate.model_version));
    }
    const double du = e.surrogate.u - query.u;
    const double dv = e.surrogate.v - query.v;
    all.push_back({du * du + dv * dv, e.id});
  }
  const std::size_t take = std::min(k, all.size());
  auto less = [](const Ranked& x, const Ranked& y) { return x.d2 != y.d2 ? x.d2 < y.d2 : x.id < y.id; };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), less);
  std::vector<RecordId> ids;
  ids.reserve(take);
  for (std::size_t i = 0; i < take; ++i) ids.push_back(all[i].id);
  return ids;
}

PreparedQuery prepare_query(const DendriteImage& image, const ExtractOptions& options) {
  PreparedQuery q;
  q.graph = extract_graph(image, options);
  q.features = featurize(q.graph);
  q.prepared = std::make_shared<const PreparedGraph>(q.graph);
  return q;
}

namespace {

void rank_into(IdentifyResult& result, std::vector<MatchScore> scores, const IdentifyOptions& options) {
  std::sort(scores.begin(), scores.end(), [](const MatchScore& x, const MatchScore& y) {
    return x.value != y.value ? x.value > y.value : x.candidate_id < y.candidate_id;
  });
  if (!scores.empty()) result.best = scores.front();
  if (scores.size() > 5) scores.resize(5);
  result.ranked = std::move(scores);
  result.decision = result.best && result.best->value >= options.accept_threshold ? Decision::matched
                                                                                   : Decision::no_match;
}

const IndexedRecord* find_record(const SearchIndex& index, RecordId id) {
  auto it = std::lower_bound(index.records.begin(), index.records.end(), id,
                             [](const IndexedRecord& r, RecordId v) { return r.id < v; });
  return it != index.records.end() && it->id == id ? &*it : nullptr;
}

}  // namespace

IdentifyResult identify_prepared(const PreparedQuery& query, const DendriteImage* image, const SearchIndex& index,
                                 const IdentifyOptions& options, std::chrono::steady_clock::time_point started) {
  if (index.records.empty()) throw Error(ErrorCode::empty_registry, "no registered records to search");
  std::vector<RecordId> ids;
  if (!index.model) {
    // Without a model only a shortlist covering every record is meaningful.
    if (index.records.size() > options.k) {
      throw Error(ErrorCode::model_version_missing, "index has no projection model");
    }
    for (const auto& r : index.records) ids.push_back(r.id);
  } else {
    const Surrogate qs = project(query.features, *index.model);
    std::vector<IndexEntry> entries;
    entries.reserve(index.records.size());
    for (const auto& r : index.records) entries.push_back({r.id, r.surrogate});
    ids = shortlist(qs, entries, options.k);
  }

  std::vector<MatchScore> scores;
  scores.reserve(ids.size());
  for (RecordId id : ids) {
    const IndexedRecord* rec = find_record(index, id);
    MatchScore s = graph_match_score(*query.prepared, *rec->graph, options.match);
    s.candidate_id = id;
    scores.push_back(s);
  }
  IdentifyResult result;
  result.shortlist_size = ids.size();
  rank_into(result, std::move(scores), options);
  if (options.secondary && image && result.best) {
    result.secondary = options.secondary->authenticate(*image, result.best->candidate_id);
  }
  result.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

IdentifyResult identify(const DendriteImage& image, const SearchIndex& index, const IdentifyOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  if (index.records.empty()) throw Error(ErrorCode::empty_registry, "no registered records to search");
  const PreparedQuery query = prepare_query(image, options.extract);
  return identify_prepared(query, &image, index, options, started);
}

IdentifyResult identify_exhaustive(const PreparedQuery& query, const SearchIndex& index,
                                   const IdentifyOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  if (index.records.empty()) throw Error(ErrorCode::empty_registry, "no registered records to search");
  std::vector<MatchScore> scores;
  scores.reserve(index.records.size());
  for (const auto& rec : index.records) {
    MatchScore s = graph_match_score(*query.prepared, *rec.graph, options.match);
    s.candidate_id = rec.id;
    scores.push_back(s);
  }
  IdentifyResult result;
  result.shortlist_size = index.records.size();
  rank_into(result, std::move(scores), options);
  result.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace dendrite
