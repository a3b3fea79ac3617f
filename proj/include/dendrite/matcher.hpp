#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dendrite/features.hpp"
#include "dendrite/graph.hpp"
#include "dendrite/graph_extract.hpp"
#include "dendrite/image.hpp"

namespace dendrite {

using RecordId = std::uint64_t;

struct MatchOptions {
  double tau_node = 4.0;  // canonical px
  // Descriptor distance = |position delta| + kind_weight*[kind differs]
  //   + degree_weight*|degree delta| + arc_weight*|incident mean arc delta|.
  double kind_weight = 1.0;
  double degree_weight = 0.5;
  double arc_weight = 0.05;
  // Starting frames: `start_rotations` evenly spaced rotations of the second
  // graph about the canonical origin, beginning with the identity.
  int start_rotations = 30;
  // The `refine_starts` starts with the most close node pairs are scored and
  // refined by rigid re-alignment.
  int refine_starts = 3;
  // Each rotated start is first aligned by mutual nearest neighbours within
  // coarse_align_factor * tau_node, ignoring descriptors.
  int coarse_align_rounds = 2;
  double coarse_align_factor = 3.0;
  int refine_iterations = 3;
  // An edge is consistent when its matched endpoints are adjacent in the other
  // graph, or joined there by a path through unmatched nodes whose arc length is
  // within max(path_tolerance_px, path_tolerance_rel * arc) of the edge's.
  double path_tolerance_px = 3.0;
  double path_tolerance_rel = 0.3;
};

struct MatchScore {
  double value = 0.0;
  int matched_nodes = 0;
  RecordId candidate_id = 0;
};

// Node descriptors and adjacency precomputed for repeated scoring.
class PreparedGraph {
 public:
  explicit PreparedGraph(const KeyPointGraph& graph);

  std::size_t size() const { return x_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  std::span<const double> x() const { return x_; }
  std::span<const double> y() const { return y_; }
  std::span<const int> degree() const { return degree_; }
  std::span<const std::uint8_t> kind() const { return kind_; }  // 0 endpoint, 1 junction
  std::span<const double> mean_arc() const { return mean_arc_; }
  std::span<const std::pair<int, int>> edges() const { return edges_; }
  std::span<const double> arc_length() const { return arc_; }  // per edge
  bool adjacent(int u, int v) const;
  // Neighbors of u as (node, edge index).
  std::span<const std::pair<int, int>> neighbors(int u) const {
    return {adj_.data() + adj_offset_[u], adj_.data() + adj_offset_[u + 1]};
  }

  // Total order used to make scoring independent of argument order.
  friend int compare(const PreparedGraph& a, const PreparedGraph& b);

 private:
  std::vector<double> x_;
  std::vector<double> y_;
  std::vector<int> degree_;
  std::vector<std::uint8_t> kind_;
  std::vector<double> mean_arc_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<double> arc_;
  std::vector<int> adj_offset_;
  std::vector<std::pair<int, int>> adj_;
};

// Maps the second graph's canonical coordinates into the first's frame.
struct RigidTransform {
  double rotation = 0.0;
  double tx = 0.0;
  double ty = 0.0;
};

struct Assignment {
  std::vector<int> mate;  // per node of `a`: matched node of `b`, or -1
  int matched_nodes = 0;
  int consistent_edges = 0;  // counted over the edges of both graphs
  double total_weight = 0.0;  // sum of (tau - distance) over matched pairs
  double value = 0.0;
};

double descriptor_distance(const PreparedGraph& a, int i, const PreparedGraph& b, int j, const RigidTransform& t,
                           const MatchOptions& options);

// Exact maximum-weight one-to-one assignment in fixed frames. A pair is
// admissible when its descriptor distance is below tau_node; its weight is
// tau_node - distance. Equivalent to minimum summed distance saturated at tau_node.
Assignment assign_nodes(const PreparedGraph& a, const PreparedGraph& b, const RigidTransform& b_to_a,
                        const MatchOptions& options = {});

// Consistent edges of `a` plus consistent edges of `b` under the matching.
int count_consistent_edges(const PreparedGraph& a, const PreparedGraph& b, const std::vector<int>& mate,
                           const MatchOptions& options = {});

// value = 2*matched/(|A|+|B|) * consistent_edges/(|E_A|+|E_B|).
double score_value(std::size_t nodes_a, std::size_t nodes_b, std::size_t edges_a, std::size_t edges_b, int matched,
                   int consistent);

// Best assignment over evenly spaced starting rotations, the most promising
// refined by rigid re-alignment. Symmetric in its arguments.
MatchScore graph_match_score(const PreparedGraph& a, const PreparedGraph& b, const MatchOptions& options = {});
MatchScore graph_match_score(const KeyPointGraph& a, const KeyPointGraph& b, const MatchOptions& options = {});

struct IndexEntry {
  RecordId id = 0;
  Surrogate surrogate;
};

// k nearest surrogates by Euclidean distance, ties by ascending id.
std::vector<RecordId> shortlist(const Surrogate& query, std::span<const IndexEntry> index, std::size_t k);

// Verdict from an optional second-stage authenticator (e.g. depth-based).
struct SecondaryVerdict {
  bool authentic = false;
  double confidence = 0.0;
  std::string method;
};

class SecondaryAuthenticator {
 public:
  virtual ~SecondaryAuthenticator() = default;
  virtual SecondaryVerdict authenticate(const DendriteImage& image, RecordId candidate) const = 0;
};

enum class Decision { matched, no_match };

struct IdentifyResult {
  Decision decision = Decision::no_match;
  std::optional<MatchScore> best;
  std::size_t shortlist_size = 0;
  double elapsed = 0.0;  // seconds, whole pipeline
  std::vector<MatchScore> ranked;  // top 5
  std::optional<SecondaryVerdict> secondary;  // unpopulated unless an authenticator is attached
};

struct IdentifyOptions {
  std::size_t k = 25;
  double accept_threshold = 0.75;
  MatchOptions match;
  ExtractOptions extract;
  const SecondaryAuthenticator* secondary = nullptr;
};

struct IndexedRecord {
  RecordId id = 0;
  Surrogate surrogate;
  std::shared_ptr<const PreparedGraph> graph;
};

// Read-only view identify runs against.
struct SearchIndex {
  std::shared_ptr<const ProjectionModel> model;
  std::vector<IndexedRecord> records;  // sorted by id
};

// Extracted query: what identify computes before the search.
struct PreparedQuery {
  KeyPointGraph graph;
  FeatureVector features;
  std::shared_ptr<const PreparedGraph> prepared;
};

PreparedQuery prepare_query(const DendriteImage& image, const ExtractOptions& options = {});

IdentifyResult identify(const DendriteImage& image, const SearchIndex& index, const IdentifyOptions& options = {});

// Two-step search for an already-extracted query. `started` is the pipeline
// start used for `elapsed`.
IdentifyResult identify_prepared(const PreparedQuery& query, const DendriteImage* image, const SearchIndex& index,
                                 const IdentifyOptions& options,
                                 std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now());

// Deep-matches every record; the reference the two-step search is checked against.
IdentifyResult identify_exhaustive(const PreparedQuery& query, const SearchIndex& index,
                                   const IdentifyOptions& options = {});

}  // namespace dendrite
