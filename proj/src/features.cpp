#include "dendrite/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <string>

#include "dendrite/error.hpp"

namespace dendrite {

FeatureVector featurize(const KeyPointGraph& graph) {
  if (graph.nodes.size() < 2 || graph.edges.empty()) {
    throw Error(ErrorCode::degenerate_graph, "featurize needs at least 2 nodes");
  }
  FeatureVector fv;
  auto& out = fv.values;
  const auto deg = graph.degrees();
  const double n_nodes = static_cast<double>(graph.nodes.size());
  const double n_edges = static_cast<double>(graph.edges.size());

  double endpoints = 0;
  double junctions = 0;
  int max_degree = 0;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (deg[i] == 1) endpoints += 1;
    if (deg[i] >= 3) junctions += 1;
    max_degree = std::max(max_degree, deg[i]);
  }

  double arc_sum = 0;
  double arc_sq = 0;
  double ang_sum = 0;
  double ang_sq = 0;
  std::vector<double> angle(graph.edges.size());
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const auto& e = graph.edges[k];
    // Axial orientation: a half turn of the frame leaves it unchanged.
    const double axial = e.chord_angle < 0 ? e.chord_angle + std::numbers::pi : e.chord_angle;
    angle[k] = std::min(2.0 * axial - std::numbers::pi, std::nextafter(std::numbers::pi, 0.0));
  }
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const auto& e = graph.edges[k];
    arc_sum += e.arc_length;
    arc_sq += e.arc_length * e.arc_length;
    ang_sum += angle[k];
    ang_sq += angle[k] * angle[k];
  }
  const double arc_mean = arc_sum / n_edges;
  const double ang_mean = ang_sum / n_edges;
  const double arc_std = std::sqrt(std::max(0.0, arc_sq / n_edges - arc_mean * arc_mean));
  const double ang_std = std::sqrt(std::max(0.0, ang_sq / n_edges - ang_mean * ang_mean));

  // Hop depth from the root.
  std::vector<std::vector<int>> adj(graph.nodes.size());
  for (const auto& e : graph.edges) {
    adj[e.a].push_back(e.b);
    adj[e.b].push_back(e.a);
  }
  int depth = 0;
  const int root = std::max(0, graph.root());
  std::vector<int> level(graph.nodes.size(), -1);
  std::queue<int> q;
  q.push(root);
  level[root] = 0;
  while (!q.empty()) {
    const int cur = q.front();
    q.pop();
    depth = std::max(depth, level[cur]);
    for (int nxt : adj[cur]) {
      if (level[nxt] < 0) {
        level[nxt] = level[cur] + 1;
        q.push(nxt);
      }
    }
  }

  const std::array<double, 9> scalars = {n_nodes, n_edges, endpoints / std::max(1.0, junctions), arc_mean, arc_std,
                                         ang_mean, ang_std, static_cast<double>(depth),
                                         static_cast<double>(max_degree)};
  for (std::size_t i = 0; i < scalars.size(); ++i) out[i] = scalars[i] / kScalarScale[i];

  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const auto& e = graph.edges[k];
    std::size_t bin = 0;
    while (bin + 1 < 8 && e.arc_length >= kArcBinEdges[bin + 1]) ++bin;
    out[kArcHistOffset + bin] += 1.0 / n_edges;

    const double t = (angle[k] + std::numbers::pi) / (2.0 * std::numbers::pi);
    const auto abin = std::min<std::size_t>(7, static_cast<std::size_t>(std::max(0.0, t * 8.0)));
    out[kAngleHistOffset + abin] += 1.0 / n_edges;
  }
  for (int d : deg) {
    const auto dbin = static_cast<std::size_t>(std::clamp(d, 2, 8) - 2);
    out[kDegreeHistOffset + dbin] += 1.0 / n_nodes;
  }
  return fv;
}

ProjectionModel fit_projection(std::span<const FeatureVector> vectors, std::uint64_t previous_version) {
  if (vectors.size() < kSurrogateDim) {
    throw Error(ErrorCode::insufficient_samples,
                "need at least " + std::to_string(kSurrogateDim) + " vectors, got " + std::to_string(vectors.size()));
  }
  const auto n = static_cast<Eigen::Index>(vectors.size());
  const auto dim = static_cast<Eigen::Index>(kFeatureDim);
  Eigen::MatrixXd data(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) data(i, j) = vectors[i].values[j];
  }
  ProjectionModel model;
  model.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(std::max<Eigen::Index>(1, n - 1));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::degenerate_covariance, "eigendecomposition failed");
  }
  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd evals = solver.eigenvalues().reverse();
  const Eigen::MatrixXd evecs = solver.eigenvectors().rowwise().reverse();

  const double scale = std::max(1.0, evals(0));
  const double tol = 1e-12 * scale;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < evals.size(); ++i) rank += evals(i) > tol ? 1 : 0;
  if (rank < static_cast<Eigen::Index>(kSurrogateDim)) {
    throw Error(ErrorCode::degenerate_covariance,
                "covariance rank " + std::to_string(rank) + " is below " + std::to_string(kSurrogateDim));
  }

  model.components = evecs.leftCols(static_cast<Eigen::Index>(kSurrogateDim));
  for (Eigen::Index c = 0; c < model.components.cols(); ++c) {
    Eigen::Index arg = 0;
    model.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (model.components(arg, c) < 0) model.components.col(c) *= -1.0;
  }
  model.eigenvalues = evals;
  model.trained_on = vectors.size();
  model.version = previous_version + 1;
  return model;
}

Surrogate project(std::span<const double> vector, const ProjectionModel& model) {
  if (model.version == 0) throw Error(ErrorCode::model_version_missing, "projection model has no version");
  if (vector.size() != static_cast<std::size_t>(model.mean.size()) ||
      model.components.rows() != model.mean.size() || model.components.cols() != 2) {
    throw Error(ErrorCode::dimension_mismatch, "vector dimension " + std::to_string(vector.size()) +
                                                   " does not match model dimension " +
                                                   std::to_string(model.mean.size()));
  }
  double u = 0;
  double v = 0;
  for (Eigen::Index i = 0; i < model.mean.size(); ++i) {
    const double c = vector[i] - model.mean(i);
    u += model.components(i, 0) * c;
    v += model.components(i, 1) * c;
  }
  return {u, v, model.version};
}

Surrogate project(const FeatureVector& vector, const ProjectionModel& model) {
  return project(std::span<const double>(vector.values), model);
}

double surrogate_distance(const Surrogate& a, const Surrogate& b) {
  if (a.model_version != b.model_version) {
    throw Error(ErrorCode::model_version_mismatch, "surrogates from model versions " +
                                                       std::to_string(a.model_version) + " and " +
                                                       std::to_string(b.model_version));
  }
  return std::hypot(a.u - b.u, a.v - b.v);
}

nlohmann::ordered_json to_json(const ProjectionModel& model) {
  nlohmann::ordered_json doc;
  doc["version"] = model.version;
  doc["trained_on"] = model.trained_on;
  doc["mean"] = std::vector<double>(model.mean.data(), model.mean.data() + model.mean.size());
  auto comps = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < model.components.rows(); ++r) {
    comps.push_back(std::vector<double>{model.components(r, 0), model.components(r, 1)});
  }
  doc["components"] = std::move(comps);
  doc["eigenvalues"] = std::vector<double>(model.eigenvalues.data(), model.eigenvalues.data() + model.eigenvalues.size());
  return doc;
}

ProjectionModel model_from_json(const nlohmann::json& doc) {
  ProjectionModel model;
  try {
    model.version = doc.at("version").get<std::uint64_t>();
    model.trained_on = doc.at("trained_on").get<std::size_t>();
    const auto mean = doc.at("mean").get<std::vector<double>>();
    model.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    const auto& comps = doc.at("components");
    model.components.resize(static_cast<Eigen::Index>(comps.size()), 2);
    for (std::size_t r = 0; r < comps.size(); ++r) {
      const auto row = comps[r].get<std::vector<double>>();
      if (row.size() != 2) throw Error(ErrorCode::dimension_mismatch, "component rows must have 2 entries");
      model.components(static_cast<Eigen::Index>(r), 0) = row[0];
      model.components(static_cast<Eigen::Index>(r), 1) = row[1];
    }
    if (doc.contains("eigenvalues")) {
      const auto ev = doc.at("eigenvalues").get<std::vector<double>>();
      model.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_request, std::string("malformed model document: ") + e.what());
  }
  if (model.components.rows() != model.mean.size()) {
    throw Error(ErrorCode::dimension_mismatch, "model mean and components disagree on dimension");
  }
  return model;
}

nlohmann::json to_json(const FeatureVector& fv) { return std::vector<double>(fv.values.begin(), fv.values.end()); }

FeatureVector feature_vector_from_json(const nlohmann::json& doc) {
  const auto values = doc.get<std::vector<double>>();
  if (values.size() != kFeatureDim) {
    throw Error(ErrorCode::dimension_mismatch, "feature vector must have " + std::to_string(kFeatureDim) + " entries");
  }
  FeatureVector fv;
  std::copy(values.begin(), values.end(), fv.values.begin());
  return fv;
}

}  // namespace dendrite
