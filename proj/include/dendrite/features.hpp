#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dendrite/graph.hpp"

namespace dendrite {

inline constexpr std::size_t kFeatureDim = 32;
inline constexpr std::size_t kSurrogateDim = 2;

// Layout:
//   [0..8]   node count, edge count, endpoint/junction ratio, arc length mean
//            and std, chord angle mean and std, depth from root, max degree;
//            each divided by the constant in kScalarScale
//   [9..16]  arc length histogram (kArcBinEdges), sums to 1
//   [17..24] chord angle histogram, 8 equal bins over [-pi, pi), sums to 1
// Chord angles enter as axial orientations: angle mod pi, doubled onto [-pi, pi).
// Scalar constants are large so the histograms carry most of the variance.
//   [25..31] node degree histogram: <=2, 3, 4, 5, 6, 7, >=8, sums to 1
struct FeatureVector {
  std::array<double, kFeatureDim> values{};
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline constexpr std::array<double, 9> kScalarScale = {2048.0, 2048.0, 16.0, 64.0, 64.0, 16.0,
                                                       16.0, 256.0, 256.0};
inline constexpr std::array<double, 9> kArcBinEdges = {0.0, 4.0, 6.0, 8.0, 11.0, 15.0, 21.0, 30.0, 1e300};

inline constexpr std::size_t kArcHistOffset = 9;
inline constexpr std::size_t kAngleHistOffset = 17;
inline constexpr std::size_t kDegreeHistOffset = 25;

FeatureVector featurize(const KeyPointGraph& graph);

struct ProjectionModel {
  Eigen::VectorXd mean;        // D
  Eigen::MatrixXd components;  // D x d, orthonormal columns
  Eigen::VectorXd eigenvalues; // all D covariance eigenvalues, descending
  std::size_t trained_on = 0;
  std::uint64_t version = 0;
};

struct Surrogate {
  double u = 0.0;
  double v = 0.0;
  std::uint64_t model_version = 0;
};

// Top-d principal components of the sample covariance (divisor n - 1),
// sign-fixed so each column's largest-magnitude entry is positive.
// `previous_version` + 1 becomes the new model's version.
ProjectionModel fit_projection(std::span<const FeatureVector> vectors, std::uint64_t previous_version = 0);

Surrogate project(const FeatureVector& vector, const ProjectionModel& model);
Surrogate project(std::span<const double> vector, const ProjectionModel& model);

double surrogate_distance(const Surrogate& a, const Surrogate& b);

nlohmann::ordered_json to_json(const ProjectionModel& model);
ProjectionModel model_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const FeatureVector& fv);
FeatureVector feature_vector_from_json(const nlohmann::json& doc);

}  // namespace dendrite
