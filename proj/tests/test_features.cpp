#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "dendrite/error.hpp"
#include "dendrite/features.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dendrite;
using namespace dendrite::oracles;

namespace {

const std::vector<FeatureVector>& corpus_vectors() {
  static std::vector<FeatureVector> out;
  if (out.empty()) {
    for (const auto& e : fixtures::corpus(1, 200)) out.push_back(e.query.features);
  }
  return out;
}

KeyPointGraph two_node_graph() {
  KeyPointGraph g;
  g.nodes = {{0, 0.0, 0.0, KeyPointKind::root}, {1, 10.0, 0.0, KeyPointKind::endpoint}};
  g.edges = {{0, 1, 10.0, 0.0}};
  return g;
}

double norm(const FeatureVector& v) {
  double s = 0;
  for (double x : v.values) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST(Featurize, TwoNodeGraph) {
  const auto fv = featurize(two_node_graph());
  EXPECT_DOUBLE_EQ(fv.values[0] * kScalarScale[0], 2.0);
  EXPECT_DOUBLE_EQ(fv.values[1] * kScalarScale[1], 1.0);
  EXPECT_DOUBLE_EQ(fv.values[3] * kScalarScale[3], 10.0);  // mean arc
  EXPECT_DOUBLE_EQ(fv.values[7] * kScalarScale[7], 1.0);   // depth
  EXPECT_DOUBLE_EQ(fv.values[8] * kScalarScale[8], 1.0);   // max degree
  // Degree 1 clamps into the first degree bin.
  EXPECT_DOUBLE_EQ(fv.values[kDegreeHistOffset], 1.0);
  for (std::size_t i = kDegreeHistOffset + 1; i < kFeatureDim; ++i) EXPECT_EQ(fv.values[i], 0.0);
  EXPECT_DOUBLE_EQ(fv.values[kArcHistOffset + 3], 1.0);  // 10 px falls in [8, 11)
}

TEST(Featurize, AxialAngles) {
  // Reversing every chord leaves the vector unchanged.
  auto g = two_node_graph();
  g.nodes.push_back({2, -3.0, 4.0, KeyPointKind::endpoint});
  g.edges.push_back({0, 2, 5.0, std::atan2(4.0, -3.0)});
  auto flipped = g;
  for (auto& e : flipped.edges) e.chord_angle = wrap_angle(e.chord_angle + M_PI);
  EXPECT_EQ(featurize(g), featurize(flipped));
}

TEST(Featurize, DegenerateGraph) {
  KeyPointGraph g;
  g.nodes = {{0, 0, 0, KeyPointKind::root}};
  try {
    featurize(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_graph);
  }
}

TEST(Featurize, CorpusVectorsWellFormedAndDistinct) {
  const auto& vs = corpus_vectors();
  std::set<std::array<double, kFeatureDim>> distinct;
  for (const auto& e : fixtures::corpus(1, 200)) {
    const auto& fv = e.query.features;
    EXPECT_EQ(featurize(e.query.graph), fv);
    for (double x : fv.values) EXPECT_TRUE(std::isfinite(x));
    for (std::size_t off : {kArcHistOffset, kAngleHistOffset}) {
      double s = 0;
      for (std::size_t i = 0; i < 8; ++i) s += fv.values[off + i];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    double s = 0;
    for (std::size_t i = 0; i < 7; ++i) s += fv.values[kDegreeHistOffset + i];
    EXPECT_NEAR(s, 1.0, 1e-12);
    distinct.insert(fv.values);
  }
  EXPECT_EQ(distinct.size(), vs.size());
}

TEST(FitProjection, ReconstructionErrorEqualsTrailingEigenvalues) {
  const std::vector<FeatureVector> vs(corpus_vectors().begin(), corpus_vectors().begin() + 100);
  const auto model = fit_projection(vs);
  std::vector<double> mean;
  Matrix vectors;
  const auto evals = jacobi_eigen(covariance(vs, mean), vectors);
  double trailing = 0;
  for (std::size_t i = kSurrogateDim; i < evals.size(); ++i) trailing += evals[i];

  double residual = 0;
  for (const auto& v : vs) {
    const auto s = project(v, model);
    for (std::size_t j = 0; j < kFeatureDim; ++j) {
      const double recon = model.mean(j) + model.components(j, 0) * s.u + model.components(j, 1) * s.v;
      residual += (v.values[j] - recon) * (v.values[j] - recon);
    }
  }
  residual /= static_cast<double>(vs.size() - 1);
  EXPECT_NEAR(residual, trailing, 1e-8);
  for (std::size_t i = 0; i < kFeatureDim; ++i) {
    EXPECT_NEAR(model.eigenvalues(i), evals[i], 1e-12);
    EXPECT_NEAR(model.mean(i), mean[i], 1e-14);
  }
  // Same leading subspace as the oracle.
  for (std::size_t c = 0; c < kSurrogateDim; ++c) {
    double dot = 0;
    for (std::size_t j = 0; j < kFeatureDim; ++j) dot += model.components(j, c) * vectors[j][c];
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-6);
  }
}

TEST(FitProjection, OrthonormalAndSignFixed) {
  const auto model = fit_projection(corpus_vectors());
  const Eigen::MatrixXd gram = model.components.transpose() * model.components;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    model.components.col(c).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(model.components(arg, c), 0.0);
  }
  EXPECT_EQ(model.trained_on, corpus_vectors().size());
  EXPECT_EQ(model.version, 1u);
}

TEST(FitProjection, LineInFeatureSpace) {
  // Samples along `dir`, plus a much smaller offset along `ortho` that is
  // uncorrelated with the position on the line (a pure line has rank 1).
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 1);
  Eigen::VectorXd dir(kFeatureDim), ortho(kFeatureDim), base(kFeatureDim);
  for (std::size_t i = 0; i < kFeatureDim; ++i) {
    dir(i) = g(rng);
    ortho(i) = g(rng);
    base(i) = g(rng);
  }
  dir.normalize();
  ortho -= ortho.dot(dir) * dir;
  ortho.normalize();
  const double t[] = {-2, -1, 0, 1, 2};
  const double w[] = {1, -2, 0, 2, -1};  // sum t*w = 0, sum w = 0
  std::vector<FeatureVector> line, pure;
  for (int i = 0; i < 5; ++i) {
    FeatureVector fv, p;
    for (std::size_t j = 0; j < kFeatureDim; ++j) {
      fv.values[j] = base(j) + t[i] * dir(j) + 1e-3 * w[i] * ortho(j);
      p.values[j] = base(j) + t[i] * dir(j);
    }
    line.push_back(fv);
    pure.push_back(p);
  }
  const auto model = fit_projection(line);
  const double cosine = std::abs(model.components.col(0).dot(dir));
  EXPECT_LT(std::acos(std::min(1.0, cosine)), 1e-6);
  try {
    fit_projection(pure);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_covariance);
    EXPECT_NE(std::string(e.what()).find("rank 1"), std::string::npos) << e.what();
  }
}

TEST(FitProjection, RefitIsDeterministicExceptVersion) {
  const auto a = fit_projection(corpus_vectors(), 0);
  const auto b = fit_projection(corpus_vectors(), a.version);
  EXPECT_EQ(b.version, a.version + 1);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.components, b.components);
  EXPECT_EQ(a.eigenvalues, b.eigenvalues);
}

TEST(FitProjection, InsufficientSamples) {
  try {
    fit_projection(std::vector<FeatureVector>(1, corpus_vectors()[0]));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_samples);
  }
}

TEST(Project, CenteringAndOrthonormality) {
  const auto& vs = corpus_vectors();
  const auto model = fit_projection(vs);
  FeatureVector mean;
  for (std::size_t j = 0; j < kFeatureDim; ++j) mean.values[j] = model.mean(j);
  const auto at_mean = project(mean, model);
  EXPECT_NEAR(at_mean.u, 0.0, 1e-15);
  EXPECT_NEAR(at_mean.v, 0.0, 1e-15);
  EXPECT_EQ(at_mean.model_version, model.version);

  double su = 0, sv = 0;
  for (const auto& v : vs) {
    const auto s = project(v, model);
    su += s.u;
    sv += s.v;
  }
  EXPECT_NEAR(su / vs.size(), 0.0, 1e-8);
  EXPECT_NEAR(sv / vs.size(), 0.0, 1e-8);

  FeatureVector step = mean;
  for (std::size_t j = 0; j < kFeatureDim; ++j) step.values[j] += model.components(j, 0);
  const auto s = project(step, model);
  EXPECT_NEAR(s.u, 1.0, 1e-8);
  EXPECT_NEAR(s.v, 0.0, 1e-8);
}

TEST(Project, NonInjectiveAndNonExpansive) {
  const auto& vs = corpus_vectors();
  const auto model = fit_projection(vs);
  // A direction orthogonal to both components.
  Eigen::VectorXd null = Eigen::VectorXd::Ones(kFeatureDim);
  for (Eigen::Index c = 0; c < 2; ++c) null -= null.dot(model.components.col(c)) * model.components.col(c);
  null *= 0.01 / null.norm();
  FeatureVector other = vs[0];
  for (std::size_t j = 0; j < kFeatureDim; ++j) other.values[j] += null(j);
  EXPECT_FALSE(other == vs[0]);
  const auto a = project(vs[0], model), b = project(other, model);
  EXPECT_NEAR(a.u, b.u, 1e-15);
  EXPECT_NEAR(a.v, b.v, 1e-15);

  for (std::size_t i = 0; i + 1 < vs.size(); i += 7) {
    FeatureVector diff;
    for (std::size_t j = 0; j < kFeatureDim; ++j) diff.values[j] = vs[i].values[j] - vs[i + 1].values[j];
    EXPECT_LE(surrogate_distance(project(vs[i], model), project(vs[i + 1], model)), norm(diff) + 1e-15);
  }
}

TEST(Project, VersionAndDimensionDiscipline) {
  const auto model = fit_projection(corpus_vectors());
  auto other = fit_projection(corpus_vectors(), model.version);
  const auto a = project(corpus_vectors()[0], model), b = project(corpus_vectors()[1], other);
  try {
    surrogate_distance(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::model_version_mismatch);
  }
  ProjectionModel unversioned = model;
  unversioned.version = 0;
  try {
    project(corpus_vectors()[0], unversioned);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::model_version_missing);
  }
  const std::vector<double> short_vec(kFeatureDim - 1, 0.0);
  try {
    project(std::span<const double>(short_vec), model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}

TEST(ModelJson, RoundTripIsExact) {
  const auto model = fit_projection(corpus_vectors());
  const std::string text = to_json(model).dump();
  const auto back = model_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back.version, model.version);
  EXPECT_EQ(back.trained_on, model.trained_on);
  EXPECT_EQ(back.mean, model.mean);
  EXPECT_EQ(back.components, model.components);
  const auto doc = nlohmann::ordered_json::parse(text);
  auto it = doc.begin();
  EXPECT_EQ(it.key(), "version");
  EXPECT_EQ((++it).key(), "trained_on");
  EXPECT_EQ((++it).key(), "mean");
  EXPECT_EQ((++it).key(), "components");
}

TEST(FeatureVectorJson, RoundTrip) {
  const auto& v = corpus_vectors()[3];
  EXPECT_EQ(feature_vector_from_json(nlohmann::json::parse(to_json(v).dump())), v);
  try {
    feature_vector_from_json(nlohmann::json::array({1.0, 2.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
}
