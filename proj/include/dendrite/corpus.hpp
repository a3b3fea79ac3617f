#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "dendrite/matcher.hpp"
#include "dendrite/pattern_sim.hpp"

namespace dendrite {

// Growth parameters of tag `index` in a corpus drawn with `seed`.
GrowthParams corpus_params(const GrowthParams& base, std::uint64_t seed, std::size_t index);

struct PerturbRange {
  double noise_rate = 0.01;
  int max_shift = 2;              // each axis, uniform in [-max_shift, max_shift]
  double max_rotation_deg = 2.0;  // uniform in [-max, max]
};

// Deterministic perturbation for query `index` of a run seeded with `seed`.
Perturbation query_perturbation(const PerturbRange& range, std::uint64_t seed, std::size_t index);

struct CorpusEntry {
  GrowthParams params;
  DendriteImage image;
  PreparedQuery query;
};

// Generates and extracts `count` tags. Progress dots go to `progress` if set.
std::vector<CorpusEntry> build_corpus(const GrowthParams& base, std::uint64_t seed, std::size_t count,
                                      std::ostream* progress = nullptr);

// Fits a model over the corpus and indexes entry i under id i + 1.
SearchIndex index_corpus(const std::vector<CorpusEntry>& corpus);

struct BenchOptions {
  std::size_t records = 3000;
  std::size_t queries = 100;
  std::size_t k = 25;
  std::uint64_t seed = 1;
  GrowthParams growth;
  PerturbRange perturb;
};

struct BenchReport {
  std::size_t records = 0;
  std::size_t queries = 0;
  std::size_t k = 0;
  std::vector<double> latencies;  // seconds, per query
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
  std::size_t correct = 0;  // queries whose best record is their source
  double build_seconds = 0.0;
  double total_seconds = 0.0;
};

// Nearest-rank percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> sample, double q);

// Builds a corpus index, then times identify on perturbed re-scans of
// randomly chosen records.
BenchReport run_bench(const BenchOptions& options, std::ostream* progress = nullptr);
// Query phase only, over an already indexed corpus (options.records is ignored).
BenchReport run_bench(const BenchOptions& options, const std::vector<CorpusEntry>& corpus, const SearchIndex& index);

// Fixed-width latency table.
void print_bench_report(const BenchReport& report, std::ostream& out);

}  // namespace dendrite
