#include "dendrite/corpus.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dendrite/error.hpp"
#include "random.hpp"

namespace dendrite {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

GrowthParams corpus_params(const GrowthParams& base, std::uint64_t seed, std::size_t index) {
  GrowthParams p = base;
  p.rng_seed = mix(mix(seed) ^ static_cast<std::uint64_t>(index));
  return p;
}

Perturbation query_perturbation(const PerturbRange& range, std::uint64_t seed, std::size_t index) {
  detail::Rng rng(mix(mix(seed ^ 0x5bd1e995ULL) + static_cast<std::uint64_t>(index)));
  const int span = 2 * range.max_shift + 1;
  Perturbation p;
  p.noise_rate = range.noise_rate;
  p.shift.first = static_cast<int>(rng.bits() % static_cast<std::uint64_t>(span)) - range.max_shift;
  p.shift.second = static_cast<int>(rng.bits() % static_cast<std::uint64_t>(span)) - range.max_shift;
  p.rotation_deg = range.max_rotation_deg * (2.0 * rng.uniform() - 1.0);
  p.rng_seed = rng.bits();
  return p;
}

std::vector<CorpusEntry> build_corpus(const GrowthParams& base, std::uint64_t seed, std::size_t count,
                                      std::ostream* progress) {
  std::vector<CorpusEntry> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    CorpusEntry e;
    e.params = corpus_params(base, seed, i);
    e.image = generate(e.params);
    e.query = prepare_query(e.image);
    out.push_back(std::move(e));
    if (progress && (i + 1) % 100 == 0) *progress << "." << std::flush;
  }
  if (progress && count >= 100) *progress << "\n";
  return out;
}

SearchIndex index_corpus(const std::vector<CorpusEntry>& corpus) {
  std::vector<FeatureVector> vectors;
  vectors.reserve(corpus.size());
  for (const auto& e : corpus) vectors.push_back(e.query.features);
  SearchIndex index;
  index.model = std::make_shared<const ProjectionModel>(fit_projection(vectors));
  index.records.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    index.records.push_back({static_cast<RecordId>(i + 1), project(vectors[i], *index.model), corpus[i].query.prepared});
  }
  return index;
}

double percentile(std::vector<double> sample, double q) {
  if (sample.empty()) return 0.0;
  std::sort(sample.begin(), sample.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sample.size())));
  return sample[std::clamp<std::size_t>(rank, 1, sample.size()) - 1];
}

BenchReport run_bench(const BenchOptions& options, std::ostream* progress) {
  if (options.records == 0 || options.queries == 0 || options.k == 0) {
    throw Error(ErrorCode::invalid_params, "records, queries and k must be positive");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = build_corpus(options.growth, options.seed, options.records, progress);
  const SearchIndex index = index_corpus(corpus);
  const double build = seconds_since(t0);
  BenchReport report = run_bench(options, corpus, index);
  report.build_seconds = build;
  report.total_seconds = seconds_since(t0);
  return report;
}

BenchReport run_bench(const BenchOptions& options, const std::vector<CorpusEntry>& corpus, const SearchIndex& index) {
  if (corpus.empty() || options.queries == 0 || options.k == 0) {
    throw Error(ErrorCode::invalid_params, "corpus, queries and k must be non-empty");
  }
  const auto t0 = std::chrono::steady_clock::now();
  BenchReport report;
  report.records = corpus.size();
  report.queries = options.queries;
  report.k = options.k;

  IdentifyOptions identify_options;
  identify_options.k = options.k;
  detail::Rng pick(mix(options.seed ^ 0xa5a5a5a5ULL));
  for (std::size_t q = 0; q < options.queries; ++q) {
    const std::size_t source = static_cast<std::size_t>(pick.bits() % corpus.size());
    const DendriteImage query = perturb(corpus[source].image, query_perturbation(options.perturb, options.seed, q));
    const IdentifyResult r = identify(query, index, identify_options);
    report.latencies.push_back(r.elapsed);
    if (r.best && r.best->candidate_id == source + 1) ++report.correct;
  }
  const auto& l = report.latencies;
  report.mean = std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
  report.median = percentile(l, 0.5);
  report.p95 = percentile(l, 0.95);
  report.max = *std::max_element(l.begin(), l.end());
  report.total_seconds = seconds_since(t0);
  return report;
}

void print_bench_report(const BenchReport& r, std::ostream& out) {
  char line[256];
  std::snprintf(line, sizeof(line), "%8s %8s %4s %10s %10s %10s %10s %9s %9s %9s\n", "records", "queries", "k",
                "mean_ms", "median_ms", "p95_ms", "max_ms", "top1", "build_s", "total_s");
  out << line;
  std::snprintf(line, sizeof(line), "%8zu %8zu %4zu %10.2f %10.2f %10.2f %10.2f %4zu/%-4zu %9.1f %9.1f\n", r.records,
                r.queries, r.k, r.mean * 1e3, r.median * 1e3, r.p95 * 1e3, r.max * 1e3, r.correct, r.queries,
                r.build_seconds, r.total_seconds);
  out << line;
}

}  // namespace dendrite
