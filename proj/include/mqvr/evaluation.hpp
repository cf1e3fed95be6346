#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mqvr/aggregation.hpp"
#include "mqvr/embedding_store.hpp"
#include "mqvr/method.hpp"
#include "mqvr/weight_models.hpp"

namespace mqvr {

/// Schema version of every CSV this module writes.
inline constexpr int kCsvSchemaVersion = 1;

struct EvalConfig {
  Method method = Method::SA;
  std::size_t n_queries = 1;
  std::size_t repeats = 100;
  std::uint64_t seed = 0;
  std::vector<std::size_t> recall_ks{1, 5, 10};
  ScoreOptions score;

  void validate() const;
  nlohmann::json to_json() const;
};

struct RankMetrics {
  std::vector<double> recall;  // aligned with the recall_ks used
  double median_rank = 0.0;
  double mean_rank = 0.0;

  bool operator==(const RankMetrics&) const = default;
};

/// R@K = fraction of ranks ≤ K; median averages the two middle values for even counts.
RankMetrics metrics_from_ranks(std::span<const std::size_t> ranks,
                               std::span<const std::size_t> recall_ks);

struct EvalReport {
  EvalConfig config;
  std::vector<RankMetrics> per_repeat;
  std::vector<double> mean_recall;
  double mean_median_rank = 0.0;
  double mean_mean_rank = 0.0;
  /// Bundles that had to sample with replacement (video with fewer captions than n_queries).
  std::size_t replacement_draws = 0;

  bool operator==(const EvalReport& other) const;
  nlohmann::json to_json() const;
  /// Header plus one summary row: method,n_queries,R@1,...,MdR,MnR,AUC (AUC left empty).
  std::string summary_csv() const;
};

/// Runs the repeated N-query protocol. Repeats execute in parallel (OpenMP); each repeat
/// draws its bundles from substreams keyed by (seed, repeat, video id), and means are
/// reduced in repeat order, so the report is bit-identical to serial::evaluate.
EvalReport evaluate(const Corpus& corpus, const EvalConfig& config,
                    const ModelParams* params = nullptr);

/// Normalized trapezoidal area under a curve sampled at unit-spaced query counts.
double auc(std::span<const double> curve);

struct AucReport {
  Method method = Method::SA;
  std::size_t n_max = 0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> recall_ks;
  std::vector<EvalReport> points;  // n_queries = 1..n_max
  /// curve[ki][n-1] = mean R@K_ki at n queries.
  std::vector<Vector> curves;
  /// (K, n, AUC^{R@K}_n) for n ∈ {3, 5, 10, n_max} ∩ [2, n_max].
  struct Entry {
    std::size_t k;
    std::size_t n;
    double value;
  };
  std::vector<Entry> auc;

  nlohmann::json to_json() const;
  /// One row per query count; AUC column is AUC^{R@1}_n over 1..n (empty at n=1).
  std::string curve_csv() const;
};

AucReport sweep(const Corpus& corpus, Method method, const ModelParams* params,
                std::size_t n_max, std::size_t repeats, std::uint64_t seed,
                std::vector<std::size_t> recall_ks = {1, 5, 10}, ScoreOptions options = {});

struct WeightTable {
  Method method = Method::TSWF;
  std::size_t n_queries = 0;
  std::size_t instances = 0;
  /// Mean weight at quality rank r+1 (1 = query whose single-query rank of the target is best).
  Vector mean_weight;
  /// Mean weight given to captions labeled generic / informative (NaN if none seen).
  double mean_weight_generic = 0.0;
  double mean_weight_informative = 0.0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

WeightTable inspect_weights(const Corpus& corpus, Method method, const ModelParams* params,
                            std::size_t n_queries, std::size_t repeats, std::uint64_t seed,
                            ScoreOptions options = {});

namespace serial {

/// Single-threaded reference for mqvr::evaluate.
EvalReport evaluate(const Corpus& corpus, const EvalConfig& config,
                    const ModelParams* params = nullptr);

}  // namespace serial

/// Stable 64-bit FNV-1a of a video id (keys evaluation substreams).
std::uint64_t id_hash(std::string_view id);

}  // namespace mqvr
