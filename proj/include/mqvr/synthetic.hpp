#pragma once

// Seeded corpus generator with controlled caption quality.
//
// Videos sit around cluster centroids on the unit sphere. Each caption is either
// informative (its video plus noise) or generic (its cluster centroid plus noise);
// a generic caption fits every video of the cluster about equally well.
//
// Noise vectors have i.i.d. N(0, σ²/m) coordinates, so σ is roughly the noise norm
// and settings carry over between embedding dims.

#include <cstdint>
#include <optional>
#include <utility>

#include <nlohmann/json.hpp>

#include "mqvr/embedding_store.hpp"

namespace mqvr {

/// Distribution of one corpus.
struct SyntheticParams {
  std::size_t n_videos = 200;
  std::size_t captions_per_video = 10;
  /// When set, each video draws its caption count uniformly from
  /// [captions_per_video, captions_per_video_max].
  std::optional<std::size_t> captions_per_video_max;
  std::size_t n_clusters = 20;
  double p_generic = 0.4;
  double sigma_video = 0.3;
  double sigma_informative = 0.4;
  double sigma_generic = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
};

struct SyntheticConfig {
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  SyntheticParams params;
  /// Extra videos drawn from the same clusters, returned as a held-out test corpus.
  std::optional<std::size_t> holdout_videos;
  /// Parameter block of an independent transfer corpus (fresh centroids, same dim).
  std::optional<SyntheticParams> domain_shift;

  void validate() const;
  nlohmann::json to_json() const;
  /// Required: dim, n_videos, captions_per_video, n_clusters. Throws ConfigError naming
  /// the missing or invalid field.
  static SyntheticConfig from_json(const nlohmann::json& j);
};

/// Generates the corpus described by config.params (holdout and domain_shift ignored).
Corpus generate(const SyntheticConfig& config);

/// Train corpus of n_videos plus a test corpus of holdout_videos sharing the centroids.
std::pair<Corpus, Corpus> generate_split(const SyntheticConfig& config);

/// Train corpus from config.params and a transfer corpus from config.domain_shift,
/// drawn from independent substreams.
std::pair<Corpus, Corpus> generate_pair(const SyntheticConfig& config);

}  // namespace mqvr
