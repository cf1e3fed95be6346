#include "mqvr/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "mqvr/errors.hpp"
#include "mqvr/rng.hpp"

namespace mqvr {

namespace {

constexpr int kMaxResample = 64;

/// normalize(base + σ·N(0, 1/m)), resampling when the sum collapses to zero.
Vector perturb_to_sphere(std::span<const double> base, double sigma, Rng& rng) {
  const std::size_t m = base.size();
  Vector out(base.begin(), base.end());
  if (sigma == 0.0) {
    // Inputs are already unit vectors; copying keeps exact equality for σ = 0.
    return out;
  }
  std::normal_distribution<double> noise(0.0, sigma / std::sqrt(static_cast<double>(m)));
  for (int attempt = 0; attempt < kMaxResample; ++attempt) {
    double sq = 0.0;
    for (std::size_t d = 0; d < m; ++d) {
      out[d] = base[d] + noise(rng);
      sq += out[d] * out[d];
    }
    if (sq > 1e-24) {
      const double inv = 1.0 / std::sqrt(sq);
      for (double& x : out) x *= inv;
      return out;
    }
  }
  throw InvariantError("synthetic: perturbed vector collapsed to zero repeatedly");
}

Vector random_unit(std::size_t m, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (int attempt = 0; attempt < kMaxResample; ++attempt) {
    Vector v(m);
    double sq = 0.0;
    for (double& x : v) {
      x = g(rng);
      sq += x * x;
    }
    if (sq > 1e-24) {
      const double inv = 1.0 / std::sqrt(sq);
      for (double& x : v) x *= inv;
      return v;
    }
  }
  throw InvariantError("synthetic: could not draw a nonzero centroid");
}

std::string make_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", prefix, i);
  return buf;
}

Corpus draw_world(const SyntheticParams& p, std::size_t dim, std::uint64_t seed,
                  std::uint64_t world, std::size_t n_total, char id_prefix) {
  std::vector<Vector> centroids;
  Rng crng = substream(seed, {stream::kSynthCentroid, world});
  for (std::size_t c = 0; c < p.n_clusters; ++c) centroids.push_back(random_unit(dim, crng));

  Corpus corpus;
  corpus.seed = seed;
  corpus.quality.emplace();
  std::vector<float> video_data;
  video_data.reserve(n_total * dim);
  for (std::size_t i = 0; i < n_total; ++i) {
    const Vector& centroid = centroids[i % p.n_clusters];
    Rng vrng = substream(seed, {stream::kSynthVideo, world, i});
    const Vector video = perturb_to_sphere(centroid, p.sigma_video, vrng);
    for (double x : video) video_data.push_back(static_cast<float>(x));

    Rng qrng = substream(seed, {stream::kSynthCaption, world, i});
    std::size_t k = p.captions_per_video;
    if (p.captions_per_video_max) {
      std::uniform_int_distribution<std::size_t> count(p.captions_per_video,
                                                       *p.captions_per_video_max);
      k = count(qrng);
    }
    std::bernoulli_distribution is_generic(p.p_generic);
    std::vector<float> caption_data;
    caption_data.reserve(k * dim);
    std::vector<CaptionQuality> labels;
    for (std::size_t j = 0; j < k; ++j) {
      const bool generic = is_generic(qrng);
      const Vector caption = generic ? perturb_to_sphere(centroid, p.sigma_generic, qrng)
                                     : perturb_to_sphere(video, p.sigma_informative, qrng);
      for (double x : caption) caption_data.push_back(static_cast<float>(x));
      labels.push_back(generic ? CaptionQuality::generic : CaptionQuality::informative);
    }
    corpus.video_ids.push_back(make_id(id_prefix, i));
    corpus.captions.emplace_back(k, dim, std::move(caption_data));
    corpus.quality->push_back(std::move(labels));
  }
  corpus.videos = EmbeddingMatrix(n_total, dim, std::move(video_data));
  return corpus;
}

template <class T>
T required(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) {
    throw ConfigError(std::string("synthetic config: missing required field '") + name + "'");
  }
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("synthetic config: field '") + name + "' has the wrong type");
  }
}

template <class T>
T optional_field(const nlohmann::json& j, const char* name, T fallback) {
  if (!j.contains(name)) return fallback;
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("synthetic config: field '") + name + "' has the wrong type");
  }
}

SyntheticParams params_from_json(const nlohmann::json& j) {
  SyntheticParams p;
  p.n_videos = required<std::size_t>(j, "n_videos");
  p.captions_per_video = required<std::size_t>(j, "captions_per_video");
  p.n_clusters = required<std::size_t>(j, "n_clusters");
  if (j.contains("captions_per_video_max")) {
    p.captions_per_video_max = optional_field<std::size_t>(j, "captions_per_video_max", 0);
  }
  p.p_generic = optional_field(j, "p_generic", p.p_generic);
  p.sigma_video = optional_field(j, "sigma_video", p.sigma_video);
  p.sigma_informative = optional_field(j, "sigma_informative", p.sigma_informative);
  p.sigma_generic = optional_field(j, "sigma_generic", p.sigma_generic);
  return p;
}

void tag(Corpus& c, const SyntheticConfig& config, const char* role) {
  c.provenance = {{"generator", "mqvr-synthetic"}, {"role", role}, {"config", config.to_json()}};
}

}  // namespace

void SyntheticParams::validate() const {
  if (n_videos < 1) throw ConfigError("synthetic: n_videos must be >= 1");
  if (captions_per_video < 1) throw ConfigError("synthetic: captions_per_video must be >= 1");
  if (captions_per_video_max && *captions_per_video_max < captions_per_video) {
    throw ConfigError("synthetic: captions_per_video_max must be >= captions_per_video");
  }
  if (n_clusters < 1 || n_clusters > n_videos) {
    throw ConfigError("synthetic: n_clusters must lie in [1, n_videos]");
  }
  if (!(p_generic >= 0.0 && p_generic <= 1.0)) {
    throw ConfigError("synthetic: p_generic must lie in [0, 1]");
  }
  if (!(sigma_video >= 0.0) || !(sigma_informative >= 0.0) || !(sigma_generic >= 0.0)) {
    throw ConfigError("synthetic: sigma values must be >= 0");
  }
}

nlohmann::json SyntheticParams::to_json() const {
  nlohmann::json j{{"n_videos", n_videos},
                   {"captions_per_video", captions_per_video},
                   {"n_clusters", n_clusters},
                   {"p_generic", p_generic},
                   {"sigma_video", sigma_video},
                   {"sigma_informative", sigma_informative},
                   {"sigma_generic", sigma_generic}};
  if (captions_per_video_max) j["captions_per_video_max"] = *captions_per_video_max;
  return j;
}

void SyntheticConfig::validate() const {
  if (dim < 1) throw ConfigError("synthetic: dim must be >= 1");
  params.validate();
  if (holdout_videos && *holdout_videos < 1) {
    throw ConfigError("synthetic: holdout_videos must be >= 1");
  }
  if (domain_shift) domain_shift->validate();
}

nlohmann::json SyntheticConfig::to_json() const {
  nlohmann::json j = params.to_json();
  j["dim"] = dim;
  j["seed"] = seed;
  if (holdout_videos) j["holdout_videos"] = *holdout_videos;
  if (domain_shift) j["domain_shift"] = domain_shift->to_json();
  return j;
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "dim",          "seed",          "n_videos",          "captions_per_video",
      "captions_per_video_max", "n_clusters", "p_generic",  "sigma_video",
      "sigma_informative", "sigma_generic", "holdout_videos", "domain_shift"};
  if (!j.is_object()) throw ConfigError("synthetic config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("synthetic config: unknown field '" + key + "'");
  }
  SyntheticConfig c;
  c.dim = required<std::size_t>(j, "dim");
  c.seed = optional_field<std::uint64_t>(j, "seed", 0);
  c.params = params_from_json(j);
  if (j.contains("holdout_videos")) c.holdout_videos = required<std::size_t>(j, "holdout_videos");
  if (j.contains("domain_shift")) {
    const auto& shift = j.at("domain_shift");
    if (!shift.is_object()) throw ConfigError("synthetic config: 'domain_shift' must be an object");
    // Unspecified shift fields inherit from the base block.
    nlohmann::json merged = c.params.to_json();
    for (const auto& [key, value] : shift.items()) merged[key] = value;
    c.domain_shift = params_from_json(merged);
  }
  c.validate();
  return c;
}

Corpus generate(const SyntheticConfig& config) {
  config.validate();
  Corpus c = draw_world(config.params, config.dim, config.seed, 0, config.params.n_videos, 'v');
  tag(c, config, "train");
  return c;
}

std::pair<Corpus, Corpus> generate_split(const SyntheticConfig& config) {
  config.validate();
  if (!config.holdout_videos) throw ConfigError("synthetic: generate_split needs holdout_videos");
  const std::size_t n_train = config.params.n_videos;
  const std::size_t total = n_train + *config.holdout_videos;
  const Corpus world = draw_world(config.params, config.dim, config.seed, 0, total, 'v');
  std::vector<std::size_t> train_idx(n_train), test_idx(*config.holdout_videos);
  std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
  std::iota(test_idx.begin(), test_idx.end(), n_train);
  std::pair<Corpus, Corpus> out{subset(world, train_idx), subset(world, test_idx)};
  tag(out.first, config, "train");
  tag(out.second, config, "test");
  return out;
}

std::pair<Corpus, Corpus> generate_pair(const SyntheticConfig& config) {
  config.validate();
  if (!config.domain_shift) throw ConfigError("synthetic: generate_pair needs a domain_shift block");
  std::pair<Corpus, Corpus> out{
      draw_world(config.params, config.dim, config.seed, 0, config.params.n_videos, 'v'),
      draw_world(*config.domain_shift, config.dim, config.seed, stream::kSynthTransfer,
                 config.domain_shift->n_videos, 't')};
  tag(out.first, config, "train");
  tag(out.second, config, "transfer");
  return out;
}

}  // namespace mqvr
