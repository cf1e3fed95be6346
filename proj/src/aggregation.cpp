#include "mqvr/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mqvr/errors.hpp"
#include "mqvr/similarity.hpp"

namespace mqvr {

void check_simplex(std::span<const double> weights) {
  if (weights.empty()) throw InvariantError("weight vector is empty");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvariantError("weight vector has a negative or NaN entry");
    total += w;
  }
  if (std::abs(total - 1.0) > kSimplexTolerance) {
    throw InvariantError("weights sum to " + std::to_string(total) + ", not 1");
  }
}

void check_bundle(const QueryBundle& bundle) {
  if (bundle.rows() == 0) throw ShapeError("query bundle is empty");
  for (std::size_t i = 0; i < bundle.rows(); ++i) {
    if (norm(bundle.row(i)) == 0.0) {
      throw InvariantError("query " + std::to_string(i) + " of the bundle is a zero vector");
    }
  }
}

Vector score_sa(const QueryBundle& bundle, const Matrix& videos) {
  return Scorer(Method::SA, videos).score(bundle);
}

Vector score_ra(const QueryBundle& bundle, const Matrix& videos) {
  return Scorer(Method::RA, videos).score(bundle);
}

Vector mean_feature(const QueryBundle& features) {
  if (features.rows() == 0) throw ShapeError("mean_feature: empty bundle");
  return weighted_feature(features,
                          Vector(features.rows(), 1.0 / static_cast<double>(features.rows())));
}

Vector weighted_feature(const QueryBundle& features, std::span<const double> weights) {
  if (weights.size() != features.rows()) {
    throw ShapeError("weighted_feature: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(features.rows()) + " queries");
  }
  check_simplex(weights);
  Vector out(features.cols(), 0.0);
  for (std::size_t i = 0; i < features.rows(); ++i) axpy(weights[i], features.row(i), out);
  return out;
}

WeightVector tswf_weights(const QueryBundle& features, double temperature) {
  return bundle_weights(Method::TSWF, features, nullptr, temperature);
}

WeightVector lgwf_weights(const QueryBundle& features, const ModelParams& params) {
  return bundle_weights(Method::LGWF, features, &params, 1.0);
}

WeightVector cgwf_weights(const QueryBundle& features, const ModelParams& params) {
  return bundle_weights(Method::CGWF, features, &params, 1.0);
}

Scorer::Scorer(Method method, const Matrix& videos, const ModelParams* params,
               ScoreOptions options)
    : method_(method), params_(params), options_(options) {
  if (needs_weight_network(method) && params == nullptr) {
    throw ConfigError(std::string(to_string(method)) + " requires trained model params");
  }
  if (params) {
    params->validate();
    if (params->dims.embed != videos.cols()) {
      throw ShapeError("model dim " + std::to_string(params->dims.embed) +
                       " != embedding dim " + std::to_string(videos.cols()));
    }
    if (needs_weight_network(method) &&
        (!params->tensors.mlp || (method == Method::CGWF && !params->tensors.attention))) {
      throw ConfigError("model params of kind " + std::string(to_string(params->kind)) +
                        " cannot drive " + std::string(to_string(method)));
    }
    video_features_ = normalize_rows(project(params->tensors.video_projection, videos));
  } else {
    video_features_ = normalize_rows(videos);
  }
}

Matrix Scorer::query_features(const QueryBundle& bundle) const {
  if (bundle.cols() != video_features_.cols()) {
    throw ShapeError("bundle dim " + std::to_string(bundle.cols()) + " != video dim " +
                     std::to_string(video_features_.cols()));
  }
  check_bundle(bundle);
  return params_ ? project(params_->tensors.query_projection, bundle) : bundle;
}

Vector Scorer::single_scores(std::span<const double> feature) const {
  const double n = norm(feature);
  if (n == 0.0) throw InvariantError("single_scores: zero query feature");
  Vector out(video_features_.rows());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = std::clamp(dot(feature, video_features_.row(j)) / n, -1.0, 1.0);
  }
  return out;
}

WeightVector Scorer::weights(const QueryBundle& bundle) const {
  return bundle_weights(method_, query_features(bundle), params_, options_.tswf_temperature);
}

Vector Scorer::score(const QueryBundle& bundle) const {
  return score_features(query_features(bundle));
}

Vector Scorer::score_features(const Matrix& features) const {
  const std::size_t k = features.rows();
  const std::size_t n = video_features_.rows();
  const double inv_k = 1.0 / static_cast<double>(k);
  Vector scores(n, 0.0);
  switch (method_) {
    case Method::SA:
      for (std::size_t i = 0; i < k; ++i) axpy(inv_k, single_scores(features.row(i)), scores);
      break;
    case Method::RA:
      for (std::size_t i = 0; i < k; ++i) {
        const RankVector ranks = full_ranking(single_scores(features.row(i)));
        for (std::size_t j = 0; j < n; ++j) scores[j] -= inv_k * static_cast<double>(ranks[j]);
      }
      break;
    case Method::MF:
    case Method::TSWF:
    case Method::LGWF:
    case Method::CGWF: {
      const WeightVector w =
          bundle_weights(method_, features, params_, options_.tswf_temperature);
      scores = single_scores(weighted_feature(features, w));
      break;
    }
  }
  return scores;
}

Vector score_method(Method method, const QueryBundle& bundle, const Matrix& videos,
                    const ModelParams* params, ScoreOptions options) {
  return Scorer(method, videos, params, options).score(bundle);
}

}  // namespace mqvr
