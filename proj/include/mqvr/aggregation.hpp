#pragma once

// Multi-query scoring. A bundle is a k×m matrix whose rows are the query embeddings of
// one target; every function returns one score per video (higher ranks first).

#include <optional>
#include <span>

#include "mqvr/matrix.hpp"
#include "mqvr/method.hpp"
#include "mqvr/weight_models.hpp"

namespace mqvr {

using QueryBundle = Matrix;
using WeightVector = Vector;

/// Tolerance for the Σα = 1 check.
inline constexpr double kSimplexTolerance = 1e-9;

/// Throws InvariantError unless weights are non-negative and sum to 1 within kSimplexTolerance.
void check_simplex(std::span<const double> weights);

/// Throws ShapeError / InvariantError on k = 0, ragged dims or a zero query.
void check_bundle(const QueryBundle& bundle);

/// Mean over queries of cosine(q_i, v).
Vector score_sa(const QueryBundle& bundle, const Matrix& videos);

/// −(1/k) Σ_i rank of v under query i. Only the ordering is meaningful.
Vector score_ra(const QueryBundle& bundle, const Matrix& videos);

Vector mean_feature(const QueryBundle& features);
Vector weighted_feature(const QueryBundle& features, std::span<const double> weights);

/// softmax(I / temperature) with I_i = −Σ_{j≠i} cosine(f_i, f_j).
WeightVector tswf_weights(const QueryBundle& features, double temperature = 1.0);
/// softmax over MLP(f_i), each query scored independently.
WeightVector lgwf_weights(const QueryBundle& features, const ModelParams& params);
/// softmax over MLP(attention(F)_i).
WeightVector cgwf_weights(const QueryBundle& features, const ModelParams& params);

struct ScoreOptions {
  double tswf_temperature = 1.0;
};

/// Scores bundles against a fixed video set. Projected, unit-normalized video features
/// are computed once at construction; score() is const and thread-safe.
///
/// When params are given, queries go through the query projection and videos through
/// the video projection before any method-specific step (SA/RA included). LG-WF and
/// CG-WF require params; the other methods fall back to raw embeddings without them.
class Scorer {
 public:
  Scorer(Method method, const Matrix& videos, const ModelParams* params = nullptr,
         ScoreOptions options = {});

  Method method() const noexcept { return method_; }
  std::size_t video_count() const noexcept { return video_features_.rows(); }
  const Matrix& video_features() const noexcept { return video_features_; }

  /// Query features after projection (raw bundle if no params).
  Matrix query_features(const QueryBundle& bundle) const;
  Vector score(const QueryBundle& bundle) const;
  /// Bundle weights for this method (uniform for SA/RA/MF).
  WeightVector weights(const QueryBundle& bundle) const;
  /// Single-query cosine scores of one feature row against all videos.
  Vector single_scores(std::span<const double> feature) const;

 private:
  Vector score_features(const Matrix& features) const;

  Method method_;
  const ModelParams* params_;
  ScoreOptions options_;
  Matrix video_features_;  // projected, rows unit-normalized
};

/// One-shot convenience: Scorer(method, videos, params, options).score(bundle).
Vector score_method(Method method, const QueryBundle& bundle, const Matrix& videos,
                    const ModelParams* params = nullptr, ScoreOptions options = {});

}  // namespace mqvr
