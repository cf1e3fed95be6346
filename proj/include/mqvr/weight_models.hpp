#pragma once

// Trainable pieces: linear projection heads standing in for the text/video encoders,
// the per-query MLP scorer (LG-WF) and the single-head residual attention block (CG-WF),
// each with a forward pass and a hand-derived backward pass.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mqvr/matrix.hpp"
#include "mqvr/method.hpp"

namespace mqvr {

/// y = W x + b, with W stored out×in.
struct Linear {
  Matrix weight;
  Vector bias;
};

/// s = w2 · relu(W1ᵀ x + b1) + b2. W1 is m×h; b2 is a one-element vector.
struct MlpHead {
  Matrix w1;
  Vector b1;
  Vector w2;
  Vector b2;
};

/// Y = X + softmax((X Wq)(X Wk)ᵀ / √d_a) (X Wv) Wo. No positional encoding, no norm.
struct AttentionBlock {
  Matrix wq;  // m×d_a
  Matrix wk;  // m×d_a
  Matrix wv;  // m×d_a
  Matrix wo;  // d_a×m
};

/// Every trainable tensor. Also used, zero-filled, as the gradient container.
struct TensorSet {
  Linear query_projection;
  Linear video_projection;
  std::optional<MlpHead> mlp;
  std::optional<AttentionBlock> attention;

  /// Visits each tensor as (name, flat data) in a fixed order.
  void for_each(const std::function<void(const std::string&, std::span<double>)>& fn);
  void for_each(const std::function<void(const std::string&, std::span<const double>)>& fn) const;
  /// Shape of each tensor as (rows, cols), same order as for_each.
  std::vector<std::pair<std::size_t, std::size_t>> shapes() const;

  TensorSet zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
};

struct ModelDims {
  std::size_t embed = 0;       // m
  std::size_t hidden = 128;    // h
  std::size_t attention = 64;  // d_a
};

struct ModelParams {
  Method kind = Method::MF;
  ModelDims dims;
  std::uint64_t seed = 0;
  TensorSet tensors;

  /// Throws ShapeError / InvariantError if shapes disagree with dims/kind or values are non-finite.
  void validate() const;
  bool bit_equal(const ModelParams& other) const;
};

struct GradientSet {
  TensorSet tensors;

  static GradientSet zeros_like(const ModelParams& params);
};

/// Identity projections with zero bias; MLP and attention weights uniform in
/// ±1/√fan_in; MLP biases and the final MLP layer start at zero (uniform bundle weights).
ModelParams init_params(Method kind, std::size_t embed, std::size_t hidden,
                        std::size_t attention, std::uint64_t seed);

/// Applies a Linear map to every row of x.
Matrix project(const Linear& layer, const Matrix& x);
/// Accumulates dW, db into grad; returns dX.
Matrix project_backward(const Linear& layer, const Matrix& x, const Matrix& dy, Linear& grad);

struct MlpCache {
  Vector input;
  Vector pre_activation;
};

double mlp_forward(std::span<const double> x, const MlpHead& mlp, MlpCache* cache = nullptr);
/// Throws InvariantError when params carry no MLP head.
double mlp_forward(std::span<const double> x, const ModelParams& params);
/// Accumulates into grad; returns dL/dx. relu'(0) is taken as 0.
Vector mlp_backward(double dscore, const MlpCache& cache, const MlpHead& mlp, MlpHead& grad);

struct AttentionCache {
  Matrix input;
  Matrix queries;
  Matrix keys;
  Matrix values;
  Matrix weights;  // k×k row-softmax
  Matrix mixed;    // weights · values
};

Matrix attention_forward(const Matrix& x, const AttentionBlock& block,
                         AttentionCache* cache = nullptr);
Matrix attention_forward(const Matrix& x, const ModelParams& params);
/// Accumulates into grad; returns dL/dX (including the residual path).
Matrix attention_backward(const Matrix& dy, const AttentionCache& cache,
                          const AttentionBlock& block, AttentionBlock& grad);

/// Everything the backward pass needs from one bundle's forward pass.
struct BundleCache {
  Method method = Method::MF;
  Matrix raw;        // k×m caption embeddings
  Matrix features;   // projected query features f_i
  Matrix pair_cos;   // TS-WF pairwise cosines
  std::vector<MlpCache> mlp;
  AttentionCache attention;
  Vector scores;     // pre-softmax scalars (TS-WF: informativeness / τ_w)
  Vector weights;    // α
  Vector combined;   // Σ α_i f_i
};

/// Weights over the bundle given projected features. SA/RA/MF return uniform weights.
Vector bundle_weights(Method method, const Matrix& features, const ModelParams* params,
                      double tswf_temperature, BundleCache* cache = nullptr);

/// Full forward for one bundle from raw embeddings: projection, weights, combination.
Vector bundle_forward(Method method, const Matrix& raw, const ModelParams& params,
                      double tswf_temperature, BundleCache& cache);

/// Backpropagates dL/d(combined feature) through weights and projection into grads.
void bundle_backward(std::span<const double> dcombined, const BundleCache& cache,
                     const ModelParams& params, double tswf_temperature, GradientSet& grads);

/// Gradient of cosine(a, b) with respect to a.
Vector cosine_grad(std::span<const double> a, std::span<const double> b);

/// Persists params as one MQVR blob per tensor plus params.json naming each tensor
/// and recording (kind, m, h, d_a, seed). Storage is binary32.
void save_params(const ModelParams& params, const std::filesystem::path& directory);
ModelParams load_params(const std::filesystem::path& directory);

}  // namespace mqvr
