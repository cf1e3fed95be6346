#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mqvr/embedding_store.hpp"
#include "mqvr/matrix.hpp"
#include "mqvr/method.hpp"
#include "mqvr/rng.hpp"
#include "mqvr/weight_models.hpp"

namespace mqvr {

enum class Schedule { constant, cosine };
enum class LossDirection { t2v, symmetric };

struct TrainConfig {
  Method method = Method::MF;
  std::size_t train_query_count = 5;
  std::size_t epochs = 30;
  std::size_t batch_size = 48;
  double temperature = 0.05;
  double base_lr = 1e-3;
  std::size_t warmup_epochs = 5;
  Schedule schedule = Schedule::cosine;
  /// Probability that a training instance uses a single caption; nullopt = off.
  std::optional<double> combination_p_single;
  std::uint64_t seed = 0;
  LossDirection loss_direction = LossDirection::t2v;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t hidden = 128;
  std::size_t attention = 64;
  double tswf_temperature = 1.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing fields keep their defaults; unknown fields are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Learning-rate presets matching the full-backbone fine-tuning recipes.
inline constexpr double kPresetLrFrozen = 3e-5;
inline constexpr double kPresetLrClip4Clip = 3e-6;

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;  // learning rate of the epoch's last step
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::uint64_t seed = 0;
  std::size_t replacement_draws = 0;

  /// "epoch,loss,lr" rows.
  std::string to_csv() const;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

/// Indices of a uniformly random k-subset of [0, available) in random order. If
/// k > available, draws with replacement and sets *with_replacement.
std::vector<std::size_t> sample_bundle(std::size_t available, std::size_t k, Rng& rng,
                                       bool* with_replacement = nullptr);

struct InfoNceResult {
  double loss = 0.0;
  Matrix dlogits;
};

/// Cross-entropy over rows of logits/τ with the diagonal as targets; symmetric mode
/// averages the text→video (rows) and video→text (columns) losses.
InfoNceResult infonce_loss(const Matrix& logits, double temperature,
                           LossDirection direction = LossDirection::t2v);

struct LossOptions {
  double temperature = 0.05;
  LossDirection direction = LossDirection::t2v;
  double tswf_temperature = 1.0;
};

/// Contrastive loss of one batch: bundle b is matched with video row b. Accumulates
/// exact gradients into *grads when non-null.
double batch_loss(Method method, std::span<const Matrix> bundles, const Matrix& videos,
                  const ModelParams& params, const LossOptions& options,
                  GradientSet* grads = nullptr);

/// Linear warmup 0 → base_lr over warmup_steps, then constant or cosine decay reaching 0
/// at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr,
             Schedule schedule);

/// Steps per epoch for a corpus of n videos (final batches of one video are dropped).
std::size_t steps_per_epoch(std::size_t n_videos, std::size_t batch_size);
double lr_at(std::size_t step, const TrainConfig& config, std::size_t n_videos);

/// AdamW with decoupled weight decay (p -= lr·wd·p). Decay applies to weight matrices,
/// not biases.
class AdamW {
 public:
  AdamW(const ModelParams& params, double beta1, double beta2, double epsilon,
        double weight_decay);
  void step(ModelParams& params, const GradientSet& grads, double lr);

 private:
  double beta1_, beta2_, epsilon_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<Vector> m_, v_;
  std::vector<bool> decay_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains the projection heads (and weight networks for LG-WF/CG-WF) with in-batch
/// contrastive loss. Fully deterministic given (corpus, config). Starts from
/// init_params(config) unless `initial` is given.
TrainResult train(const Corpus& corpus, const TrainConfig& config,
                  const ModelParams* initial = nullptr, const EpochCallback& on_epoch = {});

}  // namespace mqvr
