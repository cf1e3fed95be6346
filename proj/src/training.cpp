#include "mqvr/training.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "mqvr/errors.hpp"
#include "mqvr/numeric.hpp"
#include "mqvr/similarity.hpp"

namespace mqvr {

namespace {

std::string_view to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "constant"; }
std::string_view to_string(LossDirection d) {
  return d == LossDirection::symmetric ? "symmetric" : "t2v";
}

template <class T>
T field(const nlohmann::json& j, const char* name, T fallback) {
  if (!j.contains(name)) return fallback;
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("train config: field '") + name + "' has the wrong type");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!is_trainable(method)) {
    throw ConfigError("method " + std::string(mqvr::to_string(method)) +
                      ": post-hoc method is not trainable");
  }
  if (train_query_count < 1) throw ConfigError("train_query_count must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be >= 0");
  if (combination_p_single && !(*combination_p_single >= 0.0 && *combination_p_single <= 1.0)) {
    throw ConfigError("p_single must lie in [0, 1]");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
  if (!(tswf_temperature > 0.0)) throw ConfigError("tswf_temperature must be > 0");
  if (needs_weight_network(method) && hidden == 0) throw ConfigError("hidden must be >= 1");
  if (method == Method::CGWF && attention == 0) throw ConfigError("attention must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["method"] = std::string(mqvr::to_string(method));
  j["train_query_count"] = train_query_count;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["temperature"] = temperature;
  j["base_lr"] = base_lr;
  j["warmup_epochs"] = warmup_epochs;
  j["schedule"] = std::string(to_string(schedule));
  j["combination_mode"] = combination_p_single ? "mix" : "off";
  if (combination_p_single) j["p_single"] = *combination_p_single;
  j["seed"] = seed;
  j["loss_direction"] = std::string(to_string(loss_direction));
  j["weight_decay"] = weight_decay;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_epsilon"] = adam_epsilon;
  j["hidden"] = hidden;
  j["attention"] = attention;
  j["tswf_temperature"] = tswf_temperature;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "method",   "train_query_count", "epochs",     "batch_size",     "temperature",
      "base_lr",  "warmup_epochs",     "schedule",   "combination_mode", "p_single",
      "seed",     "loss_direction",    "weight_decay", "beta1",        "beta2",
      "adam_epsilon", "hidden",        "attention",  "tswf_temperature"};
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("train config: unknown field '" + key + "'");
  }
  TrainConfig c;
  if (j.contains("method")) c.method = parse_method(field<std::string>(j, "method", ""));
  c.train_query_count = field(j, "train_query_count", c.train_query_count);
  c.epochs = field(j, "epochs", c.epochs);
  c.batch_size = field(j, "batch_size", c.batch_size);
  c.temperature = field(j, "temperature", c.temperature);
  c.base_lr = field(j, "base_lr", c.base_lr);
  c.warmup_epochs = field(j, "warmup_epochs", c.warmup_epochs);
  const auto schedule = field<std::string>(j, "schedule", "cosine");
  if (schedule == "cosine") {
    c.schedule = Schedule::cosine;
  } else if (schedule == "constant") {
    c.schedule = Schedule::constant;
  } else {
    throw ConfigError("train config: field 'schedule' must be 'cosine' or 'constant'");
  }
  const auto mode = field<std::string>(j, "combination_mode", "off");
  if (mode == "mix") {
    c.combination_p_single = field(j, "p_single", 0.5);
  } else if (mode != "off") {
    throw ConfigError("train config: field 'combination_mode' must be 'off' or 'mix'");
  }
  c.seed = field(j, "seed", c.seed);
  const auto direction = field<std::string>(j, "loss_direction", "t2v");
  if (direction == "t2v") {
    c.loss_direction = LossDirection::t2v;
  } else if (direction == "symmetric") {
    c.loss_direction = LossDirection::symmetric;
  } else {
    throw ConfigError("train config: field 'loss_direction' must be 't2v' or 'symmetric'");
  }
  c.weight_decay = field(j, "weight_decay", c.weight_decay);
  c.beta1 = field(j, "beta1", c.beta1);
  c.beta2 = field(j, "beta2", c.beta2);
  c.adam_epsilon = field(j, "adam_epsilon", c.adam_epsilon);
  c.hidden = field(j, "hidden", c.hidden);
  c.attention = field(j, "attention", c.attention);
  c.tswf_temperature = field(j, "tswf_temperature", c.tswf_temperature);
  return c;
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,lr\n";
  for (const auto& e : epochs) out << e.epoch << ',' << e.loss << ',' << e.lr << '\n';
  return out.str();
}

std::vector<std::size_t> sample_bundle(std::size_t available, std::size_t k, Rng& rng,
                                       bool* with_replacement) {
  if (available == 0) throw InvariantError("sample_bundle: video has no captions");
  if (k == 0) throw ConfigError("sample_bundle: bundle size must be >= 1");
  std::vector<std::size_t> out;
  if (k > available) {
    if (with_replacement) *with_replacement = true;
    std::uniform_int_distribution<std::size_t> pick(0, available - 1);
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(pick(rng));
    return out;
  }
  if (with_replacement) *with_replacement = false;
  std::vector<std::size_t> pool(available);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k slots end up a uniform random ordered subset.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, available - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

InfoNceResult infonce_loss(const Matrix& logits, double temperature, LossDirection direction) {
  if (logits.rows() != logits.cols() || logits.rows() == 0) {
    throw ShapeError("infonce_loss: logits must be a non-empty square matrix");
  }
  if (!(temperature > 0.0)) throw ConfigError("infonce_loss: temperature must be > 0");
  const std::size_t b = logits.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  InfoNceResult r;
  r.dlogits = Matrix(b, b);

  // Row-wise (text→video) cross-entropy with target i in row i.
  auto directional = [&](bool by_rows, double share) {
    NeumaierSum total;
    Vector scaled(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        scaled[j] = (by_rows ? logits(i, j) : logits(j, i)) / temperature;
      }
      const Vector p = softmax(scaled);
      total.add(log_sum_exp(scaled) - scaled[i]);
      for (std::size_t j = 0; j < b; ++j) {
        const double g = share * inv_b * (p[j] - (i == j ? 1.0 : 0.0)) / temperature;
        if (by_rows) {
          r.dlogits(i, j) += g;
        } else {
          r.dlogits(j, i) += g;
        }
      }
    }
    return share * total.value() * inv_b;
  };

  if (direction == LossDirection::t2v) {
    r.loss = directional(true, 1.0);
  } else {
    r.loss = directional(true, 0.5) + directional(false, 0.5);
  }
  return r;
}

double batch_loss(Method method, std::span<const Matrix> bundles, const Matrix& videos,
                  const ModelParams& params, const LossOptions& options, GradientSet* grads) {
  const std::size_t b = bundles.size();
  if (b == 0 || videos.rows() != b) {
    throw ShapeError("batch_loss: need one video row per bundle");
  }
  std::vector<BundleCache> caches(b);
  Matrix combined(b, params.dims.embed);
  for (std::size_t i = 0; i < b; ++i) {
    const Vector z = bundle_forward(method, bundles[i], params, options.tswf_temperature,
                                    caches[i]);
    std::copy(z.begin(), z.end(), combined.row(i).begin());
  }
  const Matrix video_features = project(params.tensors.video_projection, videos);

  Matrix logits(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) logits(i, j) = cosine(combined.row(i), video_features.row(j));

  const InfoNceResult ce = infonce_loss(logits, options.temperature, options.direction);
  if (grads == nullptr) return ce.loss;

  Matrix dvideo(b, params.dims.embed);
  for (std::size_t i = 0; i < b; ++i) {
    Vector dz(params.dims.embed, 0.0);
    for (std::size_t j = 0; j < b; ++j) {
      const double g = ce.dlogits(i, j);
      if (g == 0.0) continue;
      axpy(g, cosine_grad(combined.row(i), video_features.row(j)), dz);
      axpy(g, cosine_grad(video_features.row(j), combined.row(i)), dvideo.row(j));
    }
    bundle_backward(dz, caches[i], params, options.tswf_temperature, *grads);
  }
  project_backward(params.tensors.video_projection, videos, dvideo,
                   grads->tensors.video_projection);
  return ce.loss;
}

double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr,
             Schedule schedule) {
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (schedule == Schedule::constant || total_steps <= warmup_steps) return base_lr;
  if (step >= total_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

std::size_t steps_per_epoch(std::size_t n_videos, std::size_t batch_size) {
  const std::size_t full = n_videos / batch_size;
  return full + (n_videos % batch_size >= 2 ? 1 : 0);
}

double lr_at(std::size_t step, const TrainConfig& config, std::size_t n_videos) {
  const std::size_t spe = steps_per_epoch(n_videos, config.batch_size);
  return lr_at(step, spe * config.epochs, spe * config.warmup_epochs, config.base_lr,
               config.schedule);
}

AdamW::AdamW(const ModelParams& params, double beta1, double beta2, double epsilon,
             double weight_decay)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay) {
  params.tensors.for_each([&](const std::string& name, std::span<const double> d) {
    m_.emplace_back(d.size(), 0.0);
    v_.emplace_back(d.size(), 0.0);
    const bool is_bias = name.ends_with("bias") || name == "mlp.b1" || name == "mlp.b2";
    decay_.push_back(!is_bias);
  });
}

void AdamW::step(ModelParams& params, const GradientSet& grads, double lr) {
  ++t_;
  std::vector<std::span<const double>> g;
  grads.tensors.for_each(
      [&](const std::string&, std::span<const double> d) { g.push_back(d); });
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t idx = 0;
  params.tensors.for_each([&](const std::string&, std::span<double> p) {
    auto& m = m_[idx];
    auto& v = v_[idx];
    const auto& gi = g[idx];
    const double decay = decay_[idx] ? lr * weight_decay_ : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi[i] * gi[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= decay * p[i] + lr * mhat / (std::sqrt(vhat) + epsilon_);
    }
    ++idx;
  });
}

TrainResult train(const Corpus& corpus, const TrainConfig& config, const ModelParams* initial,
                  const EpochCallback& on_epoch) {
  config.validate();
  corpus.validate();
  const std::size_t n = corpus.size();
  if (n < 2) throw InvariantError("training needs at least 2 videos");
  const std::size_t m = corpus.dim();

  TrainResult result;
  if (initial) {
    initial->validate();
    if (initial->kind != config.method || initial->dims.embed != m) {
      throw ConfigError("initial params do not match the configured method/dim");
    }
    result.params = *initial;
  } else {
    result.params = init_params(config.method, m, config.hidden, config.attention, config.seed);
  }
  result.log.seed = config.seed;

  const Matrix videos = corpus.videos.to_matrix();
  std::vector<Matrix> captions;
  captions.reserve(n);
  for (const auto& c : corpus.captions) captions.push_back(c.to_matrix());

  const std::size_t spe = steps_per_epoch(n, config.batch_size);
  const std::size_t total_steps = spe * config.epochs;
  const std::size_t warmup_steps = spe * config.warmup_epochs;
  const LossOptions loss_options{config.temperature, config.loss_direction,
                                 config.tswf_temperature};

  AdamW optimizer(result.params, config.beta1, config.beta2, config.adam_epsilon,
                  config.weight_decay);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = substream(config.seed, {stream::kTrainShuffle, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    NeumaierSum epoch_loss;
    std::size_t batches = 0;
    double lr = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      if (end - start < 2) break;
      std::vector<Matrix> bundles;
      std::vector<std::size_t> batch_videos(order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(end));
      for (std::size_t vid : batch_videos) {
        std::size_t k = config.train_query_count;
        if (config.combination_p_single) {
          Rng coin = substream(config.seed, {stream::kTrainCombine, epoch, vid});
          std::bernoulli_distribution single(*config.combination_p_single);
          if (single(coin)) k = 1;
        }
        Rng pick = substream(config.seed, {stream::kTrainBundle, epoch, vid});
        bool replaced = false;
        const auto idx = sample_bundle(captions[vid].rows(), k, pick, &replaced);
        if (replaced) ++result.log.replacement_draws;
        bundles.push_back(captions[vid].gather_rows(idx));
      }
      const Matrix batch = videos.gather_rows(batch_videos);

      GradientSet grads = GradientSet::zeros_like(result.params);
      const double loss = batch_loss(config.method, bundles, batch, result.params, loss_options,
                                     &grads);
      if (!std::isfinite(loss) || !grads.tensors.all_finite()) {
        throw InvariantError("non-finite loss or gradient at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step) + " (loss=" +
                             std::to_string(loss) + ", lr=" +
                             std::to_string(lr_at(step, total_steps, warmup_steps,
                                                  config.base_lr, config.schedule)) +
                             ")");
      }
      lr = lr_at(step, total_steps, warmup_steps, config.base_lr, config.schedule);
      optimizer.step(result.params, grads, lr);
      epoch_loss.add(loss);
      ++batches;
      ++step;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = epoch_loss.value() / static_cast<double>(batches);
    entry.lr = lr;
    entry.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  if (result.log.replacement_draws > 0) {
    std::cerr << "warning: " << result.log.replacement_draws
              << " training bundles drew captions with replacement (k > captions available)\n";
  }
  return result;
}

}  // namespace mqvr
