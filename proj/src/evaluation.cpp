#include "mqvr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "mqvr/errors.hpp"
#include "mqvr/numeric.hpp"
#include "mqvr/rng.hpp"
#include "mqvr/similarity.hpp"
#include "mqvr/training.hpp"

namespace mqvr {

namespace {

struct RepeatResult {
  RankMetrics metrics;
  std::size_t replacement_draws = 0;
};

struct PreparedCorpus {
  Matrix videos;
  std::vector<Matrix> captions;
  std::vector<std::uint64_t> keys;

  explicit PreparedCorpus(const Corpus& c) : videos(c.videos.to_matrix()) {
    captions.reserve(c.size());
    for (const auto& m : c.captions) captions.push_back(m.to_matrix());
    for (const auto& id : c.video_ids) keys.push_back(id_hash(id));
  }
};

Matrix draw_bundle(const PreparedCorpus& pc, std::uint64_t seed, std::size_t repeat,
                   std::size_t video, std::size_t n_queries, std::vector<std::size_t>* picked,
                   bool* replaced) {
  Rng rng = substream(seed, {stream::kEvalSample, repeat, pc.keys[video]});
  auto idx = sample_bundle(pc.captions[video].rows(), n_queries, rng, replaced);
  Matrix bundle = pc.captions[video].gather_rows(idx);
  if (picked) *picked = std::move(idx);
  return bundle;
}

RepeatResult run_repeat(const PreparedCorpus& pc, const Scorer& scorer, const EvalConfig& config,
                        std::size_t repeat) {
  const std::size_t n = pc.captions.size();
  std::vector<std::size_t> ranks(n);
  RepeatResult out;
  for (std::size_t i = 0; i < n; ++i) {
    bool replaced = false;
    const Matrix bundle = draw_bundle(pc, config.seed, repeat, i, config.n_queries, nullptr,
                                      &replaced);
    if (replaced) ++out.replacement_draws;
    ranks[i] = rank_of(scorer.score(bundle), i);
  }
  out.metrics = metrics_from_ranks(ranks, config.recall_ks);
  return out;
}

EvalReport assemble(const EvalConfig& config, std::vector<RepeatResult> results) {
  EvalReport report;
  report.config = config;
  const std::size_t nk = config.recall_ks.size();
  std::vector<NeumaierSum> recall(nk);
  NeumaierSum median, mean;
  for (auto& r : results) {
    for (std::size_t k = 0; k < nk; ++k) recall[k].add(r.metrics.recall[k]);
    median.add(r.metrics.median_rank);
    mean.add(r.metrics.mean_rank);
    report.replacement_draws += r.replacement_draws;
    report.per_repeat.push_back(std::move(r.metrics));
  }
  const double count = static_cast<double>(results.size());
  for (auto& s : recall) report.mean_recall.push_back(s.value() / count);
  report.mean_median_rank = median.value() / count;
  report.mean_mean_rank = mean.value() / count;
  if (report.replacement_draws > 0) {
    std::cerr << "warning: " << report.replacement_draws
              << " evaluation bundles drew captions with replacement (video has fewer than "
              << config.n_queries << " captions)\n";
  }
  return report;
}

void check_eval_inputs(const Corpus& corpus, const EvalConfig& config) {
  config.validate();
  corpus.validate();
  if (corpus.size() == 0) throw InvariantError("cannot evaluate an empty corpus");
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

std::string csv_header(std::span<const std::size_t> ks) {
  std::string h = "method,n_queries";
  for (std::size_t k : ks) h += ",R@" + std::to_string(k);
  h += ",MdR,MnR,AUC\n";
  return h;
}

std::string csv_row(Method method, std::size_t n_queries, std::span<const double> recall,
                    double mdr, double mnr, double auc_value) {
  std::string row = std::string(to_string(method)) + "," + std::to_string(n_queries);
  for (double r : recall) row += "," + csv_number(r);
  row += "," + csv_number(mdr) + "," + csv_number(mnr) + "," + csv_number(auc_value) + "\n";
  return row;
}

}  // namespace

std::uint64_t id_hash(std::string_view id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void EvalConfig::validate() const {
  if (n_queries < 1) throw ConfigError("n_queries must be >= 1");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (recall_ks.empty()) throw ConfigError("recall_ks must not be empty");
  for (std::size_t k : recall_ks)
    if (k < 1) throw ConfigError("recall_ks entries must be >= 1");
  if (!(score.tswf_temperature > 0.0)) throw ConfigError("tswf_temperature must be > 0");
}

nlohmann::json EvalConfig::to_json() const {
  return {{"method", std::string(to_string(method))},
          {"n_queries", n_queries},
          {"repeats", repeats},
          {"seed", seed},
          {"recall_ks", recall_ks},
          {"tswf_temperature", score.tswf_temperature}};
}

RankMetrics metrics_from_ranks(std::span<const std::size_t> ranks,
                               std::span<const std::size_t> recall_ks) {
  if (ranks.empty()) throw InvariantError("metrics_from_ranks: no ranks");
  RankMetrics m;
  const double n = static_cast<double>(ranks.size());
  for (std::size_t k : recall_ks) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
    m.recall.push_back(static_cast<double>(hits) / n);
  }
  std::vector<std::size_t> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() < 1) throw InvariantError("metrics_from_ranks: ranks are 1-based");
  const std::size_t mid = sorted.size() / 2;
  m.median_rank = sorted.size() % 2 == 1
                      ? static_cast<double>(sorted[mid])
                      : 0.5 * (static_cast<double>(sorted[mid - 1]) + static_cast<double>(sorted[mid]));
  NeumaierSum total;
  for (std::size_t r : ranks) total.add(static_cast<double>(r));
  m.mean_rank = total.value() / n;
  return m;
}

bool EvalReport::operator==(const EvalReport& other) const {
  return config.to_json() == other.config.to_json() && per_repeat == other.per_repeat &&
         mean_recall == other.mean_recall && mean_median_rank == other.mean_median_rank &&
         mean_mean_rank == other.mean_mean_rank && replacement_draws == other.replacement_draws;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["config"] = config.to_json();
  nlohmann::json mean;
  for (std::size_t k = 0; k < config.recall_ks.size(); ++k) {
    mean["R@" + std::to_string(config.recall_ks[k])] = mean_recall[k];
  }
  mean["MdR"] = mean_median_rank;
  mean["MnR"] = mean_mean_rank;
  j["mean"] = mean;
  j["replacement_draws"] = replacement_draws;
  nlohmann::json repeats = nlohmann::json::array();
  for (const auto& r : per_repeat) {
    repeats.push_back({{"recall", r.recall}, {"MdR", r.median_rank}, {"MnR", r.mean_rank}});
  }
  j["per_repeat"] = std::move(repeats);
  return j;
}

std::string EvalReport::summary_csv() const {
  return csv_header(config.recall_ks) +
         csv_row(config.method, config.n_queries, mean_recall, mean_median_rank, mean_mean_rank,
                 std::numeric_limits<double>::quiet_NaN());
}

EvalReport evaluate(const Corpus& corpus, const EvalConfig& config, const ModelParams* params) {
  check_eval_inputs(corpus, config);
  const PreparedCorpus pc(corpus);
  const Scorer scorer(config.method, pc.videos, params, config.score);
  std::vector<RepeatResult> results(config.repeats);
  const auto repeats = static_cast<std::ptrdiff_t>(config.repeats);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t r = 0; r < repeats; ++r) {
    try {
      results[static_cast<std::size_t>(r)] =
          run_repeat(pc, scorer, config, static_cast<std::size_t>(r));
    } catch (...) {
#pragma omp critical(mqvr_eval_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return assemble(config, std::move(results));
}

namespace serial {

EvalReport evaluate(const Corpus& corpus, const EvalConfig& config, const ModelParams* params) {
  check_eval_inputs(corpus, config);
  const PreparedCorpus pc(corpus);
  const Scorer scorer(config.method, pc.videos, params, config.score);
  std::vector<RepeatResult> results;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    results.push_back(run_repeat(pc, scorer, config, r));
  }
  return assemble(config, std::move(results));
}

}  // namespace serial

double auc(std::span<const double> curve) {
  if (curve.size() < 2) throw InvariantError("auc needs at least two curve points");
  // Running mean of the trapezoid midpoints: area / (n - 1), exact on constant curves.
  double mean = 0.0;
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    if (!std::isfinite(curve[i]) || !std::isfinite(curve[i + 1])) {
      throw InvariantError("auc: non-finite curve value");
    }
    const double midpoint = (curve[i] + curve[i + 1]) / 2.0;
    mean += (midpoint - mean) / static_cast<double>(i + 1);
  }
  return mean;
}

nlohmann::json AucReport::to_json() const {
  nlohmann::json j;
  j["method"] = std::string(to_string(method));
  j["n_max"] = n_max;
  j["repeats"] = repeats;
  j["seed"] = seed;
  j["recall_ks"] = recall_ks;
  nlohmann::json c;
  for (std::size_t k = 0; k < recall_ks.size(); ++k) c["R@" + std::to_string(recall_ks[k])] = curves[k];
  j["curve"] = c;
  nlohmann::json a = nlohmann::json::array();
  for (const auto& e : auc) {
    a.push_back({{"metric", "AUC^{R@" + std::to_string(e.k) + "}_" + std::to_string(e.n)},
                 {"k", e.k},
                 {"n", e.n},
                 {"value", e.value}});
  }
  j["auc"] = std::move(a);
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) pts.push_back(p.to_json());
  j["points"] = std::move(pts);
  return j;
}

std::string AucReport::curve_csv() const {
  std::string out = csv_header(recall_ks);
  const auto first = std::find(recall_ks.begin(), recall_ks.end(), std::size_t{1});
  for (std::size_t n = 1; n <= points.size(); ++n) {
    double area = std::numeric_limits<double>::quiet_NaN();
    if (n >= 2 && first != recall_ks.end()) {
      const auto& curve = curves[static_cast<std::size_t>(first - recall_ks.begin())];
      area = mqvr::auc(std::span<const double>(curve.data(), n));
    }
    const auto& p = points[n - 1];
    out += csv_row(method, n, p.mean_recall, p.mean_median_rank, p.mean_mean_rank, area);
  }
  return out;
}

AucReport sweep(const Corpus& corpus, Method method, const ModelParams* params, std::size_t n_max,
                std::size_t repeats, std::uint64_t seed, std::vector<std::size_t> recall_ks,
                ScoreOptions options) {
  if (n_max < 2) throw ConfigError("sweep needs n_max >= 2");
  AucReport rep;
  rep.method = method;
  rep.n_max = n_max;
  rep.repeats = repeats;
  rep.seed = seed;
  rep.recall_ks = recall_ks;
  rep.curves.assign(recall_ks.size(), Vector{});
  for (std::size_t n = 1; n <= n_max; ++n) {
    EvalConfig cfg;
    cfg.method = method;
    cfg.n_queries = n;
    cfg.repeats = repeats;
    cfg.seed = seed;
    cfg.recall_ks = recall_ks;
    cfg.score = options;
    rep.points.push_back(evaluate(corpus, cfg, params));
    for (std::size_t k = 0; k < recall_ks.size(); ++k) {
      rep.curves[k].push_back(rep.points.back().mean_recall[k]);
    }
  }
  std::vector<std::size_t> ns;
  for (std::size_t n : {std::size_t{3}, std::size_t{5}, std::size_t{10}, n_max}) {
    if (n >= 2 && n <= n_max && std::find(ns.begin(), ns.end(), n) == ns.end()) ns.push_back(n);
  }
  for (std::size_t k = 0; k < recall_ks.size(); ++k) {
    for (std::size_t n : ns) {
      rep.auc.push_back({recall_ks[k], n, auc(std::span<const double>(rep.curves[k].data(), n))});
    }
  }
  return rep;
}

nlohmann::json WeightTable::to_json() const {
  auto nan_to_null = [](double v) -> nlohmann::json {
    return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  };
  return {{"method", std::string(to_string(method))},
          {"n_queries", n_queries},
          {"instances", instances},
          {"mean_weight_by_quality_rank", mean_weight},
          {"mean_weight_generic", nan_to_null(mean_weight_generic)},
          {"mean_weight_informative", nan_to_null(mean_weight_informative)}};
}

std::string WeightTable::to_csv() const {
  std::string out = "quality_rank,mean_weight\n";
  for (std::size_t r = 0; r < mean_weight.size(); ++r) {
    out += std::to_string(r + 1) + "," + csv_number(mean_weight[r]) + "\n";
  }
  return out;
}

WeightTable inspect_weights(const Corpus& corpus, Method method, const ModelParams* params,
                            std::size_t n_queries, std::size_t repeats, std::uint64_t seed,
                            ScoreOptions options) {
  if (!is_weighting(method)) {
    throw ConfigError("inspect-weights needs a weighting method (tswf, lgwf, cgwf), got " +
                      std::string(to_string(method)));
  }
  if (n_queries < 1 || repeats < 1) throw ConfigError("n_queries and repeats must be >= 1");
  corpus.validate();
  const PreparedCorpus pc(corpus);
  const Scorer scorer(method, pc.videos, params, options);
  const std::size_t n = corpus.size();

  struct Partial {
    std::vector<NeumaierSum> by_rank;
    NeumaierSum generic, informative;
    std::size_t n_generic = 0, n_informative = 0;
  };
  std::vector<Partial> partial(repeats);
  std::exception_ptr failure;
  const auto total = static_cast<std::ptrdiff_t>(repeats);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t rr = 0; rr < total; ++rr) {
    try {
      const auto r = static_cast<std::size_t>(rr);
      Partial& part = partial[r];
      part.by_rank.assign(n_queries, NeumaierSum{});
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> picked;
        const Matrix bundle = draw_bundle(pc, seed, r, i, n_queries, &picked, nullptr);
        const Matrix features = scorer.query_features(bundle);
        const WeightVector w = scorer.weights(bundle);
        std::vector<std::size_t> quality(n_queries);
        for (std::size_t q = 0; q < n_queries; ++q) {
          quality[q] = rank_of(scorer.single_scores(features.row(q)), i);
        }
        std::vector<std::size_t> order(n_queries);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return quality[a] < quality[b]; });
        for (std::size_t pos = 0; pos < n_queries; ++pos) part.by_rank[pos].add(w[order[pos]]);
        if (corpus.quality) {
          for (std::size_t q = 0; q < n_queries; ++q) {
            if ((*corpus.quality)[i][picked[q]] == CaptionQuality::generic) {
              part.generic.add(w[q]);
              ++part.n_generic;
            } else {
              part.informative.add(w[q]);
              ++part.n_informative;
            }
          }
        }
      }
    } catch (...) {
#pragma omp critical(mqvr_inspect_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  WeightTable table;
  table.method = method;
  table.n_queries = n_queries;
  table.instances = n * repeats;
  std::vector<NeumaierSum> by_rank(n_queries);
  NeumaierSum generic, informative;
  std::size_t n_generic = 0, n_informative = 0;
  for (const auto& p : partial) {
    for (std::size_t q = 0; q < n_queries; ++q) by_rank[q].add(p.by_rank[q].value());
    generic.add(p.generic.value());
    informative.add(p.informative.value());
    n_generic += p.n_generic;
    n_informative += p.n_informative;
  }
  for (auto& s : by_rank) table.mean_weight.push_back(s.value() / static_cast<double>(table.instances));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  table.mean_weight_generic = n_generic ? generic.value() / static_cast<double>(n_generic) : nan;
  table.mean_weight_informative =
      n_informative ? informative.value() / static_cast<double>(n_informative) : nan;
  return table;
}

}  // namespace mqvr
