#include "mqvr/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mqvr/embedding_store.hpp"
#include "mqvr/errors.hpp"
#include "mqvr/evaluation.hpp"
#include "mqvr/synthetic.hpp"
#include "mqvr/training.hpp"
#include "mqvr/weight_models.hpp"

#ifndef MQVR_VERSION
#define MQVR_VERSION "unknown"
#endif

namespace mqvr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Tracks every path a command writes so a failed run can remove them.
class OutputSet {
 public:
  explicit OutputSet(fs::path root) : root_(std::move(root)) {}

  void prepare() {
    if (!fs::exists(root_)) {
      created_root_ = true;
      fs::create_directories(root_);
    }
  }
  const fs::path& root() const { return root_; }
  fs::path file(const std::string& name) {
    paths_.push_back(root_ / name);
    return paths_.back();
  }
  fs::path dir(const std::string& name) {
    paths_.push_back(root_ / name);
    return paths_.back();
  }
  std::vector<std::string> listing() const {
    std::vector<std::string> out;
    for (const auto& p : paths_) out.push_back(p.string());
    return out;
  }
  void commit() { committed_ = true; }

  ~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : paths_) fs::remove_all(p, ec);
    if (created_root_) fs::remove_all(root_, ec);
  }

 private:
  fs::path root_;
  std::vector<fs::path> paths_;
  bool created_root_ = false;
  bool committed_ = false;
};

json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset → line number for the diagnostic
    const auto upto = text.substr(0, std::min<std::size_t>(e.byte, text.size()));
    const auto line = 1 + std::count(upto.begin(), upto.end(), '\n');
    throw ConfigError(path + ":" + std::to_string(line) + ": JSON parse error: " + e.what());
  }
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("MQVR_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("MQVR_SEED is not an unsigned integer: '" + std::string(env) + "'");
    }
  }
  return 0;
}

/// Flag beats file beats MQVR_SEED.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const json& file) {
  if (flag) return *flag;
  if (file.contains("seed")) return file.at("seed").get<std::uint64_t>();
  return default_seed();
}

void write_run_manifest(OutputSet& outputs, const std::string& command, const json& config,
                        std::uint64_t seed,
                        std::chrono::steady_clock::time_point started) {
  const fs::path path = outputs.file("run_manifest.json");
  json m;
  m["command"] = command;
  m["config"] = config;
  m["seed"] = seed;
  m["code_version"] = MQVR_VERSION;
  m["csv_schema_version"] = kCsvSchemaVersion;
  m["outputs"] = outputs.listing();
  m["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_text_file(path, m.dump(2) + "\n");
}

std::optional<ModelParams> maybe_params(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_params(path);
}

struct CommonOptions {
  std::string data;
  std::string out;
  std::string config;
  std::string method;
  std::string params;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> queries;
  std::optional<std::size_t> repeats;
};

int cmd_synth(const CommonOptions& o, std::ostream& out) {
  const auto started = std::chrono::steady_clock::now();
  json file = read_json_file(o.config);
  const std::uint64_t seed = resolve_seed(o.seed, file);
  file["seed"] = seed;
  const SyntheticConfig config = SyntheticConfig::from_json(file);

  OutputSet outputs(o.out);
  outputs.prepare();
  if (config.domain_shift) {
    auto [train, transfer] = generate_pair(config);
    save_corpus(train, outputs.dir("train"));
    save_corpus(transfer, outputs.dir("transfer"));
  } else if (config.holdout_videos) {
    auto [train, test] = generate_split(config);
    save_corpus(train, outputs.dir("train"));
    save_corpus(test, outputs.dir("test"));
  } else {
    const Corpus corpus = generate(config);
    outputs.file("manifest.json");
    outputs.file("videos.bin");
    outputs.file("captions.bin");
    save_corpus(corpus, outputs.root());
  }
  write_run_manifest(outputs, "synth", config.to_json(), seed, started);
  outputs.commit();
  out << "wrote synthetic corpus to " << o.out << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o, std::optional<std::size_t> epochs, std::ostream& out) {
  const auto started = std::chrono::steady_clock::now();
  json file = o.config.empty() ? json::object() : read_json_file(o.config);
  file["seed"] = resolve_seed(o.seed, file);
  if (!o.method.empty()) file["method"] = o.method;
  if (o.queries) file["train_query_count"] = *o.queries;
  if (epochs) file["epochs"] = *epochs;
  const TrainConfig config = TrainConfig::from_json(file);
  config.validate();

  const Corpus corpus = load_corpus(o.data);
  OutputSet outputs(o.out);
  outputs.prepare();
  const TrainResult result = train(corpus, config, nullptr, [&](const EpochLog& e) {
    out << "epoch " << e.epoch << " loss " << e.loss << " lr " << e.lr << "\n";
  });
  save_params(result.params, outputs.dir("params"));
  write_text_file(outputs.file("train_log.csv"), result.log.to_csv());
  write_run_manifest(outputs, "train", config.to_json(), config.seed, started);
  outputs.commit();
  return 0;
}

EvalConfig eval_config_from(const CommonOptions& o, const json& file) {
  static const std::vector<std::string> known = {"method", "n_queries", "repeats",
                                                 "seed", "recall_ks", "tswf_temperature"};
  for (const auto& [key, _] : file.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("eval config: unknown field '" + key + "'");
    }
  }
  EvalConfig c;
  try {
    if (file.contains("method")) c.method = parse_method(file.at("method").get<std::string>());
    if (file.contains("n_queries")) c.n_queries = file.at("n_queries").get<std::size_t>();
    if (file.contains("repeats")) c.repeats = file.at("repeats").get<std::size_t>();
    if (file.contains("recall_ks")) c.recall_ks = file.at("recall_ks").get<std::vector<std::size_t>>();
    if (file.contains("tswf_temperature")) {
      c.score.tswf_temperature = file.at("tswf_temperature").get<double>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("eval config: ") + e.what());
  }
  if (!o.method.empty()) c.method = parse_method(o.method);
  else if (!file.contains("method")) throw ConfigError("missing required option --method");
  if (o.queries) c.n_queries = *o.queries;
  if (o.repeats) c.repeats = *o.repeats;
  c.seed = resolve_seed(o.seed, file);
  c.validate();
  return c;
}

void require_params_for(Method method, const std::optional<ModelParams>& params) {
  if (needs_weight_network(method) && !params) {
    throw ConfigError(std::string(to_string(method)) + " needs trained params (--params)");
  }
}

int cmd_eval(const CommonOptions& o, std::ostream& out) {
  const auto started = std::chrono::steady_clock::now();
  const json file = o.config.empty() ? json::object() : read_json_file(o.config);
  const EvalConfig config = eval_config_from(o, file);
  const auto params = maybe_params(o.params);
  require_params_for(config.method, params);
  const Corpus corpus = load_corpus(o.data);

  OutputSet outputs(o.out);
  outputs.prepare();
  const EvalReport report = evaluate(corpus, config, params ? &*params : nullptr);
  write_text_file(outputs.file("eval_report.json"), report.to_json().dump(2) + "\n");
  write_text_file(outputs.file("eval_summary.csv"), report.summary_csv());
  json echo = config.to_json();
  echo["params"] = o.params;
  echo["data"] = o.data;
  write_run_manifest(outputs, "eval", echo, config.seed, started);
  outputs.commit();
  out << report.summary_csv();
  return 0;
}

int cmd_sweep(const CommonOptions& o, std::size_t n_max, std::ostream& out) {
  const auto started = std::chrono::steady_clock::now();
  json file = o.config.empty() ? json::object() : read_json_file(o.config);
  if (!file.contains("n_queries")) file["n_queries"] = 1;
  const EvalConfig config = eval_config_from(o, file);
  const auto params = maybe_params(o.params);
  require_params_for(config.method, params);
  const Corpus corpus = load_corpus(o.data);

  OutputSet outputs(o.out);
  outputs.prepare();
  const AucReport report = sweep(corpus, config.method, params ? &*params : nullptr, n_max,
                                 config.repeats, config.seed, config.recall_ks, config.score);
  write_text_file(outputs.file("sweep_report.json"), report.to_json().dump(2) + "\n");
  write_text_file(outputs.file("sweep_curve.csv"), report.curve_csv());
  json echo = config.to_json();
  echo.erase("n_queries");
  echo["n_max"] = n_max;
  echo["params"] = o.params;
  echo["data"] = o.data;
  write_run_manifest(outputs, "sweep", echo, config.seed, started);
  outputs.commit();
  out << report.curve_csv();
  return 0;
}

int cmd_inspect(const CommonOptions& o, std::ostream& out) {
  const auto started = std::chrono::steady_clock::now();
  json file = o.config.empty() ? json::object() : read_json_file(o.config);
  if (!file.contains("n_queries")) file["n_queries"] = 5;
  const EvalConfig config = eval_config_from(o, file);
  if (!is_weighting(config.method)) {
    throw ConfigError("inspect-weights needs a weighting method (tswf, lgwf, cgwf)");
  }
  const auto params = maybe_params(o.params);
  require_params_for(config.method, params);
  const Corpus corpus = load_corpus(o.data);

  OutputSet outputs(o.out);
  outputs.prepare();
  const WeightTable table = inspect_weights(corpus, config.method, params ? &*params : nullptr,
                                            config.n_queries, config.repeats, config.seed,
                                            config.score);
  write_text_file(outputs.file("weights.csv"), table.to_csv());
  write_text_file(outputs.file("weights.json"), table.to_json().dump(2) + "\n");
  json echo = config.to_json();
  echo["params"] = o.params;
  echo["data"] = o.data;
  write_run_manifest(outputs, "inspect-weights", echo, config.seed, started);
  outputs.commit();
  out << table.to_csv();
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-query video retrieval: synthetic corpora, training, evaluation"};
  app.require_subcommand(1);
  std::optional<int> threads;
  app.add_option("--threads", threads, "Cap on OpenMP threads");

  CommonOptions o;
  std::optional<std::size_t> epochs;
  std::size_t n_max = 5;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--config", o.config, "Synthetic config JSON")->required();
  synth->add_option("--out", o.out, "Output corpus directory")->required();
  synth->add_option("--seed", o.seed, "Generator seed");

  auto add_eval_flags = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "Corpus directory")->required();
    sub->add_option("--out", o.out, "Output directory")->required();
    sub->add_option("--config", o.config, "Evaluation config JSON");
    sub->add_option("--method", o.method, "sa, ra, mf, tswf, lgwf or cgwf");
    sub->add_option("--params", o.params, "Trained params directory");
    sub->add_option("--repeats", o.repeats, "Number of sampled repeats");
    sub->add_option("--seed", o.seed, "Sampling seed");
  };

  auto* train_cmd = app.add_subcommand("train", "Train projection heads / weight networks");
  train_cmd->add_option("--data", o.data, "Corpus directory")->required();
  train_cmd->add_option("--out", o.out, "Output directory")->required();
  train_cmd->add_option("--config", o.config, "Train config JSON");
  train_cmd->add_option("--method", o.method, "mf, tswf, lgwf or cgwf");
  train_cmd->add_option("--queries", o.queries, "Training bundle size");
  train_cmd->add_option("--epochs", epochs, "Number of epochs");
  train_cmd->add_option("--seed", o.seed, "Training seed");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate with N-query bundles");
  add_eval_flags(eval_cmd);
  eval_cmd->add_option("--queries", o.queries, "Queries per bundle");

  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate over 1..n_max queries and report AUC");
  add_eval_flags(sweep_cmd);
  sweep_cmd->add_option("--max-queries", n_max, "Largest bundle size (>= 2)");

  auto* inspect_cmd =
      app.add_subcommand("inspect-weights", "Mean bundle weight per query-quality rank");
  add_eval_flags(inspect_cmd);
  inspect_cmd->add_option("--queries", o.queries, "Queries per bundle (default 5)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

#ifdef _OPENMP
  if (threads) omp_set_num_threads(std::max(1, *threads));
#endif

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (train_cmd->parsed()) return cmd_train(o, epochs, out);
    if (eval_cmd->parsed()) return cmd_eval(o, out);
    if (sweep_cmd->parsed()) return cmd_sweep(o, n_max, out);
    if (inspect_cmd->parsed()) return cmd_inspect(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace mqvr::cli
