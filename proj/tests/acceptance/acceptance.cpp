#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mqvr/aggregation.hpp"
#include "mqvr/embedding_store.hpp"
#include "mqvr/evaluation.hpp"
#include "mqvr/similarity.hpp"
#include "mqvr/synthetic.hpp"
#include "mqvr/training.hpp"
#include "mqvr/weight_models.hpp"
#include "oracle/finite_diff.hpp"
#include "oracle/naive.hpp"
#include "unit/test_util.hpp"

using namespace mqvr;

namespace {

constexpr Method kAll[] = {Method::SA, Method::RA, Method::MF,
                           Method::TSWF, Method::LGWF, Method::CGWF};
constexpr std::uint64_t kSeeds = 10;
constexpr std::size_t kRepeats = 100;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %2d %-28s %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::vector<std::size_t> argsort_desc(const Vector& s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  return idx;
}

Matrix unit_rows(Matrix m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = norm(m.row(r));
    for (double& x : m.row(r)) x /= n;
  }
  return m;
}

const ModelParams* params_for(Method m, const ModelParams& lg, const ModelParams& cg) {
  if (m == Method::LGWF) return &lg;
  if (m == Method::CGWF) return &cg;
  return nullptr;
}

Corpus default_corpus(std::uint64_t seed) {
  SyntheticConfig c;
  c.seed = seed;
  return generate(c);
}

EvalConfig eval_config(Method m, std::size_t n_queries, std::uint64_t seed) {
  EvalConfig e;
  e.method = m;
  e.n_queries = n_queries;
  e.repeats = kRepeats;
  e.seed = seed;
  return e;
}

TrainConfig train_config(Method m, std::uint64_t seed) {
  TrainConfig t;
  t.method = m;
  t.train_query_count = 5;
  t.epochs = 30;
  t.seed = seed;
  return t;
}

void oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 10, k = 1 + rng() % 5, m = 1 + rng() % 8;
    const Matrix v = testutil::random_matrix(n, m, rng);
    const Matrix q = testutil::random_matrix(k, m, rng);
    const ModelParams lg = testutil::random_params(Method::LGWF, m, 6, 3, rng);
    const ModelParams cg = testutil::random_params(Method::CGWF, m, 6, 3, rng);
    for (Method method : kAll) {
      const ModelParams* p = params_for(method, lg, cg);
      const Vector got = score_method(method, q, v, p);
      const oracle::Vec ref = oracle::score(method, oracle::rows_of(q), oracle::rows_of(v), p);
      for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(got[j] - ref[j]));
    }
  }
  const double secs = seconds_since(t0);
  report(1, "oracle equivalence", worst <= 1e-9 && secs < 10,
         fmt("max |diff| %.3g", worst) + fmt(", %.2f s", secs));
}

void gradient_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1002);
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  for (Method method : {Method::MF, Method::LGWF, Method::CGWF}) {
    for (int t = 0; t < 20; ++t) {
      const std::size_t b = 2 + rng() % 5, k = 1 + rng() % 4, m = 2 + rng() % 7;
      const ModelParams p = testutil::random_params(method, m, 6, 4, rng, 0.3);
      std::vector<Matrix> bundles;
      for (std::size_t i = 0; i < b; ++i) bundles.push_back(testutil::random_matrix(k, m, rng));
      const Matrix videos = testutil::random_matrix(b, m, rng);
      const LossOptions opt;
      GradientSet g = GradientSet::zeros_like(p);
      batch_loss(method, bundles, videos, p, opt, &g);
      const oracle::GradCheck r = oracle::check_gradients(p, g, [&](const ModelParams& q) {
        return batch_loss(method, bundles, videos, q, opt);
      });
      checked += r.checked;
      if (r.worst_relative > worst) {
        worst = r.worst_relative;
        where = std::string(to_string(method)) + " " + r.worst_tensor;
      }
    }
  }
  const double secs = seconds_since(t0);
  report(2, "gradient finite differences", worst < 1e-4 && secs < 60,
         fmt("worst rel %.3g", worst) + " (" + where + "), " + std::to_string(checked) +
             " params" + fmt(", %.2f s", secs));
}

void collapse_identities() {
  std::mt19937_64 rng(1003);
  bool single_ok = true, uniform_ok = true, sa_mf_ok = true;
  double uniform_worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 12, k = 2 + rng() % 6, m = 2 + rng() % 10;
    const Matrix v = testutil::random_matrix(n, m, rng);
    const ModelParams lg = testutil::random_params(Method::LGWF, m, 6, 3, rng);
    const ModelParams cg = testutil::random_params(Method::CGWF, m, 6, 3, rng);

    const Matrix one = testutil::random_matrix(1, m, rng);
    for (Method method : kAll) {
      const ModelParams* p = params_for(method, lg, cg);
      const Scorer s(method, v, p);
      const Vector single = s.single_scores(s.query_features(one).row(0));
      single_ok &= argsort_desc(s.score(one)) == argsort_desc(single);
    }

    const Matrix q = testutil::random_matrix(k, m, rng);
    const WeightVector uniform(k, 1.0 / static_cast<double>(k));
    const Vector wf = weighted_feature(q, uniform), mf = mean_feature(q);
    for (std::size_t d = 0; d < m; ++d) uniform_worst = std::max(uniform_worst, std::abs(wf[d] - mf[d]));

    const Matrix qu = unit_rows(q), vu = unit_rows(v);
    sa_mf_ok &= argsort_desc(score_sa(qu, vu)) == argsort_desc(score_method(Method::MF, qu, vu));
  }
  uniform_ok = uniform_worst <= 1e-12;
  report(3, "collapse identities", single_ok && uniform_ok && sa_mf_ok,
         std::string("k=1 ") + (single_ok ? "ok" : "differs") + fmt(", uniform WF-MF %.3g", uniform_worst) +
             ", SA/MF argsort " + (sa_mf_ok ? "equal" : "differs"));
}

void auc_quadrature() {
  bool ok = auc(std::vector<double>{40, 60, 70}) == 57.5;
  std::mt19937_64 rng(1004);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (int t = 0; t < 1000; ++t) {
    const double c = u(rng);
    ok &= auc(std::vector<double>{c, c, c}) == c;
  }
  report(4, "auc quadrature", ok, fmt("auc([40,60,70]) = %.17g", auc(std::vector<double>{40, 60, 70})));
}

void protocol_determinism() {
  const Corpus c = default_corpus(0);
  bool identical = true;
  double worst = 0.0;
  for (Method m : {Method::SA, Method::RA, Method::MF, Method::TSWF}) {
    const EvalConfig cfg = eval_config(m, 5, 7);
    const EvalReport a = evaluate(c, cfg), b = evaluate(c, cfg), s = serial::evaluate(c, cfg);
    identical &= a == b && a.to_json().dump() == b.to_json().dump();
    for (std::size_t i = 0; i < a.mean_recall.size(); ++i)
      worst = std::max(worst, std::abs(a.mean_recall[i] - s.mean_recall[i]));
    worst = std::max(worst, std::abs(a.mean_median_rank - s.mean_median_rank));
    worst = std::max(worst, std::abs(a.mean_mean_rank - s.mean_mean_rank));
  }
  report(5, "protocol determinism", identical && worst <= 1e-12,
         std::string(identical ? "bit-identical" : "reports differ") + fmt(", parallel-serial %.3g", worst));
}

void sa_beats_ra() {
  const auto t0 = Clock::now();
  double sa = 0.0, ra = 0.0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const Corpus c = default_corpus(seed);
    sa += evaluate(c, eval_config(Method::SA, 5, seed)).mean_recall[0] / kSeeds;
    ra += evaluate(c, eval_config(Method::RA, 5, seed)).mean_recall[0] / kSeeds;
  }
  const double secs = seconds_since(t0);
  report(6, "SA > RA", sa > ra && secs < 300,
         fmt("SA R@1 %.4f", sa) + fmt(" vs RA %.4f", ra) + fmt(", %.1f s", secs));
}

struct TrainedRuns {
  std::vector<Corpus> corpora;
  std::vector<ModelParams> mf;
  double seconds = 0.0;
};

TrainedRuns train_mf_runs() {
  const auto t0 = Clock::now();
  TrainedRuns out;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    out.corpora.push_back(default_corpus(seed));
    out.mf.push_back(train(out.corpora.back(), train_config(Method::MF, seed)).params);
  }
  out.seconds = seconds_since(t0);
  return out;
}

bool non_decreasing(const Vector& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[i - 1]) return false;
  return true;
}

std::string curve_text(const Vector& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += fmt(i ? " %.4f" : "%.4f", v[i]);
  return s + "]";
}

void monotone_curves(const TrainedRuns& runs) {
  Vector sa(5, 0.0), mf(5, 0.0);
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const AucReport a = sweep(runs.corpora[seed], Method::SA, nullptr, 5, kRepeats, seed);
    const AucReport b = sweep(runs.corpora[seed], Method::MF, &runs.mf[seed], 5, kRepeats, seed);
    for (std::size_t i = 0; i < 5; ++i) {
      sa[i] += a.curves[0][i] / kSeeds;
      mf[i] += b.curves[0][i] / kSeeds;
    }
  }
  report(7, "R@1 non-decreasing in n", non_decreasing(sa) && non_decreasing(mf),
         "SA " + curve_text(sa) + " MF " + curve_text(mf));
}

void training_helps(const TrainedRuns& runs) {
  const auto t0 = Clock::now();
  double sa = 0.0, mf = 0.0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const ModelParams fresh = init_params(Method::MF, runs.corpora[seed].dim(), 128, 64, seed);
    sa += evaluate(runs.corpora[seed], eval_config(Method::SA, 5, seed), &fresh).mean_recall[0] / kSeeds;
    mf += evaluate(runs.corpora[seed], eval_config(Method::MF, 5, seed), &runs.mf[seed]).mean_recall[0] /
          kSeeds;
  }
  const double secs = runs.seconds + seconds_since(t0);
  report(8, "trained MF > SA", mf > sa && secs < 900,
         fmt("MF R@1 %.4f", mf) + fmt(" vs SA %.4f", sa) + fmt(", %.1f s", secs));
}

void held_out_diagnostic() {
  double sa = 0.0, mf = 0.0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    SyntheticConfig c;
    c.seed = seed;
    c.holdout_videos = 200;
    const auto [train_set, test_set] = generate_split(c);
    const ModelParams p = train(train_set, train_config(Method::MF, seed)).params;
    sa += evaluate(test_set, eval_config(Method::SA, 5, seed)).mean_recall[0] / kSeeds;
    mf += evaluate(test_set, eval_config(Method::MF, 5, seed), &p).mean_recall[0] / kSeeds;
  }
  std::printf("[INFO]    held-out split (not gating)   MF R@1 %.4f vs SA %.4f\n", mf, sa);
}

void weights_track_quality() {
  double rank1 = 0.0, rank5 = 0.0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const Corpus c = default_corpus(seed);
    const ModelParams p = train(c, train_config(Method::CGWF, seed)).params;
    const WeightTable w = inspect_weights(c, Method::CGWF, &p, 5, kRepeats, seed);
    rank1 += w.mean_weight[0] / kSeeds;
    rank5 += w.mean_weight[4] / kSeeds;
  }

  // Three informative captions near the video plus two copies of the cluster centroid.
  std::mt19937_64 rng(1009);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::size_t m = 32;
  double worst_copy = 0.0;
  for (int t = 0; t < 100; ++t) {
    auto draw = [&](const std::vector<double>& centre, double sd) {
      std::vector<double> x(m);
      for (std::size_t d = 0; d < m; ++d) x[d] = centre[d] + sd * g(rng) / std::sqrt(double(m));
      const double n = std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
      for (double& e : x) e /= n;
      return x;
    };
    const std::vector<double> centroid = draw(std::vector<double>(m, 0.0), 1.0);
    const std::vector<double> video = draw(centroid, 0.3);
    Matrix bundle = Matrix::from_rows({draw(video, 0.4), draw(video, 0.4), draw(video, 0.4), centroid, centroid});
    const WeightVector w = tswf_weights(bundle);
    worst_copy = std::max({worst_copy, w[3], w[4]});
  }
  const bool ok = rank1 > rank5 && worst_copy < 0.2;
  report(9, "weights track quality", ok,
         fmt("CG-WF rank1 %.4f", rank1) + fmt(" vs rank5 %.4f", rank5) +
             fmt(", TS-WF max centroid weight %.4f (uniform 0.2)", worst_copy));
}

void invariance_suite() {
  std::mt19937_64 rng(1010);
  double perm_worst = 0.0, scale_worst = 0.0, simplex_worst = 0.0, attn_worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 10, k = 1 + rng() % 6, m = 2 + rng() % 8;
    const Matrix v = testutil::random_matrix(n, m, rng);
    const Matrix q = testutil::random_matrix(k, m, rng);
    const ModelParams lg = testutil::random_params(Method::LGWF, m, 6, 3, rng);
    const ModelParams cg = testutil::random_params(Method::CGWF, m, 6, 3, rng);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix qp = q.gather_rows(perm);

    for (Method method : kAll) {
      const Scorer s(method, v, params_for(method, lg, cg));
      const Vector a = s.score(q), b = s.score(qp);
      for (std::size_t j = 0; j < n; ++j) perm_worst = std::max(perm_worst, std::abs(a[j] - b[j]));
      if (!is_weighting(method) && method != Method::MF) continue;
      const WeightVector w = s.weights(q), wp = s.weights(qp);
      double sum = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        perm_worst = std::max(perm_worst, std::abs(wp[i] - w[perm[i]]));
        if (w[i] < 0.0) simplex_worst = std::max(simplex_worst, -w[i]);
        sum += w[i];
      }
      simplex_worst = std::max(simplex_worst, std::abs(sum - 1.0));
    }

    const Matrix y = attention_forward(q, cg), yp = attention_forward(qp, cg);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t d = 0; d < m; ++d) attn_worst = std::max(attn_worst, std::abs(yp(i, d) - y(perm[i], d)));

    std::uniform_real_distribution<double> scale(0.01, 100.0);
    const double c = scale(rng);
    std::vector<double> a(q.row(0).begin(), q.row(0).end()), ca = a;
    for (double& x : ca) x *= c;
    scale_worst = std::max(scale_worst, std::abs(cosine(ca, v.row(0)) - cosine(a, v.row(0))));
  }
  const bool ok = perm_worst <= 1e-12 && attn_worst <= 1e-12 && scale_worst <= 1e-12 &&
                  simplex_worst <= kSimplexTolerance;
  report(10, "invariance suite", ok,
         fmt("perm %.3g", perm_worst) + fmt(", attention %.3g", attn_worst) +
             fmt(", scale %.3g", scale_worst) + fmt(", simplex %.3g", simplex_worst));
}

void round_trip() {
  testutil::TempDir dir("acceptance");
  const Corpus c = default_corpus(11);
  save_corpus(c, dir.path());
  const bool corpus_ok = load_corpus(dir.path()).identical(c);
  const EmbeddingMatrix g = read_blob(std::filesystem::path(MQVR_FIXTURE_DIR) / "golden_2x3.bin");
  const std::vector<float> expected{1.0f, -2.0f, 0.5f, 0.25f, 0.0f, 3.0f};
  const bool golden_ok = g.rows() == 2 && g.dim() == 3 &&
                         std::equal(expected.begin(), expected.end(), g.data().begin());
  report(11, "round trip and golden blob", corpus_ok && golden_ok,
         std::string("corpus ") + (corpus_ok ? "bit-exact" : "differs") + ", golden " +
             (golden_ok ? "ok" : "mismatch"));
}

template <class F>
void guarded(int id, const char* name, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("threw: ") + e.what());
  }
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  guarded(1, "oracle equivalence", oracle_equivalence);
  guarded(2, "gradient finite differences", gradient_check);
  guarded(3, "collapse identities", collapse_identities);
  guarded(4, "auc quadrature", auc_quadrature);
  guarded(5, "protocol determinism", protocol_determinism);
  guarded(6, "SA > RA", sa_beats_ra);
  TrainedRuns runs;
  try {
    runs = train_mf_runs();
  } catch (const std::exception& e) {
    report(7, "R@1 non-decreasing in n", false, std::string("training threw: ") + e.what());
    report(8, "trained MF > SA", false, std::string("training threw: ") + e.what());
  }
  if (!runs.mf.empty()) {
    guarded(7, "R@1 non-decreasing in n", [&] { monotone_curves(runs); });
    guarded(8, "trained MF > SA", [&] { training_helps(runs); });
    guarded(8, "held-out diagnostic", held_out_diagnostic);
  }
  guarded(9, "weights track quality", weights_track_quality);
  guarded(10, "invariance suite", invariance_suite);
  guarded(11, "round trip and golden blob", round_trip);
  std::printf("%d failing, %.1f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
