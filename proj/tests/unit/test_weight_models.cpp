#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mqvr/errors.hpp"
#include "mqvr/training.hpp"
#include "mqvr/weight_models.hpp"
#include "oracle/finite_diff.hpp"
#include "oracle/naive.hpp"
#include "unit/test_util.hpp"

using namespace mqvr;

namespace {

struct Instance {
  std::vector<Matrix> bundles;
  Matrix videos;
};

Instance random_instance(std::size_t b, std::size_t k, std::size_t m, std::mt19937_64& rng) {
  Instance in;
  for (std::size_t i = 0; i < b; ++i) in.bundles.push_back(testutil::random_matrix(k, m, rng));
  in.videos = testutil::random_matrix(b, m, rng);
  return in;
}

oracle::GradCheck fd_check(Method method, const ModelParams& p, const Instance& in,
                           const LossOptions& opt) {
  GradientSet g = GradientSet::zeros_like(p);
  batch_loss(method, in.bundles, in.videos, p, opt, &g);
  return oracle::check_gradients(p, g, [&](const ModelParams& q) {
    return batch_loss(method, in.bundles, in.videos, q, opt);
  });
}

}  // namespace

TEST(Mlp, ZeroParamsGiveZero) {
  MlpHead h{Matrix(3, 4), Vector(4, 0.0), Vector(4, 0.0), Vector(1, 0.0)};
  EXPECT_EQ(mlp_forward(std::vector<double>{1, -2, 3}, h), 0.0);
}

TEST(Mlp, ReluGatesNegativeInput) {
  MlpHead h{Matrix(3, 1), Vector(1, 0.0), Vector{1.0}, Vector(1, 0.0)};
  h.w1(0, 0) = 1.0;
  EXPECT_EQ(mlp_forward(std::vector<double>{-2, 5, 7}, h), 0.0);
  EXPECT_EQ(mlp_forward(std::vector<double>{2, 5, 7}, h), 2.0);
}

TEST(Mlp, MatchesOracle) {
  std::mt19937_64 rng(31);
  const ModelParams p = testutil::random_params(Method::LGWF, 6, 9, 4, rng);
  for (int t = 0; t < 10; ++t) {
    const Matrix x = testutil::random_matrix(1, 6, rng);
    const oracle::Vec xo(x.row(0).begin(), x.row(0).end());
    EXPECT_NEAR(mlp_forward(x.row(0), p), oracle::mlp(*p.tensors.mlp, xo), 1e-12);
  }
  EXPECT_THROW(mlp_forward(std::vector<double>{1, 2}, p), ShapeError);
  EXPECT_THROW(mlp_forward(std::vector<double>(6, 1.0), init_params(Method::MF, 6, 4, 4, 0)),
               InvariantError);
}

TEST(Attention, SingletonAndZeroOutput) {
  std::mt19937_64 rng(32);
  ModelParams p = testutil::random_params(Method::CGWF, 4, 5, 3, rng);
  const Matrix x = testutil::random_matrix(1, 4, rng);
  const Matrix y = attention_forward(x, p);
  const Matrix expect = [&] {
    Matrix v = matmul(matmul(x, p.tensors.attention->wv), p.tensors.attention->wo);
    for (std::size_t j = 0; j < 4; ++j) v(0, j) += x(0, j);
    return v;
  }();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y(0, j), expect(0, j), 1e-12);
  p.tensors.attention->wo.fill(0.0);
  const Matrix x3 = testutil::random_matrix(3, 4, rng);
  EXPECT_EQ(attention_forward(x3, p), x3);
}

TEST(Attention, TwoQueryHandComputation) {
  // m = 2, d_a = 1: scores q·k / 1, so A rows are softmax([x_i wq · x_j wk]).
  AttentionBlock a{Matrix::from_rows({{1.0}, {0.0}}), Matrix::from_rows({{1.0}, {0.0}}),
                   Matrix::from_rows({{0.0}, {1.0}}), Matrix::from_rows({{1.0, 1.0}})};
  const Matrix x = Matrix::from_rows({{1.0, 2.0}, {0.0, 3.0}});
  // q = k = [1, 0]; v = [2, 3]. Row 0 logits [1, 0] → [e/(e+1), 1/(e+1)]; row 1 logits [0, 0].
  const double e = std::exp(1.0);
  const double mix0 = (2.0 * e + 3.0) / (e + 1.0);
  const double mix1 = 2.5;
  const Matrix y = attention_forward(x, a);
  EXPECT_NEAR(y(0, 0), 1.0 + mix0, 1e-12);
  EXPECT_NEAR(y(0, 1), 2.0 + mix0, 1e-12);
  EXPECT_NEAR(y(1, 0), 0.0 + mix1, 1e-12);
  EXPECT_NEAR(y(1, 1), 3.0 + mix1, 1e-12);
}

TEST(Attention, MatchesOracleAndIsPermutationEquivariant) {
  std::mt19937_64 rng(33);
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 1 + t % 5;
    const ModelParams p = testutil::random_params(Method::CGWF, 5, 4, 3, rng);
    const Matrix x = testutil::random_matrix(k, 5, rng);
    const Matrix y = attention_forward(x, p);
    const oracle::Mat ref = oracle::attention(*p.tensors.attention, oracle::rows_of(x));
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(y(r, j), ref[r][j], 1e-12);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix yp = attention_forward(x.gather_rows(perm), p);
    const Matrix py = y.gather_rows(perm);
    for (std::size_t i = 0; i < yp.data().size(); ++i) EXPECT_NEAR(yp.data()[i], py.data()[i], 1e-12);
  }
}

TEST(Init, IdentityProjectionsUniformWeightsAndDeterminism) {
  const ModelParams a = init_params(Method::CGWF, 6, 10, 4, 77);
  const ModelParams b = init_params(Method::CGWF, 6, 10, 4, 77);
  const ModelParams c = init_params(Method::CGWF, 6, 10, 4, 78);
  EXPECT_TRUE(a.bit_equal(b));
  EXPECT_FALSE(a.bit_equal(c));
  EXPECT_EQ(a.tensors.query_projection.weight, Matrix::identity(6));
  EXPECT_EQ(a.tensors.video_projection.weight, Matrix::identity(6));
  for (double w : a.tensors.mlp->w2) EXPECT_EQ(w, 0.0);
  const double bound = 1.0 / std::sqrt(6.0);
  for (double w : a.tensors.mlp->w1.data()) EXPECT_LE(std::abs(w), bound);
  for (double w : a.tensors.attention->wo.data()) EXPECT_LE(std::abs(w), 1.0 / 2.0);
  EXPECT_FALSE(init_params(Method::MF, 6, 10, 4, 0).tensors.mlp.has_value());
  EXPECT_FALSE(init_params(Method::LGWF, 6, 10, 4, 0).tensors.attention.has_value());
  EXPECT_THROW(init_params(Method::MF, 0, 10, 4, 0), ConfigError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(34);
  const ModelParams p = testutil::random_params(Method::CGWF, 4, 5, 3, rng);
  BundleCache cache;
  bundle_forward(Method::CGWF, testutil::random_matrix(3, 4, rng), p, 1.0, cache);
  GradientSet g = GradientSet::zeros_like(p);
  bundle_backward(Vector(4, 0.0), cache, p, 1.0, g);
  g.tensors.for_each([](const std::string& name, std::span<const double> t) {
    for (double x : t) EXPECT_EQ(x, 0.0) << name;
  });
}

TEST(Backward, QueryOnlyProbeLeavesVideoProjectionAtZero) {
  std::mt19937_64 rng(35);
  const ModelParams p = testutil::random_params(Method::LGWF, 4, 5, 3, rng);
  BundleCache cache;
  bundle_forward(Method::LGWF, testutil::random_matrix(3, 4, rng), p, 1.0, cache);
  GradientSet g = GradientSet::zeros_like(p);
  bundle_backward(Vector{0.3, -1.0, 0.5, 2.0}, cache, p, 1.0, g);
  for (double x : g.tensors.video_projection.weight.data()) EXPECT_EQ(x, 0.0);
  for (double x : g.tensors.video_projection.bias) EXPECT_EQ(x, 0.0);
  double total = 0;
  for (double x : g.tensors.query_projection.weight.data()) total += std::abs(x);
  EXPECT_GT(total, 0.0);
}

TEST(Backward, MissingCacheRejected) {
  const ModelParams p = init_params(Method::LGWF, 4, 5, 3, 0);
  GradientSet g = GradientSet::zeros_like(p);
  EXPECT_THROW(bundle_backward(Vector(4, 1.0), BundleCache{}, p, 1.0, g), InvariantError);
}

TEST(Backward, CosineGradMatchesFiniteDifference) {
  std::mt19937_64 rng(36);
  const Matrix ab = testutil::random_matrix(2, 5, rng);
  const Vector g = cosine_grad(ab.row(0), ab.row(1));
  for (std::size_t i = 0; i < 5; ++i) {
    Vector up(ab.row(0).begin(), ab.row(0).end()), dn = up;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    EXPECT_NEAR(g[i], (oracle::cos(up, {ab.row(1).begin(), ab.row(1).end()}) -
                       oracle::cos(dn, {ab.row(1).begin(), ab.row(1).end()})) / 2e-6, 1e-8);
  }
}

class FiniteDifference : public ::testing::TestWithParam<Method> {};

TEST_P(FiniteDifference, EveryParameterAgrees) {
  std::mt19937_64 rng(40 + static_cast<int>(GetParam()));
  for (int t = 0; t < 5; ++t) {
    const std::size_t b = 2 + rng() % 5, k = 1 + rng() % 4, m = 2 + rng() % 7;
    const ModelParams p = testutil::random_params(GetParam(), m, 6, 4, rng, 0.3);
    const Instance in = random_instance(b, k, m, rng);
    for (LossDirection dir : {LossDirection::t2v, LossDirection::symmetric}) {
      const LossOptions opt{0.05, dir, 1.0};
      const oracle::GradCheck r = fd_check(GetParam(), p, in, opt);
      EXPECT_LT(r.worst_relative, 1e-4) << r.worst_tensor;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Methods, FiniteDifference,
                         ::testing::Values(Method::MF, Method::TSWF, Method::LGWF, Method::CGWF),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Persistence, SaveLoadRoundTripsAtStoragePrecision) {
  testutil::TempDir dir("params");
  std::mt19937_64 rng(37);
  ModelParams p = testutil::random_params(Method::CGWF, 5, 6, 3, rng);
  // Round to binary32 first so the round trip is exact.
  p.tensors.for_each([](const std::string&, std::span<double> t) {
    for (double& x : t) x = static_cast<float>(x);
  });
  save_params(p, dir.path());
  const ModelParams back = load_params(dir.path());
  EXPECT_TRUE(back.bit_equal(p));
  EXPECT_EQ(back.kind, Method::CGWF);
  EXPECT_EQ(back.dims.hidden, 6u);
  EXPECT_EQ(back.dims.attention, 3u);
  EXPECT_EQ(back.seed, p.seed);
}

TEST(Persistence, MissingTensorIsFormatError) {
  testutil::TempDir dir("params");
  save_params(init_params(Method::LGWF, 3, 4, 2, 0), dir.path());
  auto j = nlohmann::json::parse(read_text_file(dir / "params.json"));
  j["tensors"].erase(0);
  write_text_file(dir / "params.json", j.dump());
  EXPECT_THROW(load_params(dir.path()), FormatError);
}
