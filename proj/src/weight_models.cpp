#include "mqvr/weight_models.hpp"

#include <map>
#include <bit>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "mqvr/embedding_store.hpp"
#include "mqvr/errors.hpp"
#include "mqvr/numeric.hpp"
#include "mqvr/rng.hpp"
#include "mqvr/similarity.hpp"

namespace mqvr {

namespace fs = std::filesystem;

namespace {

std::span<double> vec_span(Vector& v) { return {v.data(), v.size()}; }
std::span<const double> vec_span(const Vector& v) { return {v.data(), v.size()}; }

template <class Set, class Fn>
void visit_tensors(Set& s, Fn&& fn) {
  fn("query_projection.weight", s.query_projection.weight.data());
  fn("query_projection.bias", vec_span(s.query_projection.bias));
  fn("video_projection.weight", s.video_projection.weight.data());
  fn("video_projection.bias", vec_span(s.video_projection.bias));
  if (s.mlp) {
    fn("mlp.w1", s.mlp->w1.data());
    fn("mlp.b1", vec_span(s.mlp->b1));
    fn("mlp.w2", vec_span(s.mlp->w2));
    fn("mlp.b2", vec_span(s.mlp->b2));
  }
  if (s.attention) {
    fn("attention.wq", s.attention->wq.data());
    fn("attention.wk", s.attention->wk.data());
    fn("attention.wv", s.attention->wv.data());
    fn("attention.wo", s.attention->wo.data());
  }
}

void fill_uniform(std::span<double> data, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : data) x = dist(rng);
}

Matrix zeros_like(const Matrix& m) { return Matrix(m.rows(), m.cols()); }
Vector zeros_like(const Vector& v) { return Vector(v.size(), 0.0); }

TensorSet skeleton(Method kind, const ModelDims& d) {
  TensorSet t;
  t.query_projection = {Matrix(d.embed, d.embed), Vector(d.embed, 0.0)};
  t.video_projection = {Matrix(d.embed, d.embed), Vector(d.embed, 0.0)};
  if (needs_weight_network(kind)) {
    t.mlp = MlpHead{Matrix(d.embed, d.hidden), Vector(d.hidden, 0.0), Vector(d.hidden, 0.0),
                    Vector(1, 0.0)};
  }
  if (kind == Method::CGWF) {
    t.attention = AttentionBlock{Matrix(d.embed, d.attention), Matrix(d.embed, d.attention),
                                 Matrix(d.embed, d.attention), Matrix(d.attention, d.embed)};
  }
  return t;
}

}  // namespace

void TensorSet::for_each(
    const std::function<void(const std::string&, std::span<double>)>& fn) {
  visit_tensors(*this, [&](const char* name, std::span<double> d) { fn(name, d); });
}

void TensorSet::for_each(
    const std::function<void(const std::string&, std::span<const double>)>& fn) const {
  visit_tensors(*this, [&](const char* name, std::span<const double> d) { fn(name, d); });
}

std::vector<std::pair<std::size_t, std::size_t>> TensorSet::shapes() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  auto mat = [&](const Matrix& m) { out.emplace_back(m.rows(), m.cols()); };
  auto vec = [&](const Vector& v) { out.emplace_back(1, v.size()); };
  mat(query_projection.weight);
  vec(query_projection.bias);
  mat(video_projection.weight);
  vec(video_projection.bias);
  if (mlp) {
    mat(mlp->w1);
    vec(mlp->b1);
    vec(mlp->w2);
    vec(mlp->b2);
  }
  if (attention) {
    mat(attention->wq);
    mat(attention->wk);
    mat(attention->wv);
    mat(attention->wo);
  }
  return out;
}

TensorSet TensorSet::zeros_like() const {
  TensorSet t;
  t.query_projection = {mqvr::zeros_like(query_projection.weight),
                        mqvr::zeros_like(query_projection.bias)};
  t.video_projection = {mqvr::zeros_like(video_projection.weight),
                        mqvr::zeros_like(video_projection.bias)};
  if (mlp) {
    t.mlp = MlpHead{mqvr::zeros_like(mlp->w1), mqvr::zeros_like(mlp->b1),
                    mqvr::zeros_like(mlp->w2), mqvr::zeros_like(mlp->b2)};
  }
  if (attention) {
    t.attention = AttentionBlock{mqvr::zeros_like(attention->wq), mqvr::zeros_like(attention->wk),
                                 mqvr::zeros_like(attention->wv), mqvr::zeros_like(attention->wo)};
  }
  return t;
}

std::size_t TensorSet::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, std::span<const double> d) { n += d.size(); });
  return n;
}

bool TensorSet::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, std::span<const double> d) {
    for (double x : d) ok = ok && std::isfinite(x);
  });
  return ok;
}

void ModelParams::validate() const {
  const TensorSet expected = skeleton(kind, dims);
  if (expected.shapes() != tensors.shapes()) {
    throw ShapeError(std::string("model params: tensor shapes do not match kind ") +
                     std::string(to_string(kind)) + " with m=" + std::to_string(dims.embed) +
                     ", h=" + std::to_string(dims.hidden) +
                     ", d_a=" + std::to_string(dims.attention));
  }
  if (!tensors.all_finite()) throw InvariantError("model params contain non-finite values");
}

bool ModelParams::bit_equal(const ModelParams& other) const {
  if (kind != other.kind || dims.embed != other.dims.embed || dims.hidden != other.dims.hidden ||
      dims.attention != other.dims.attention || seed != other.seed ||
      tensors.shapes() != other.tensors.shapes()) {
    return false;
  }
  std::vector<std::uint64_t> a, b;
  tensors.for_each([&](const std::string&, std::span<const double> d) {
    for (double x : d) a.push_back(std::bit_cast<std::uint64_t>(x));
  });
  other.tensors.for_each([&](const std::string&, std::span<const double> d) {
    for (double x : d) b.push_back(std::bit_cast<std::uint64_t>(x));
  });
  return a == b;
}

GradientSet GradientSet::zeros_like(const ModelParams& params) {
  return GradientSet{params.tensors.zeros_like()};
}

ModelParams init_params(Method kind, std::size_t embed, std::size_t hidden, std::size_t attention,
                        std::uint64_t seed) {
  if (embed == 0) throw ConfigError("init_params: embedding dim must be positive");
  if (needs_weight_network(kind) && hidden == 0) {
    throw ConfigError("init_params: hidden size must be positive");
  }
  if (kind == Method::CGWF && attention == 0) {
    throw ConfigError("init_params: attention dim must be positive");
  }
  ModelParams p;
  p.kind = kind;
  p.dims = {embed, hidden, attention};
  p.seed = seed;
  p.tensors = skeleton(kind, p.dims);
  p.tensors.query_projection.weight = Matrix::identity(embed);
  p.tensors.video_projection.weight = Matrix::identity(embed);

  if (p.tensors.mlp) {
    Rng rng = substream(seed, {stream::kInit, 0});
    fill_uniform(p.tensors.mlp->w1.data(), 1.0 / std::sqrt(static_cast<double>(embed)), rng);
  }
  if (p.tensors.attention) {
    auto& a = *p.tensors.attention;
    const double bound_in = 1.0 / std::sqrt(static_cast<double>(embed));
    const double bound_out = 1.0 / std::sqrt(static_cast<double>(attention));
    Rng rq = substream(seed, {stream::kInit, 1});
    Rng rk = substream(seed, {stream::kInit, 2});
    Rng rv = substream(seed, {stream::kInit, 3});
    Rng ro = substream(seed, {stream::kInit, 4});
    fill_uniform(a.wq.data(), bound_in, rq);
    fill_uniform(a.wk.data(), bound_in, rk);
    fill_uniform(a.wv.data(), bound_in, rv);
    fill_uniform(a.wo.data(), bound_out, ro);
  }
  return p;
}

Matrix project(const Linear& layer, const Matrix& x) {
  if (x.cols() != layer.weight.cols()) {
    throw ShapeError("project: input dim " + std::to_string(x.cols()) + " != layer input dim " +
                     std::to_string(layer.weight.cols()));
  }
  Matrix y = matmul_bt(x, layer.weight);
  for (std::size_t r = 0; r < y.rows(); ++r) axpy(1.0, vec_span(layer.bias), y.row(r));
  return y;
}

Matrix project_backward(const Linear& layer, const Matrix& x, const Matrix& dy, Linear& grad) {
  const Matrix dw = matmul_at(dy, x);  // out×in
  axpy(1.0, dw.data(), grad.weight.data());
  for (std::size_t r = 0; r < dy.rows(); ++r) axpy(1.0, dy.row(r), vec_span(grad.bias));
  return matmul(dy, layer.weight);
}

double mlp_forward(std::span<const double> x, const MlpHead& mlp, MlpCache* cache) {
  const std::size_t m = mlp.w1.rows();
  const std::size_t h = mlp.w1.cols();
  if (x.size() != m) {
    throw ShapeError("mlp_forward: input dim " + std::to_string(x.size()) + " != " +
                     std::to_string(m));
  }
  Vector pre = mlp.b1;
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    auto w = mlp.w1.row(i);
    for (std::size_t j = 0; j < h; ++j) pre[j] += xi * w[j];
  }
  double s = mlp.b2[0];
  for (std::size_t j = 0; j < h; ++j) {
    if (pre[j] > 0.0) s += mlp.w2[j] * pre[j];
  }
  if (cache) {
    cache->input.assign(x.begin(), x.end());
    cache->pre_activation = std::move(pre);
  }
  return s;
}

double mlp_forward(std::span<const double> x, const ModelParams& params) {
  if (!params.tensors.mlp) throw InvariantError("model params carry no MLP head");
  return mlp_forward(x, *params.tensors.mlp);
}

Vector mlp_backward(double dscore, const MlpCache& cache, const MlpHead& mlp, MlpHead& grad) {
  const std::size_t m = mlp.w1.rows();
  const std::size_t h = mlp.w1.cols();
  if (cache.pre_activation.size() != h || cache.input.size() != m) {
    throw InvariantError("mlp_backward: missing or mismatched forward cache");
  }
  grad.b2[0] += dscore;
  Vector dpre(h, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    if (cache.pre_activation[j] > 0.0) {
      grad.w2[j] += dscore * cache.pre_activation[j];
      dpre[j] = dscore * mlp.w2[j];
    }
  }
  Vector dx(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    auto w = mlp.w1.row(i);
    auto gw = grad.w1.row(i);
    const double xi = cache.input[i];
    double acc = 0.0;
    for (std::size_t j = 0; j < h; ++j) {
      gw[j] += xi * dpre[j];
      acc += w[j] * dpre[j];
    }
    dx[i] = acc;
  }
  axpy(1.0, vec_span(dpre), vec_span(grad.b1));
  return dx;
}

Matrix attention_forward(const Matrix& x, const AttentionBlock& block, AttentionCache* cache) {
  if (x.cols() != block.wq.rows()) {
    throw ShapeError("attention_forward: feature dim " + std::to_string(x.cols()) + " != " +
                     std::to_string(block.wq.rows()));
  }
  if (x.rows() == 0) throw ShapeError("attention_forward: empty bundle");
  const double scale = 1.0 / std::sqrt(static_cast<double>(block.wq.cols()));
  Matrix q = matmul(x, block.wq);
  Matrix k = matmul(x, block.wk);
  Matrix v = matmul(x, block.wv);
  Matrix logits = matmul_bt(q, k);
  Matrix weights(x.rows(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (double& s : logits.row(i)) s *= scale;
    const Vector row = softmax(logits.row(i));
    std::copy(row.begin(), row.end(), weights.row(i).begin());
  }
  Matrix mixed = matmul(weights, v);
  Matrix y = matmul(mixed, block.wo);
  axpy(1.0, x.data(), y.data());
  if (cache) {
    cache->input = x;
    cache->queries = std::move(q);
    cache->keys = std::move(k);
    cache->values = std::move(v);
    cache->weights = std::move(weights);
    cache->mixed = std::move(mixed);
  }
  return y;
}

Matrix attention_forward(const Matrix& x, const ModelParams& params) {
  if (!params.tensors.attention) throw InvariantError("model params carry no attention block");
  return attention_forward(x, *params.tensors.attention);
}

Matrix attention_backward(const Matrix& dy, const AttentionCache& cache,
                          const AttentionBlock& block, AttentionBlock& grad) {
  const std::size_t k = cache.input.rows();
  if (k == 0 || dy.rows() != k || dy.cols() != cache.input.cols()) {
    throw InvariantError("attention_backward: missing or mismatched forward cache");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(block.wq.cols()));

  Matrix dx = dy;  // residual
  axpy(1.0, matmul_at(cache.mixed, dy).data(), grad.wo.data());
  const Matrix dmixed = matmul_bt(dy, block.wo);           // k×d_a
  const Matrix dweights = matmul_bt(dmixed, cache.values);  // k×k
  const Matrix dvalues = matmul_at(cache.weights, dmixed);  // k×d_a

  Matrix dlogits(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    const Vector row = softmax_backward(cache.weights.row(i), dweights.row(i));
    for (std::size_t j = 0; j < k; ++j) dlogits(i, j) = row[j] * scale;
  }
  const Matrix dq = matmul(dlogits, cache.keys);                // k×d_a
  const Matrix dk = matmul_at(dlogits, cache.queries);          // k×d_a

  axpy(1.0, matmul_at(cache.input, dq).data(), grad.wq.data());
  axpy(1.0, matmul_at(cache.input, dk).data(), grad.wk.data());
  axpy(1.0, matmul_at(cache.input, dvalues).data(), grad.wv.data());

  axpy(1.0, matmul_bt(dq, block.wq).data(), dx.data());
  axpy(1.0, matmul_bt(dk, block.wk).data(), dx.data());
  axpy(1.0, matmul_bt(dvalues, block.wv).data(), dx.data());
  return dx;
}

Vector cosine_grad(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw InvariantError("cosine_grad of a zero vector");
  const double c = dot(a, b) / (na * nb);
  Vector g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = b[i] / (na * nb) - c * a[i] / (na * na);
  return g;
}

Vector bundle_weights(Method method, const Matrix& features, const ModelParams* params,
                      double tswf_temperature, BundleCache* cache) {
  const std::size_t k = features.rows();
  if (k == 0) throw ShapeError("bundle_weights: empty bundle");
  Vector scores(k, 0.0);
  Matrix pair_cos;
  std::vector<MlpCache> mlp_caches;

  switch (method) {
    case Method::SA:
    case Method::RA:
    case Method::MF:
      break;
    case Method::TSWF: {
      if (!(tswf_temperature > 0.0)) throw ConfigError("TS-WF temperature must be positive");
      pair_cos = Matrix(k, k);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
          const double c = cosine(features.row(i), features.row(j));
          pair_cos(i, j) = c;
          pair_cos(j, i) = c;
        }
      }
      for (std::size_t i = 0; i < k; ++i) {
        double informativeness = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          if (j != i) informativeness -= pair_cos(i, j);
        scores[i] = informativeness / tswf_temperature;
      }
      break;
    }
    case Method::LGWF:
    case Method::CGWF: {
      if (params == nullptr || !params->tensors.mlp) {
        throw ConfigError(std::string(to_string(method)) + " requires model params with an MLP");
      }
      const Matrix* head_input = &features;
      Matrix contextual;
      if (method == Method::CGWF) {
        if (!params->tensors.attention) {
          throw ConfigError("CGWF requires model params with an attention block");
        }
        contextual = attention_forward(features, *params->tensors.attention,
                                       cache ? &cache->attention : nullptr);
        head_input = &contextual;
      }
      mlp_caches.resize(cache ? k : 0);
      for (std::size_t i = 0; i < k; ++i) {
        scores[i] = mlp_forward(head_input->row(i), *params->tensors.mlp,
                                cache ? &mlp_caches[i] : nullptr);
      }
      break;
    }
  }

  Vector weights = is_weighting(method) ? softmax(scores) : Vector(k, 1.0 / static_cast<double>(k));
  if (cache) {
    cache->method = method;
    cache->features = features;
    cache->pair_cos = std::move(pair_cos);
    cache->mlp = std::move(mlp_caches);
    cache->scores = std::move(scores);
    cache->weights = weights;
  }
  return weights;
}

Vector bundle_forward(Method method, const Matrix& raw, const ModelParams& params,
                      double tswf_temperature, BundleCache& cache) {
  if (!is_trainable(method)) {
    throw ConfigError(std::string(to_string(method)) + " is a post-hoc method and has no "
                      "differentiable forward pass");
  }
  cache.raw = raw;
  const Matrix features = project(params.tensors.query_projection, raw);
  const Vector weights = bundle_weights(method, features, &params, tswf_temperature, &cache);
  Vector combined(features.cols(), 0.0);
  for (std::size_t i = 0; i < features.rows(); ++i) axpy(weights[i], features.row(i), combined);
  cache.combined = combined;
  return combined;
}

void bundle_backward(std::span<const double> dcombined, const BundleCache& cache,
                     const ModelParams& params, double tswf_temperature, GradientSet& grads) {
  const Matrix& f = cache.features;
  const std::size_t k = f.rows();
  if (k == 0 || cache.weights.size() != k || dcombined.size() != f.cols()) {
    throw InvariantError("bundle_backward: missing or mismatched forward cache");
  }
  Matrix dfeatures(k, f.cols());
  for (std::size_t i = 0; i < k; ++i) axpy(cache.weights[i], dcombined, dfeatures.row(i));

  if (is_weighting(cache.method)) {
    Vector dweights(k);
    for (std::size_t i = 0; i < k; ++i) dweights[i] = dot(dcombined, f.row(i));
    const Vector dscores = softmax_backward(cache.weights, dweights);

    if (cache.method == Method::TSWF) {
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
          // cos_ij enters I_i and I_j with a minus sign.
          const double dcos = -(dscores[i] + dscores[j]) / tswf_temperature;
          if (dcos == 0.0) continue;
          axpy(dcos, cosine_grad(f.row(i), f.row(j)), dfeatures.row(i));
          axpy(dcos, cosine_grad(f.row(j), f.row(i)), dfeatures.row(j));
        }
      }
    } else {
      const MlpHead& mlp = *params.tensors.mlp;
      MlpHead& gmlp = *grads.tensors.mlp;
      if (cache.mlp.size() != k) throw InvariantError("bundle_backward: missing MLP cache");
      Matrix dhead(k, f.cols());
      for (std::size_t i = 0; i < k; ++i) {
        const Vector dx = mlp_backward(dscores[i], cache.mlp[i], mlp, gmlp);
        std::copy(dx.begin(), dx.end(), dhead.row(i).begin());
      }
      if (cache.method == Method::CGWF) {
        dhead = attention_backward(dhead, cache.attention, *params.tensors.attention,
                                   *grads.tensors.attention);
      }
      axpy(1.0, dhead.data(), dfeatures.data());
    }
  }
  project_backward(params.tensors.query_projection, cache.raw, dfeatures,
                   grads.tensors.query_projection);
}

void save_params(const ModelParams& params, const fs::path& directory) {
  params.validate();
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());

  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = std::string(to_string(params.kind));
  j["m"] = params.dims.embed;
  j["h"] = params.dims.hidden;
  j["d_a"] = params.dims.attention;
  j["seed"] = params.seed;
  j["tensors"] = nlohmann::json::array();
  const auto shapes = params.tensors.shapes();
  std::size_t idx = 0;
  params.tensors.for_each([&](const std::string& name, std::span<const double> data) {
    const auto [rows, cols] = shapes[idx++];
    Matrix m(rows, cols, std::vector<double>(data.begin(), data.end()));
    const std::string file = name + ".bin";
    write_blob(directory / file, EmbeddingMatrix::from_matrix(m));
    j["tensors"].push_back({{"name", name}, {"file", file}, {"rows", rows}, {"cols", cols}});
  });
  write_text_file(directory / "params.json", j.dump(2) + "\n");
}

ModelParams load_params(const fs::path& directory) {
  const fs::path meta_path = directory / "params.json";
  nlohmann::json j;
  ModelParams p;
  try {
    j = nlohmann::json::parse(read_text_file(meta_path));
    if (j.at("format_version").get<int>() != 1) {
      throw FormatError(meta_path.string() + ": unsupported format_version");
    }
    p.kind = parse_method(j.at("kind").get<std::string>());
    p.dims = {j.at("m").get<std::size_t>(), j.at("h").get<std::size_t>(),
              j.at("d_a").get<std::size_t>()};
    p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  p.tensors = skeleton(p.kind, p.dims);

  std::map<std::string, fs::path> files;
  for (const auto& t : j.at("tensors")) {
    files[t.at("name").get<std::string>()] = directory / t.at("file").get<std::string>();
  }
  p.tensors.for_each([&](const std::string& name, std::span<double> data) {
    auto it = files.find(name);
    if (it == files.end()) throw FormatError(meta_path.string() + ": missing tensor " + name);
    const EmbeddingMatrix blob = read_blob(it->second);
    if (blob.data().size() != data.size()) {
      throw ShapeError("tensor " + name + " holds " + std::to_string(blob.data().size()) +
                       " values, expected " + std::to_string(data.size()));
    }
    std::copy(blob.data().begin(), blob.data().end(), data.begin());
  });
  p.validate();
  return p;
}

}  // namespace mqvr
