#include "mqvr/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mqvr/errors.hpp"

namespace mqvr {

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine: dims " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw InvariantError("cosine of a zero vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

Matrix sim_matrix(const Matrix& queries, const Matrix& videos) {
  if (queries.cols() != videos.cols()) throw ShapeError("sim_matrix: dim mismatch");
  Matrix out(queries.rows(), videos.rows());
  const auto nq = static_cast<std::ptrdiff_t>(queries.rows());
  // Exceptions must not escape the parallel region; record and rethrow.
  bool zero_row = false;
#pragma omp parallel for schedule(static) reduction(|| : zero_row)
  for (std::ptrdiff_t i = 0; i < nq; ++i) {
    auto q = queries.row(static_cast<std::size_t>(i));
    auto dst = out.row(static_cast<std::size_t>(i));
    double qq = 0.0;
    for (double x : q) qq += x * x;
    if (qq == 0.0) {
      zero_row = true;
      continue;
    }
    for (std::size_t j = 0; j < videos.rows(); ++j) {
      auto v = videos.row(j);
      double ab = 0.0, vv = 0.0;
      for (std::size_t d = 0; d < v.size(); ++d) {
        ab += q[d] * v[d];
        vv += v[d] * v[d];
      }
      if (vv == 0.0) {
        zero_row = true;
        break;
      }
      dst[j] = std::clamp(ab / (std::sqrt(qq) * std::sqrt(vv)), -1.0, 1.0);
    }
  }
  if (zero_row) throw InvariantError("sim_matrix: zero row");
  return out;
}

std::size_t rank_of(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) {
    throw ShapeError("rank_of: target " + std::to_string(target) + " out of range " +
                     std::to_string(scores.size()));
  }
  const double st = scores[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == target) continue;
    if (scores[j] > st || (scores[j] == st && j < target)) ++rank;
  }
  return rank;
}

RankVector full_ranking(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RankVector ranks(scores.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) ranks[order[pos]] = pos + 1;
  return ranks;
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double n = norm(row);
    if (n == 0.0) throw InvariantError("normalize_rows: zero row " + std::to_string(r));
    for (double& x : row) x /= n;
  }
  return out;
}

namespace serial {

Matrix sim_matrix(const Matrix& queries, const Matrix& videos) {
  if (queries.cols() != videos.cols()) throw ShapeError("sim_matrix: dim mismatch");
  Matrix out(queries.rows(), videos.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i)
    for (std::size_t j = 0; j < videos.rows(); ++j)
      out(i, j) = cosine(queries.row(i), videos.row(j));
  return out;
}

}  // namespace serial

}  // namespace mqvr
