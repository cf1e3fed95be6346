#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mqvr/matrix.hpp"

namespace mqvr {

using RankVector = std::vector<std::size_t>;

/// a·b / (‖a‖‖b‖), clamped to [-1, 1]. Throws ShapeError on length mismatch and
/// InvariantError if either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

/// Entry (i, j) = cosine(queries row i, videos row j). Rows are computed in parallel
/// with OpenMP; every entry is bit-identical to serial::sim_matrix.
Matrix sim_matrix(const Matrix& queries, const Matrix& videos);

/// 1-based rank of scores[target]: strictly greater scores precede it, equal scores at
/// lower indices precede it.
std::size_t rank_of(std::span<const double> scores, std::size_t target);

/// rank_of for every index; always a permutation of 1..n.
RankVector full_ranking(std::span<const double> scores);

/// Rows scaled to unit norm; throws InvariantError on a zero row.
Matrix normalize_rows(const Matrix& m);

namespace serial {

/// Scalar reference for sim_matrix: single thread, one cosine() call per entry.
Matrix sim_matrix(const Matrix& queries, const Matrix& videos);

}  // namespace serial

}  // namespace mqvr
