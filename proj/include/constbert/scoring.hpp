#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <vector>

#include "constbert/embeddings.hpp"

namespace constbert {

/// Late-interaction relevance score: sum over query tokens of the best
/// per-token dot product against the document vectors.
struct Score {
  double value = 0.0;

  auto operator<=>(const Score&) const = default;
};

/// Dot product accumulated sequentially in single precision.
float dot(std::span<const float> a, std::span<const float> b);

/// MaxSim score of `query` against `doc`. Per-token maxima are summed in
/// query-row order into a double accumulator, so repeated calls are
/// bit-identical. Throws ShapeError on dim mismatch or an empty matrix.
Score maxsim(const MatrixView& query, const MatrixView& doc);

/// For each query row i, the lowest document row index j maximizing q_i . d_j.
std::vector<std::size_t> argmax_assignments(const MatrixView& query, const MatrixView& doc);

/// maxsim applied to each document in order. A document whose dim differs
/// from the query's rejects the whole batch; the message names its index.
std::vector<Score> batch_maxsim(const MatrixView& query, std::span<const EmbeddingMatrix> docs);

}  // namespace constbert
