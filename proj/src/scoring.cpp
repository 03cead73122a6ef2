#include "constbert/scoring.hpp"

#include <string>

#include "constbert/errors.hpp"

namespace constbert {
namespace {

void check_shapes(const MatrixView& query, const MatrixView& doc) {
  if (query.rows == 0 || query.dim == 0) throw ShapeError("maxsim: empty query matrix");
  if (doc.rows == 0 || doc.dim == 0) throw ShapeError("maxsim: empty document matrix");
  if (query.dim != doc.dim) {
    throw ShapeError("maxsim: query dim " + std::to_string(query.dim) + " != document dim " +
                     std::to_string(doc.dim));
  }
}

// Best row for one query vector; ties resolve to the lowest index.
std::pair<std::size_t, float> best_row(std::span<const float> q, const MatrixView& doc) {
  std::size_t best = 0;
  float best_sim = dot(q, doc.row(0));
  for (std::size_t j = 1; j < doc.rows; ++j) {
    const float sim = dot(q, doc.row(j));
    if (sim > best_sim) {
      best_sim = sim;
      best = j;
    }
  }
  return {best, best_sim};
}

}  // namespace

float dot(std::span<const float> a, std::span<const float> b) {
  float acc = 0.0f;
  for (std::size_t c = 0; c < a.size(); ++c) acc += a[c] * b[c];
  return acc;
}

Score maxsim(const MatrixView& query, const MatrixView& doc) {
  check_shapes(query, doc);
  double total = 0.0;
  for (std::size_t i = 0; i < query.rows; ++i) total += best_row(query.row(i), doc).second;
  return Score{total};
}

std::vector<std::size_t> argmax_assignments(const MatrixView& query, const MatrixView& doc) {
  check_shapes(query, doc);
  std::vector<std::size_t> out(query.rows);
  for (std::size_t i = 0; i < query.rows; ++i) out[i] = best_row(query.row(i), doc).first;
  return out;
}

std::vector<Score> batch_maxsim(const MatrixView& query, std::span<const EmbeddingMatrix> docs) {
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (docs[d].dim() != query.dim || docs[d].empty()) {
      throw ShapeError("batch_maxsim: document " + std::to_string(d) + " has dim " +
                       std::to_string(docs[d].dim()) + ", query has dim " + std::to_string(query.dim));
    }
  }
  std::vector<Score> out;
  out.reserve(docs.size());
  for (const auto& doc : docs) out.push_back(maxsim(query, doc.view()));
  return out;
}

}  // namespace constbert
