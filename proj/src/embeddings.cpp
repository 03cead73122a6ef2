#include "constbert/embeddings.hpp"

#include <cmath>
#include <string>

#include "constbert/errors.hpp"

namespace constbert {

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim)
    : EmbeddingMatrix(rows, dim, std::vector<float>(rows * dim, 0.0f)) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data, bool normalized)
    : rows_(rows), dim_(dim), data_(std::move(data)), normalized_(normalized) {
  if (rows_ == 0 || dim_ == 0) {
    throw ShapeError("embedding matrix must have at least one row and one column (got " +
                     std::to_string(rows_) + "x" + std::to_string(dim_) + ")");
  }
  if (data_.size() != rows_ * dim_) {
    throw ShapeError("embedding data length " + std::to_string(data_.size()) + " != rows*dim = " +
                     std::to_string(rows_ * dim_));
  }
  if (normalized_ && !rows_unit_norm()) {
    throw ShapeError("matrix flagged normalized but a row is not unit-norm");
  }
}

EmbeddingMatrix EmbeddingMatrix::from_rows(const std::vector<std::vector<float>>& rows) {
  if (rows.empty() || rows.front().empty()) {
    throw ShapeError("embedding matrix must have at least one row and one column");
  }
  const std::size_t dim = rows.front().size();
  std::vector<float> data;
  data.reserve(rows.size() * dim);
  for (const auto& r : rows) {
    if (r.size() != dim) throw ShapeError("ragged rows in embedding matrix");
    data.insert(data.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix(rows.size(), dim, std::move(data));
}

void EmbeddingMatrix::normalize_rows() {
  for (std::size_t r = 0; r < rows_; ++r) {
    auto v = row(r);
    double sq = 0.0;
    for (float x : v) sq += static_cast<double>(x) * x;
    if (sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    for (float& x : v) x = static_cast<float>(x * inv);
  }
  // Zero rows stay zero, so the flag only holds when none were present.
  normalized_ = rows_unit_norm();
}

bool EmbeddingMatrix::rows_unit_norm(double tol) const {
  for (std::size_t r = 0; r < rows_; ++r) {
    double sq = 0.0;
    for (float x : row(r)) sq += static_cast<double>(x) * x;
    if (std::abs(std::sqrt(sq) - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace constbert
