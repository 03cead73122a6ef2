#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace constbert {

/// Read-only row-major view over a rows x dim block of floats.
struct MatrixView {
  std::span<const float> data;
  std::size_t rows = 0;
  std::size_t dim = 0;

  std::span<const float> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

/// Row-major matrix of 32-bit float vectors, one row per token (or per
/// pooled document vector). Rows and dim are always >= 1.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  /// Zero-filled rows x dim matrix. Throws ShapeError on zero extents.
  EmbeddingMatrix(std::size_t rows, std::size_t dim);
  /// Takes ownership of `data`; its length must equal rows * dim.
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data, bool normalized = false);

  static EmbeddingMatrix from_rows(const std::vector<std::vector<float>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return rows_ == 0; }
  bool normalized() const { return normalized_; }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * dim_ + c]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * dim_ + c]; }

  MatrixView view() const { return {data_, rows_, dim_}; }
  operator MatrixView() const { return view(); }

  /// L2-normalizes every non-zero row in place and sets the normalized flag.
  void normalize_rows();
  /// True when every row has unit L2 norm within `tol`.
  bool rows_unit_norm(double tol = 1e-5) const;

  bool operator==(const EmbeddingMatrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  bool normalized_ = false;
};

/// Token embeddings of a query (N rows) or document (M rows).
using TokenEmbeddings = EmbeddingMatrix;
/// The C document-level vectors produced by the pooling projection.
using PooledEmbeddings = EmbeddingMatrix;

}  // namespace constbert
