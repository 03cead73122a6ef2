#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "constbert/embeddings.hpp"
#include "constbert/scoring.hpp"

namespace constbert {

/// Dense projection W of shape (M*k) x (C*k), stored row-major. Row index
/// a*k+b addresses coordinate b of input token a; column j*k+c addresses
/// coordinate c of pooled vector j.
class ProjectionWeights {
 public:
  ProjectionWeights() = default;
  /// Zero-initialized weights. Requires M, C, k >= 1 and C <= M.
  ProjectionWeights(std::size_t m_tokens, std::size_t c_vectors, std::size_t dim);
  ProjectionWeights(std::size_t m_tokens, std::size_t c_vectors, std::size_t dim, std::vector<float> data);

  /// W = I, only valid for C == M.
  static ProjectionWeights identity(std::size_t m_tokens, std::size_t dim);

  std::size_t m_tokens() const { return m_; }
  std::size_t c_vectors() const { return c_; }
  std::size_t dim() const { return k_; }
  std::size_t input_size() const { return m_ * k_; }
  std::size_t output_size() const { return c_ * k_; }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * output_size() + c]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * output_size() + c]; }

  bool all_finite() const;
  bool same_shape(const ProjectionWeights& o) const { return m_ == o.m_ && c_ == o.c_ && k_ == o.k_; }
  bool operator==(const ProjectionWeights&) const = default;

 private:
  std::size_t m_ = 0;
  std::size_t c_ = 0;
  std::size_t k_ = 0;
  std::vector<float> data_;
};

/// Exactly `m_tokens` rows: surplus rows are dropped from the tail, missing
/// rows are zero vectors.
TokenEmbeddings pad_or_truncate(const TokenEmbeddings& doc, std::size_t m_tokens);

/// Pools an M-row document into C vectors: flatten, apply W^T, reshape. With
/// `normalize` each non-zero output row is scaled to unit length.
/// Throws ShapeError on shape mismatch, NumericError on non-finite output.
PooledEmbeddings pool(const TokenEmbeddings& doc, const ProjectionWeights& w, bool normalize = false);

/// Glorot-uniform entries in (-b, b), b = sqrt(6 / (M*k + C*k)).
ProjectionWeights init_weights(std::size_t m_tokens, std::size_t c_vectors, std::size_t dim, std::uint64_t seed);

/// maxsim(query, pool(doc, w, normalize)).
Score score_pooled(const TokenEmbeddings& query, const TokenEmbeddings& doc, const ProjectionWeights& w,
                   bool normalize = false);

/// Subgradient of score_pooled with respect to every entry of W, holding the
/// per-query-token argmax fixed (lowest index on ties). Returned in a
/// weights-shaped container.
ProjectionWeights grad_score_wrt_w(const TokenEmbeddings& query, const TokenEmbeddings& doc,
                                   const ProjectionWeights& w, bool normalize = false);

// Building blocks shared by grad_score_wrt_w and training.

/// d score / d pooled: row j is the sum of query rows assigned to pooled row j.
EmbeddingMatrix score_grad_wrt_pooled(const MatrixView& query, const PooledEmbeddings& pooled);

/// Maps an upstream gradient on the normalized rows back onto the raw rows.
EmbeddingMatrix backprop_row_normalization(const PooledEmbeddings& raw, const EmbeddingMatrix& upstream);

/// grad[r, col] += scale * x[r] * g[col] (outer product accumulation).
void accumulate_outer(std::span<const float> x, std::span<const float> g, float scale, std::span<float> grad);

/// Binary CBPW file: "CBPW", u16 version, u32 M, u32 C, u32 k, then M*k*C*k
/// little-endian f32 in row-major order.
void save_weights(const std::filesystem::path& path, const ProjectionWeights& w);
ProjectionWeights load_weights(const std::filesystem::path& path);

inline constexpr std::uint16_t kWeightsVersion = 1;

}  // namespace constbert
