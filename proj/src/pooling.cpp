#include "constbert/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "constbert/binary_io.hpp"
#include "constbert/errors.hpp"
#include "constbert/rng.hpp"

namespace constbert {
namespace {

void check_dims(std::size_t m, std::size_t c, std::size_t k) {
  if (m == 0 || c == 0 || k == 0) {
    throw ShapeError("projection weights need M, C, k >= 1 (got M=" + std::to_string(m) +
                     " C=" + std::to_string(c) + " k=" + std::to_string(k) + ")");
  }
  if (c > m) {
    throw ShapeError("projection must not expand: C=" + std::to_string(c) + " > M=" + std::to_string(m));
  }
}

void check_doc(const TokenEmbeddings& doc, const ProjectionWeights& w) {
  if (doc.rows() != w.m_tokens() || doc.dim() != w.dim()) {
    throw ShapeError("pool: document is " + std::to_string(doc.rows()) + "x" + std::to_string(doc.dim()) +
                     " but weights expect " + std::to_string(w.m_tokens()) + "x" + std::to_string(w.dim()));
  }
}

PooledEmbeddings pool_raw(const TokenEmbeddings& doc, const ProjectionWeights& w) {
  check_doc(doc, w);
  const std::size_t cols = w.output_size();
  std::vector<float> y(cols, 0.0f);
  const auto x = doc.data();
  const auto wd = w.data();
  for (std::size_t r = 0; r < x.size(); ++r) {
    const float xr = x[r];
    if (xr == 0.0f) continue;
    const float* wrow = wd.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += xr * wrow[c];
  }
  for (float v : y) {
    if (!std::isfinite(v)) throw NumericError("pool: projection produced a non-finite value");
  }
  return PooledEmbeddings(w.c_vectors(), w.dim(), std::move(y));
}

}  // namespace

ProjectionWeights::ProjectionWeights(std::size_t m_tokens, std::size_t c_vectors, std::size_t dim)
    : ProjectionWeights(m_tokens, c_vectors, dim, std::vector<float>(m_tokens * dim * c_vectors * dim, 0.0f)) {}

ProjectionWeights::ProjectionWeights(std::size_t m_tokens, std::size_t c_vectors, std::size_t dim,
                                     std::vector<float> data)
    : m_(m_tokens), c_(c_vectors), k_(dim), data_(std::move(data)) {
  check_dims(m_, c_, k_);
  if (data_.size() != input_size() * output_size()) {
    throw ShapeError("projection data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(input_size() * output_size()));
  }
  if (!all_finite()) throw NumericError("projection weights contain non-finite entries");
}

ProjectionWeights ProjectionWeights::identity(std::size_t m_tokens, std::size_t dim) {
  ProjectionWeights w(m_tokens, m_tokens, dim);
  for (std::size_t i = 0; i < w.input_size(); ++i) w(i, i) = 1.0f;
  return w;
}

bool ProjectionWeights::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

TokenEmbeddings pad_or_truncate(const TokenEmbeddings& doc, std::size_t m_tokens) {
  if (m_tokens == 0) throw ShapeError("pad_or_truncate: m_tokens must be >= 1");
  TokenEmbeddings out(m_tokens, doc.dim());
  const std::size_t keep = std::min(m_tokens, doc.rows());
  std::copy_n(doc.data().begin(), keep * doc.dim(), out.data().begin());
  return out;
}

PooledEmbeddings pool(const TokenEmbeddings& doc, const ProjectionWeights& w, bool normalize) {
  auto out = pool_raw(doc, w);
  if (normalize) out.normalize_rows();
  return out;
}

ProjectionWeights init_weights(std::size_t m_tokens, std::size_t c_vectors, std::size_t dim, std::uint64_t seed) {
  check_dims(m_tokens, c_vectors, dim);
  const double bound = std::sqrt(6.0 / static_cast<double>(m_tokens * dim + c_vectors * dim));
  CounterRng rng(seed, /*stream=*/0x5eed'c0de);
  std::vector<float> data(m_tokens * dim * c_vectors * dim);
  for (float& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
  return ProjectionWeights(m_tokens, c_vectors, dim, std::move(data));
}

Score score_pooled(const TokenEmbeddings& query, const TokenEmbeddings& doc, const ProjectionWeights& w,
                   bool normalize) {
  return maxsim(query, pool(doc, w, normalize));
}

EmbeddingMatrix score_grad_wrt_pooled(const MatrixView& query, const PooledEmbeddings& pooled) {
  const auto assign = argmax_assignments(query, pooled);
  EmbeddingMatrix g(pooled.rows(), pooled.dim());
  for (std::size_t i = 0; i < assign.size(); ++i) {
    auto dst = g.row(assign[i]);
    const auto q = query.row(i);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += q[c];
  }
  return g;
}

EmbeddingMatrix backprop_row_normalization(const PooledEmbeddings& raw, const EmbeddingMatrix& upstream) {
  // For u = v / |v|: du/dv = (I - u u^T) / |v|. Zero rows pass no gradient.
  EmbeddingMatrix out(raw.rows(), raw.dim());
  for (std::size_t j = 0; j < raw.rows(); ++j) {
    const auto v = raw.row(j);
    const auto g = upstream.row(j);
    double sq = 0.0;
    for (float x : v) sq += static_cast<double>(x) * x;
    if (sq == 0.0) continue;
    const double norm = std::sqrt(sq);
    double proj = 0.0;
    for (std::size_t c = 0; c < v.size(); ++c) proj += (v[c] / norm) * g[c];
    auto dst = out.row(j);
    for (std::size_t c = 0; c < v.size(); ++c) {
      dst[c] = static_cast<float>((g[c] - proj * (v[c] / norm)) / norm);
    }
  }
  return out;
}

void accumulate_outer(std::span<const float> x, std::span<const float> g, float scale, std::span<float> grad) {
  const std::size_t cols = g.size();
  for (std::size_t r = 0; r < x.size(); ++r) {
    const float xr = x[r] * scale;
    if (xr == 0.0f) continue;
    float* dst = grad.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += xr * g[c];
  }
}

ProjectionWeights grad_score_wrt_w(const TokenEmbeddings& query, const TokenEmbeddings& doc,
                                   const ProjectionWeights& w, bool normalize) {
  const auto raw = pool_raw(doc, w);
  EmbeddingMatrix upstream;
  if (normalize) {
    auto unit = raw;
    unit.normalize_rows();
    upstream = backprop_row_normalization(raw, score_grad_wrt_pooled(query, unit));
  } else {
    upstream = score_grad_wrt_pooled(query, raw);
  }
  ProjectionWeights grad(w.m_tokens(), w.c_vectors(), w.dim());
  accumulate_outer(doc.data(), upstream.data(), 1.0f, grad.data());
  return grad;
}

void save_weights(const std::filesystem::path& path, const ProjectionWeights& w) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write("CBPW", 4);
  io::write_le<std::uint16_t>(os, kWeightsVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.m_tokens()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.c_vectors()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.dim()));
  io::write_floats_le(os, w.data());
  if (!os.flush()) throw IoError("failed writing " + path.string());
}

ProjectionWeights load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weights file " + path.string());
  io::expect_magic(is, "CBPW", path.string());
  const auto version = io::read_le<std::uint16_t>(is, "weights version");
  if (version != kWeightsVersion) {
    throw VersionError(path.string() + ": unsupported weights version " + std::to_string(version));
  }
  const std::size_t m = io::read_le<std::uint32_t>(is, "M");
  const std::size_t c = io::read_le<std::uint32_t>(is, "C");
  const std::size_t k = io::read_le<std::uint32_t>(is, "k");
  check_dims(m, c, k);
  std::vector<float> data(m * k * c * k);
  io::read_floats_le(is, data, "weights payload");
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after weights payload");
  }
  return ProjectionWeights(m, c, k, std::move(data));
}

}  // namespace constbert
