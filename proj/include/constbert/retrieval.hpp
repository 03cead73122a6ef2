#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "constbert/embeddings.hpp"
#include "constbert/index.hpp"

namespace constbert {

struct ScoredDoc {
  std::uint64_t doc_id = 0;
  std::string external_id;
  double score = 0.0;

  bool operator==(const ScoredDoc&) const = default;
};

/// Result order: score descending, then doc_id ascending.
bool ranks_before(const ScoredDoc& a, const ScoredDoc& b);

struct CandidateList {
  std::string query_id;
  std::vector<std::string> doc_ids;
};

/// Work counters filled by search_exact / rerank.
struct SearchStats {
  std::uint64_t docs_decoded = 0;
  std::uint64_t maxsim_calls = 0;
};

/// Scores every document of `index` against `query` and returns the best
/// min(topk, num_docs). With threads > 1 the document range is split into
/// contiguous chunks; the output is identical to the single-threaded scan.
std::vector<ScoredDoc> search_exact(const Index& index, const TokenEmbeddings& query, std::size_t topk,
                                    std::size_t threads = 1, SearchStats* stats = nullptr);

/// Scores only the candidates (duplicates collapsed). Unknown external ids
/// throw LookupError naming the id, unless `lenient`, in which case they
/// are skipped.
std::vector<ScoredDoc> rerank(const Index& index, const TokenEmbeddings& query, const CandidateList& candidates,
                              std::size_t topk, bool lenient = false, SearchStats* stats = nullptr);

struct FirstStageResult {
  CandidateList candidates;
  /// Set when no query token occurs in the corpus (candidates empty).
  bool no_overlap = false;
};

/// Lexical first stage over token ids: a document scores the sum of
/// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)) over distinct query tokens it
/// contains. Documents without any shared token are not candidates.
class OverlapRetriever {
 public:
  OverlapRetriever(std::span<const std::vector<std::uint32_t>> corpus, std::vector<std::string> doc_ids);

  std::size_t num_docs() const { return doc_ids_.size(); }
  std::size_t document_frequency(std::uint32_t token) const;
  double idf(std::uint32_t token) const;

  /// Per-document overlap scores (dense, indexed by corpus position).
  std::vector<double> scores(std::span<const std::uint32_t> query) const;

  /// Top `topk` documents, ties by corpus position. Throws ConfigError on an
  /// empty query.
  FirstStageResult retrieve(const std::string& query_id, std::span<const std::uint32_t> query,
                            std::size_t topk) const;

 private:
  std::vector<std::string> doc_ids_;
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> postings_;
};

}  // namespace constbert
