#include "constbert/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include "constbert/errors.hpp"
#include "constbert/scoring.hpp"

namespace constbert {
namespace {

void check_query(const Index& index, const TokenEmbeddings& query, std::size_t topk) {
  if (query.empty()) throw ShapeError("empty query");
  if (query.dim() != index.dim()) {
    throw ShapeError("query dim " + std::to_string(query.dim()) + " != index dim " + std::to_string(index.dim()));
  }
  if (topk == 0) throw ConfigError("topk must be >= 1");
}

std::vector<ScoredDoc> select_top(const Index& index, std::vector<std::pair<std::uint64_t, double>> scored,
                                  std::size_t topk) {
  auto before = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  const std::size_t n = std::min(topk, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), before);
  std::vector<ScoredDoc> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({scored[i].first, index.ids().external(scored[i].first), scored[i].second});
  }
  return out;
}

}  // namespace

bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
}

std::vector<ScoredDoc> search_exact(const Index& index, const TokenEmbeddings& query, std::size_t topk,
                                    std::size_t threads, SearchStats* stats) {
  check_query(index, query, topk);
  const std::uint64_t n = index.num_docs();
  std::vector<std::pair<std::uint64_t, double>> scored(n);

  auto scan = [&](std::uint64_t begin, std::uint64_t end) {
    PooledEmbeddings doc(index.c_vectors(), index.dim());
    for (std::uint64_t id = begin; id < end; ++id) {
      index.get_doc_into(id, doc);
      scored[id] = {id, maxsim(query, doc).value};
    }
  };

  threads = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (threads == 1) {
    scan(0, n);
  } else {
    std::vector<std::jthread> workers;
    const std::uint64_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::uint64_t begin = t * chunk;
      const std::uint64_t end = std::min<std::uint64_t>(n, begin + chunk);
      if (begin < end) workers.emplace_back(scan, begin, end);
    }
  }
  if (stats) {
    stats->docs_decoded += n;
    stats->maxsim_calls += n;
  }
  return select_top(index, std::move(scored), topk);
}

std::vector<ScoredDoc> rerank(const Index& index, const TokenEmbeddings& query, const CandidateList& candidates,
                              std::size_t topk, bool lenient, SearchStats* stats) {
  check_query(index, query, topk);
  std::vector<std::uint64_t> ids;
  ids.reserve(candidates.doc_ids.size());
  for (const auto& ext : candidates.doc_ids) {
    const auto id = index.ids().find(ext);
    if (!id) {
      if (lenient) continue;
      throw LookupError("query '" + candidates.query_id + "': candidate '" + ext + "' is not in the index");
    }
    ids.push_back(*id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::vector<std::pair<std::uint64_t, double>> scored;
  scored.reserve(ids.size());
  PooledEmbeddings doc(index.c_vectors(), index.dim());
  for (const auto id : ids) {
    index.get_doc_into(id, doc);
    scored.emplace_back(id, maxsim(query, doc).value);
  }
  if (stats) {
    stats->docs_decoded += ids.size();
    stats->maxsim_calls += ids.size();
  }
  return select_top(index, std::move(scored), topk);
}

OverlapRetriever::OverlapRetriever(std::span<const std::vector<std::uint32_t>> corpus,
                                   std::vector<std::string> doc_ids)
    : doc_ids_(std::move(doc_ids)) {
  if (corpus.size() != doc_ids_.size()) throw ConfigError("OverlapRetriever: corpus and id list sizes differ");
  for (std::uint32_t d = 0; d < corpus.size(); ++d) {
    const std::set<std::uint32_t> distinct(corpus[d].begin(), corpus[d].end());
    for (const auto t : distinct) postings_[t].push_back(d);
  }
}

std::size_t OverlapRetriever::document_frequency(std::uint32_t token) const {
  const auto it = postings_.find(token);
  return it == postings_.end() ? 0 : it->second.size();
}

double OverlapRetriever::idf(std::uint32_t token) const {
  const double n = static_cast<double>(doc_ids_.size());
  const double df = static_cast<double>(document_frequency(token));
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::vector<double> OverlapRetriever::scores(std::span<const std::uint32_t> query) const {
  std::vector<double> out(doc_ids_.size(), 0.0);
  const std::set<std::uint32_t> distinct(query.begin(), query.end());
  for (const auto t : distinct) {
    const auto it = postings_.find(t);
    if (it == postings_.end()) continue;
    const double w = idf(t);
    for (const auto d : it->second) out[d] += w;
  }
  return out;
}

FirstStageResult OverlapRetriever::retrieve(const std::string& query_id, std::span<const std::uint32_t> query,
                                            std::size_t topk) const {
  if (query.empty()) throw ConfigError("first stage: query '" + query_id + "' has no tokens");
  const auto s = scores(query);
  std::vector<std::uint32_t> hits;
  for (std::uint32_t d = 0; d < s.size(); ++d) {
    if (s[d] > 0.0) hits.push_back(d);
  }
  const std::size_t n = std::min(topk, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(),
                    [&](std::uint32_t a, std::uint32_t b) { return s[a] != s[b] ? s[a] > s[b] : a < b; });
  FirstStageResult result;
  result.candidates.query_id = query_id;
  for (std::size_t i = 0; i < n; ++i) result.candidates.doc_ids.push_back(doc_ids_[hits[i]]);
  result.no_overlap = hits.empty();
  return result;
}

}  // namespace constbert
