#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "constbert/embeddings.hpp"
#include "constbert/eval.hpp"
#include "constbert/training.hpp"

namespace constbert::synth {

struct SynthConfig {
  std::size_t vocab_size = 1000;
  std::size_t num_topics = 20;
  std::size_t docs_per_topic = 500;
  std::size_t doc_len_min = 16;
  std::size_t doc_len_max = 32;
  std::size_t m_tokens = 32;
  std::size_t dim = 16;
  std::size_t queries_per_topic = 10;
  std::size_t query_len = 8;
  double noise_fraction = 0.2;
  std::uint64_t seed = 3;
  /// Training queries, one triplet each.
  std::size_t num_triplets = 2000;
  std::size_t negatives_per_triplet = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::size_t pool_size() const { return vocab_size / num_topics; }
};

std::string to_json(const SynthConfig& config);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
SynthConfig config_from_json(const std::string& text);

struct TokenText {
  std::string id;
  std::uint32_t topic = 0;
  std::vector<std::uint32_t> tokens;
};

struct TripletIds {
  std::string query_id;
  std::string positive;
  std::vector<std::string> negatives;
};

struct SynthCorpus {
  SynthConfig config;
  std::vector<TokenText> docs;
  std::vector<TokenText> queries;        // evaluation queries
  std::vector<TokenText> train_queries;  // one per triplet
  Qrels qrels;
  std::vector<TripletIds> triplets;
};

/// Topic t owns vocabulary ids [t*P, (t+1)*P), P = vocab_size / num_topics.
/// Each document draws round(noise * len) tokens uniformly from the whole
/// vocabulary and the rest from its topic pool, then shuffles them. Queries
/// draw query_len tokens from one pool; every document of that topic is
/// judged relevant (grade 1). Training triplets pair a fresh query with a
/// random same-topic document and negatives from other topics.
SynthCorpus gen_corpus(const SynthConfig& config);

/// Maps each token id to a fixed unit vector: `dim` Gaussian coordinates from
/// CounterRng(seed, token_id), L2-normalized.
TokenEmbeddings toy_encode(std::span<const std::uint32_t> token_ids, std::size_t dim, std::uint64_t seed);

/// toy_encode followed by pad_or_truncate to m_tokens rows.
TokenEmbeddings encode_document(std::span<const std::uint32_t> token_ids, std::size_t m_tokens, std::size_t dim,
                                std::uint64_t seed);

/// Embeds the corpus' training triplets (documents padded to M).
std::vector<Triplet> embed_triplets(const SynthCorpus& corpus);

/// Writes config.json, docs.jsonl, queries.jsonl, train_queries.jsonl,
/// qrels.txt, triplets.tsv and the CBEM embedding files into `dir`. Returns
/// the written file names in a fixed order.
std::vector<std::string> write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

/// Reads back what write_corpus produced (token lists, qrels, triplets).
SynthCorpus read_corpus(const std::filesystem::path& dir);

std::vector<TokenText> read_token_jsonl(const std::filesystem::path& path);

}  // namespace constbert::synth
