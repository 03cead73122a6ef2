#include "constbert/synth.hpp"

#include <cmath>
#include <unordered_map>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "constbert/errors.hpp"
#include "constbert/index.hpp"
#include "constbert/pooling.hpp"
#include "constbert/rng.hpp"

namespace constbert::synth {
namespace {

using nlohmann::json;

// Stream ids for corpus generation; token vectors use the token id itself.
constexpr std::uint64_t kDocStream = 0xD0C5'0000'0000'0000ULL;
constexpr std::uint64_t kQueryStream = 0x0E1E'0000'0000'0000ULL;
constexpr std::uint64_t kTrainStream = 0x7A11'0000'0000'0000ULL;

std::uint32_t pool_token(CounterRng& rng, std::size_t topic, std::size_t pool) {
  return static_cast<std::uint32_t>(topic * pool + rng.below(pool));
}

json token_text_json(const TokenText& t) { return json{{"id", t.id}, {"topic", t.topic}, {"tokens", t.tokens}}; }

void write_jsonl(const std::filesystem::path& path, const std::vector<TokenText>& items) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& t : items) os << token_text_json(t).dump() << '\n';
  if (!os.flush()) throw IoError("failed writing " + path.string());
}

void write_embeddings(const std::filesystem::path& path, const std::vector<TokenText>& items, std::size_t rows,
                      const SynthConfig& c, bool pad) {
  CbemWriter w(path, static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(c.dim));
  for (const auto& t : items) {
    w.add(t.id, pad ? encode_document(t.tokens, rows, c.dim, c.seed) : toy_encode(t.tokens, c.dim, c.seed));
  }
  w.close();
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (num_topics == 0) fail("num_topics must be >= 1");
  if (vocab_size < num_topics * 10) fail("vocab_size must be >= 10 * num_topics");
  if (docs_per_topic == 0) fail("docs_per_topic must be >= 1");
  if (doc_len_min == 0 || doc_len_min > doc_len_max) fail("doc_len range must satisfy 1 <= min <= max");
  if (m_tokens == 0) fail("m_tokens must be >= 1");
  if (dim < 2) fail("dim must be >= 2");
  if (query_len == 0) fail("query_len must be >= 1");
  if (!(noise_fraction >= 0.0 && noise_fraction < 1.0)) {
    fail("noise_fraction must be in [0, 1), got " + std::to_string(noise_fraction));
  }
  if (num_triplets > 0 && negatives_per_triplet > 0 && num_topics < 2) {
    fail("negatives_per_triplet > 0 needs at least two topics");
  }
}

std::string to_json(const SynthConfig& c) {
  const json j{{"vocab_size", c.vocab_size},
               {"num_topics", c.num_topics},
               {"docs_per_topic", c.docs_per_topic},
               {"doc_len_min", c.doc_len_min},
               {"doc_len_max", c.doc_len_max},
               {"m_tokens", c.m_tokens},
               {"dim", c.dim},
               {"queries_per_topic", c.queries_per_topic},
               {"query_len", c.query_len},
               {"noise_fraction", c.noise_fraction},
               {"seed", c.seed},
               {"num_triplets", c.num_triplets},
               {"negatives_per_triplet", c.negatives_per_triplet}};
  return j.dump(2);
}

SynthConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config JSON must be an object");
  SynthConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "num_topics") c.num_topics = value.get<std::size_t>();
      else if (key == "docs_per_topic") c.docs_per_topic = value.get<std::size_t>();
      else if (key == "doc_len_min") c.doc_len_min = value.get<std::size_t>();
      else if (key == "doc_len_max") c.doc_len_max = value.get<std::size_t>();
      else if (key == "m_tokens") c.m_tokens = value.get<std::size_t>();
      else if (key == "dim") c.dim = value.get<std::size_t>();
      else if (key == "queries_per_topic") c.queries_per_topic = value.get<std::size_t>();
      else if (key == "query_len") c.query_len = value.get<std::size_t>();
      else if (key == "noise_fraction") c.noise_fraction = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "num_triplets") c.num_triplets = value.get<std::size_t>();
      else if (key == "negatives_per_triplet") c.negatives_per_triplet = value.get<std::size_t>();
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

SynthCorpus gen_corpus(const SynthConfig& config) {
  config.validate();
  SynthCorpus corpus;
  corpus.config = config;
  const std::size_t pool = config.pool_size();

  CounterRng doc_rng(config.seed, kDocStream);
  for (std::size_t t = 0; t < config.num_topics; ++t) {
    for (std::size_t i = 0; i < config.docs_per_topic; ++i) {
      TokenText doc{"d" + std::to_string(corpus.docs.size()), static_cast<std::uint32_t>(t), {}};
      const std::size_t len = config.doc_len_min + doc_rng.below(config.doc_len_max - config.doc_len_min + 1);
      const auto noisy = static_cast<std::size_t>(std::llround(config.noise_fraction * static_cast<double>(len)));
      for (std::size_t n = 0; n < len - noisy; ++n) doc.tokens.push_back(pool_token(doc_rng, t, pool));
      for (std::size_t n = 0; n < noisy; ++n) doc.tokens.push_back(static_cast<std::uint32_t>(doc_rng.below(config.vocab_size)));
      shuffle(doc.tokens, doc_rng);
      corpus.docs.push_back(std::move(doc));
    }
  }

  CounterRng query_rng(config.seed, kQueryStream);
  for (std::size_t t = 0; t < config.num_topics; ++t) {
    for (std::size_t i = 0; i < config.queries_per_topic; ++i) {
      TokenText q{"q" + std::to_string(corpus.queries.size()), static_cast<std::uint32_t>(t), {}};
      for (std::size_t n = 0; n < config.query_len; ++n) q.tokens.push_back(pool_token(query_rng, t, pool));
      for (std::size_t d = 0; d < config.docs_per_topic; ++d) {
        corpus.qrels.add(q.id, corpus.docs[t * config.docs_per_topic + d].id, 1);
      }
      corpus.queries.push_back(std::move(q));
    }
  }

  CounterRng train_rng(config.seed, kTrainStream);
  auto random_doc = [&](std::size_t topic) {
    return corpus.docs[topic * config.docs_per_topic + train_rng.below(config.docs_per_topic)].id;
  };
  for (std::size_t i = 0; i < config.num_triplets; ++i) {
    const std::size_t t = train_rng.below(config.num_topics);
    TokenText q{"t" + std::to_string(i), static_cast<std::uint32_t>(t), {}};
    for (std::size_t n = 0; n < config.query_len; ++n) q.tokens.push_back(pool_token(train_rng, t, pool));
    TripletIds trip{q.id, random_doc(t), {}};
    for (std::size_t n = 0; n < config.negatives_per_triplet; ++n) {
      const std::size_t other = (t + 1 + train_rng.below(config.num_topics - 1)) % config.num_topics;
      trip.negatives.push_back(random_doc(other));
    }
    corpus.train_queries.push_back(std::move(q));
    corpus.triplets.push_back(std::move(trip));
  }
  return corpus;
}

TokenEmbeddings toy_encode(std::span<const std::uint32_t> token_ids, std::size_t dim, std::uint64_t seed) {
  if (token_ids.empty()) throw ShapeError("toy_encode: no tokens");
  if (dim < 2) throw ShapeError("toy_encode: dim must be >= 2");
  std::vector<float> data;
  data.reserve(token_ids.size() * dim);
  std::vector<double> v(dim);
  for (const auto token : token_ids) {
    CounterRng rng(seed, token);
    double sq = 0.0;
    for (auto& x : v) {
      x = rng.gaussian();
      sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (const double x : v) data.push_back(static_cast<float>(x * inv));
  }
  return TokenEmbeddings(token_ids.size(), dim, std::move(data));
}

TokenEmbeddings encode_document(std::span<const std::uint32_t> token_ids, std::size_t m_tokens, std::size_t dim,
                                std::uint64_t seed) {
  return pad_or_truncate(toy_encode(token_ids, dim, seed), m_tokens);
}

std::vector<Triplet> embed_triplets(const SynthCorpus& corpus) {
  const auto& c = corpus.config;
  std::unordered_map<std::string, std::size_t> doc_pos;
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) doc_pos.emplace(corpus.docs[i].id, i);
  std::unordered_map<std::string, std::size_t> query_pos;
  for (std::size_t i = 0; i < corpus.train_queries.size(); ++i) query_pos.emplace(corpus.train_queries[i].id, i);

  auto doc = [&](const std::string& id) {
    const auto it = doc_pos.find(id);
    if (it == doc_pos.end()) throw LookupError("triplet references unknown document '" + id + "'");
    return encode_document(corpus.docs[it->second].tokens, c.m_tokens, c.dim, c.seed);
  };
  std::vector<Triplet> out;
  out.reserve(corpus.triplets.size());
  for (const auto& t : corpus.triplets) {
    const auto q = query_pos.find(t.query_id);
    if (q == query_pos.end()) throw LookupError("triplet references unknown query '" + t.query_id + "'");
    Triplet trip{toy_encode(corpus.train_queries[q->second].tokens, c.dim, c.seed), doc(t.positive), {}};
    for (const auto& n : t.negatives) trip.negatives.push_back(doc(n));
    out.push_back(std::move(trip));
  }
  return out;
}

std::vector<std::string> write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  std::filesystem::create_directories(dir);
  const auto& c = corpus.config;
  {
    std::ofstream os(dir / "config.json", std::ios::trunc);
    os << to_json(c) << '\n';
    if (!os) throw IoError("failed writing config.json");
  }
  write_jsonl(dir / "docs.jsonl", corpus.docs);
  write_jsonl(dir / "queries.jsonl", corpus.queries);
  write_jsonl(dir / "train_queries.jsonl", corpus.train_queries);
  write_qrels(dir / "qrels.txt", corpus.qrels);
  {
    std::ofstream os(dir / "triplets.tsv", std::ios::trunc);
    for (const auto& t : corpus.triplets) {
      os << t.query_id << '\t' << t.positive << '\t';
      for (std::size_t i = 0; i < t.negatives.size(); ++i) os << (i ? "," : "") << t.negatives[i];
      os << '\n';
    }
    if (!os) throw IoError("failed writing triplets.tsv");
  }
  write_embeddings(dir / "docs.cbem", corpus.docs, c.m_tokens, c, true);
  write_embeddings(dir / "queries.cbem", corpus.queries, c.query_len, c, false);
  std::vector<std::string> files = {"config.json",  "docs.jsonl",         "queries.jsonl", "train_queries.jsonl",
                                    "qrels.txt",    "triplets.tsv",       "docs.cbem",     "docs.cbem.ids.tsv",
                                    "queries.cbem", "queries.cbem.ids.tsv"};
  if (!corpus.train_queries.empty()) {
    write_embeddings(dir / "train_queries.cbem", corpus.train_queries, c.query_len, c, false);
    files.push_back("train_queries.cbem");
    files.push_back("train_queries.cbem.ids.tsv");
  }
  return files;
}

std::vector<TokenText> read_token_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<TokenText> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.value("topic", 0u), j.at("tokens").get<std::vector<std::uint32_t>>()});
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

SynthCorpus read_corpus(const std::filesystem::path& dir) {
  SynthCorpus corpus;
  {
    std::ifstream is(dir / "config.json");
    if (!is) throw IoError("cannot open " + (dir / "config.json").string());
    std::stringstream ss;
    ss << is.rdbuf();
    corpus.config = config_from_json(ss.str());
  }
  corpus.docs = read_token_jsonl(dir / "docs.jsonl");
  corpus.queries = read_token_jsonl(dir / "queries.jsonl");
  corpus.train_queries = read_token_jsonl(dir / "train_queries.jsonl");
  corpus.qrels = load_qrels(dir / "qrels.txt");
  std::ifstream is(dir / "triplets.tsv");
  if (!is) throw IoError("cannot open " + (dir / "triplets.tsv").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    TripletIds t;
    std::string negs;
    if (!std::getline(ls, t.query_id, '\t') || !std::getline(ls, t.positive, '\t')) {
      throw ParseError((dir / "triplets.tsv").string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    std::getline(ls, negs);
    std::istringstream ns(negs);
    std::string n;
    while (std::getline(ns, n, ',')) {
      if (!n.empty()) t.negatives.push_back(n);
    }
    corpus.triplets.push_back(std::move(t));
  }
  return corpus;
}

}  // namespace constbert::synth
