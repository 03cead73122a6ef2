#include <CLI11.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "acceptance.hpp"
#include "constbert/errors.hpp"
#include "constbert/eval.hpp"
#include "constbert/index.hpp"
#include "constbert/pooling.hpp"
#include "constbert/retrieval.hpp"
#include "constbert/synth.hpp"
#include "constbert/training.hpp"

namespace fs = std::filesystem;
using namespace constbert;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool quiet = false;
};

void info(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(is.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

void print_manifest(const fs::path& dir, const std::vector<std::string>& files) {
  std::cout << "manifest:\n";
  for (const auto& f : files) {
    const auto p = dir / f;
    std::cout << "  " << sha256_file(p) << "  " << std::setw(10) << fs::file_size(p) << "  " << f << '\n';
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config_path;
  synth::SynthConfig cfg;
  std::string out = "corpus";
};

int cmd_synth(const SynthArgs& a, const Globals& g) {
  synth::SynthConfig cfg = a.cfg;
  if (!a.config_path.empty()) {
    std::ifstream is(a.config_path);
    if (!is) throw ConfigError("cannot read --config " + a.config_path);
    std::stringstream ss;
    ss << is.rdbuf();
    cfg = synth::config_from_json(ss.str());
  }
  if (g.seed) cfg.seed = *g.seed;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    // Map field names back to flag spellings for the message.
    static const std::map<std::string, std::string> flags = {
        {"noise_fraction", "--noise"},       {"vocab_size", "--vocab"},       {"num_topics", "--topics"},
        {"docs_per_topic", "--docs-per-topic"}, {"doc_len", "--doc-len-min/--doc-len-max"}, {"m_tokens", "--M"},
        {"dim", "--k"},                       {"query_len", "--query-len"},    {"negatives_per_triplet", "--negatives"}};
    std::string msg = e.what();
    for (const auto& [field, flag] : flags) {
      if (msg.find(field) != std::string::npos) {
        msg = flag + ": " + msg;
        break;
      }
    }
    throw ConfigError(msg);
  }
  std::cout << "resolved synth config: " << synth::to_json(cfg) << '\n';
  info(g, "generating corpus");
  const auto corpus = synth::gen_corpus(cfg);
  const auto files = synth::write_corpus(a.out, corpus);
  std::cout << "wrote " << corpus.docs.size() << " docs, " << corpus.queries.size() << " queries, "
            << corpus.triplets.size() << " triplets to " << a.out << '\n';
  print_manifest(a.out, files);
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  std::size_t c = 16;
  std::optional<std::size_t> m;
  std::optional<std::size_t> k;
  TrainConfig cfg;
  std::string loss = "in_batch_softmax";
  std::string out = "weights.cbpw";
  std::string loss_csv;
};

int cmd_train(const TrainArgs& a, const Globals& g) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = synth::read_corpus(a.corpus);
  const auto& cc = corpus.config;
  if (a.m && *a.m != cc.m_tokens) {
    throw ConfigError("--M " + std::to_string(*a.m) + " does not match the corpus (M=" + std::to_string(cc.m_tokens) + ")");
  }
  if (a.k && *a.k != cc.dim) {
    throw ConfigError("--k " + std::to_string(*a.k) + " does not match the corpus (k=" + std::to_string(cc.dim) + ")");
  }
  if (a.c == 0 || a.c > cc.m_tokens) throw ConfigError("--C must be in [1, M]");
  TrainConfig cfg = a.cfg;
  cfg.loss = parse_train_loss(a.loss);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();

  const std::string csv = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  std::cout << "resolved train config: corpus=" << a.corpus << " M=" << cc.m_tokens << " C=" << a.c << " k=" << cc.dim
            << " epochs=" << cfg.epochs << " lr=" << cfg.learning_rate << " batch=" << cfg.batch_size
            << " loss=" << to_string(cfg.loss) << " margin=" << cfg.margin
            << " normalize=" << (cfg.normalize_pooled ? "true" : "false") << " seed=" << cfg.seed << " out=" << a.out
            << " loss_csv=" << csv << '\n';

  const auto triplets = synth::embed_triplets(corpus);
  info(g, "training on " + std::to_string(triplets.size()) + " triplets");
  const auto result = train_pool(triplets, a.c, cfg, [&](std::size_t e, double loss) {
    std::ostringstream ss;
    ss << "epoch " << e << " loss " << std::fixed << std::setprecision(6) << loss;
    info(g, ss.str());
  });
  save_weights(a.out, result.weights);
  std::ofstream os(csv);
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    char line[64];
    std::snprintf(line, sizeof line, "%zu,%.6f\n", e + 1, result.epoch_loss[e]);
    os << line;
  }
  if (!os.flush()) throw IoError("failed writing " + csv);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "wrote " << a.out << " and " << csv << " (" << std::fixed << std::setprecision(1) << secs << " s)\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct IndexArgs {
  std::string embeddings;
  std::string weights;
  bool token_level = false;
  bool normalize = false;
  std::string dtype = "f32";
  std::uint32_t alignment = 4096;
  std::string out = "index.cbix";
};

int cmd_index(const IndexArgs& a, const Globals& g) {
  if (a.token_level == !a.weights.empty()) throw ConfigError("give exactly one of --weights or --token-level");
  const DType dtype = parse_dtype(a.dtype);
  std::optional<ProjectionWeights> w;
  if (!a.weights.empty()) w = load_weights(a.weights);

  CbemReader reader(a.embeddings);
  const std::size_t m = reader.rows(), k = reader.dim();
  if (w && (w->m_tokens() != m || w->dim() != k)) {
    throw ConfigError("weights expect M=" + std::to_string(w->m_tokens()) + ", k=" + std::to_string(w->dim()) +
                      " but the embeddings have M=" + std::to_string(m) + ", k=" + std::to_string(k));
  }
  const std::size_t c = w ? w->c_vectors() : m;
  const std::size_t rs = record_size(c, k, dtype, a.alignment);
  std::cout << "resolved index config: embeddings=" << a.embeddings << " weights=" << (w ? a.weights : "(token-level)")
            << " M=" << m << " C=" << c << " k=" << k << " dtype=" << to_string(dtype) << " alignment=" << a.alignment
            << " normalize=" << (a.normalize ? "true" : "false") << " out=" << a.out << '\n';

  IndexWriter writer(a.out, {static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(k), dtype, a.alignment, a.normalize});
  while (auto item = reader.next()) {
    auto emb = w ? pool(item->second, *w, a.normalize) : std::move(item->second);
    if (!w && a.normalize) emb.normalize_rows();
    writer.add(item->first, emb);
  }
  const auto header = writer.finish();
  info(g, "indexed " + std::to_string(header.num_docs) + " documents");

  const std::size_t expected = kIndexHeaderBytes + header.num_docs * rs;
  const std::size_t actual = fs::file_size(a.out);
  std::cout << "index size: " << actual << " bytes = 4096 + " << header.num_docs << " x " << rs
            << (actual == expected ? " (verified)" : " (MISMATCH)") << '\n';
  if (actual != expected) return kRuntime;
  const double ratio = double(payload_bytes(m, k, dtype)) / double(payload_bytes(c, k, dtype));
  std::cout << "token-level / this index payload ratio: " << std::fixed << std::setprecision(2) << ratio << " (M=" << m
            << ", C=" << c << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct FirstStageArgs {
  std::string corpus;
  std::size_t topk = 200;
  std::string out = "firststage.run";
  std::string tag = "overlap";
};

int cmd_firststage(const FirstStageArgs& a, const Globals& g) {
  std::cout << "resolved firststage config: corpus=" << a.corpus << " topk=" << a.topk << " out=" << a.out
            << " tag=" << a.tag << '\n';
  const auto docs = synth::read_token_jsonl(fs::path(a.corpus) / "docs.jsonl");
  const auto queries = synth::read_token_jsonl(fs::path(a.corpus) / "queries.jsonl");
  std::vector<std::vector<std::uint32_t>> tokens;
  std::vector<std::string> ids;
  for (const auto& d : docs) {
    tokens.push_back(d.tokens);
    ids.push_back(d.id);
  }
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < ids.size(); ++i) position.emplace(ids[i], i);
  const OverlapRetriever retriever(tokens, ids);
  Run run;
  std::size_t empty = 0;
  for (const auto& q : queries) {
    const auto res = retriever.retrieve(q.id, q.tokens, a.topk);
    empty += res.no_overlap;
    const auto scores = retriever.scores(q.tokens);
    for (const auto& id : res.candidates.doc_ids) run.append(q.id, id, scores[position.at(id)]);
  }
  write_run(a.out, run, a.tag);
  info(g, std::to_string(queries.size()) + " queries, " + std::to_string(empty) + " without any shared token");
  std::cout << "wrote " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct SearchArgs {
  std::string index;
  std::string queries;
  std::string candidates;
  std::size_t topk = 10;
  std::string out = "search.run";
  std::string tag = "constbert";
  std::string latency_out;
  bool lenient = false;
};

std::map<std::string, CandidateList> load_candidates(const std::string& path) {
  const auto run = load_run(path);
  std::map<std::string, CandidateList> out;
  for (const auto& [qid, entries] : run.queries) {
    auto& c = out[qid];
    c.query_id = qid;
    for (const auto& e : entries) c.doc_ids.push_back(e.doc_id);
  }
  return out;
}

int cmd_search(const SearchArgs& a, const Globals& g, bool rerank_mode) {
  const auto index = open_index(a.index);
  std::cout << "resolved " << (rerank_mode ? "rerank" : "search") << " config: index=" << a.index
            << " queries=" << a.queries << (rerank_mode ? " candidates=" + a.candidates : "") << " topk=" << a.topk
            << " out=" << a.out << " tag=" << a.tag << " threads=" << (rerank_mode ? 1 : g.threads) << '\n';
  std::map<std::string, CandidateList> cands;
  if (rerank_mode) cands = load_candidates(a.candidates);

  Run run;
  std::vector<Millis> latencies;
  CbemReader reader(a.queries);
  while (auto q = reader.next()) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ScoredDoc> hits;
    if (rerank_mode) {
      const auto it = cands.find(q->first);
      if (it != cands.end()) hits = rerank(index, q->second, it->second, a.topk, a.lenient);
    } else {
      hits = search_exact(index, q->second, a.topk, g.threads);
    }
    latencies.push_back(std::chrono::steady_clock::now() - t0);
    for (const auto& h : hits) run.append(q->first, h.external_id, h.score);
  }
  write_run(a.out, run, a.tag);
  const auto rep = mean_response_time(latencies);
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(3) << "latency: MRT " << rep.mean_ms << " ms, p50 " << rep.p50_ms << " ms, p95 "
     << rep.p95_ms << " ms, p99 " << rep.p99_ms << " ms, queries " << rep.count << '\n';
  std::cout << ss.str();
  if (!a.latency_out.empty()) {
    std::ofstream os(a.latency_out);
    os << "metric,value\n" << std::fixed << std::setprecision(6) << "mrt_ms," << rep.mean_ms << "\np50_ms," << rep.p50_ms
       << "\np95_ms," << rep.p95_ms << "\np99_ms," << rep.p99_ms << "\nqueries," << rep.count << '\n';
  }
  info(g, "wrote " + a.out);
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string run;
  std::string qrels;
  std::string metrics = "mrr@10,ndcg@10,recall@50,recall@200,recall@1000";
  std::string csv;
};

int cmd_eval(const EvalArgs& a, const Globals& g) {
  const auto metrics = parse_metric_list(a.metrics);
  std::cout << "resolved eval config: run=" << a.run << " qrels=" << a.qrels << " metrics=" << a.metrics
            << (a.csv.empty() ? "" : " csv=" + a.csv) << '\n';
  const auto run = load_run(a.run);
  const auto qrels = load_qrels(a.qrels);
  std::ostringstream table, csv;
  csv << "metric,value\n";
  std::size_t excluded = 0;
  for (const auto& m : metrics) {
    const auto r = evaluate(m, run, qrels);
    excluded = r.excluded.size();
    char line[96];
    std::snprintf(line, sizeof line, "%-14s %.6f\n", m.name().c_str(), r.value);
    table << line;
    std::snprintf(line, sizeof line, "%s,%.6f\n", m.name().c_str(), r.value);
    csv << line;
  }
  std::cout << table.str();
  if (excluded) info(g, std::to_string(excluded) + " run queries have no judgments and were excluded");
  if (!a.csv.empty()) {
    std::ofstream os(a.csv);
    os << csv.str();
    if (!os.flush()) throw IoError("failed writing " + a.csv);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct ReproArgs {
  std::string out = "repro";
  std::vector<int> only;
};

int cmd_repro(const ReproArgs& a, const Globals& g) {
  std::cout << "resolved repro config: out=" << a.out << " criteria=" << (a.only.empty() ? "all" : "subset") << '\n';
  acceptance::Options opt;
  opt.work_dir = fs::path(a.out) / "work";
  opt.only = a.only;
  opt.log = g.quiet ? nullptr : &std::cerr;
  const auto results = acceptance::run(opt);
  const auto report = acceptance::format_report(results);
  std::cout << report;
  std::ofstream(fs::path(a.out) / "acceptance_report.txt") << report;
  fs::remove_all(opt.work_dir);
  for (const auto& r : results) {
    if (!r.passed) return kRuntime;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"constbert: constant-space multi-vector retrieval toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for generation and training");
  app.add_option("--threads", g.threads, "Document-scan threads for search")
      ->envname("CONSTBERT_THREADS")
      ->check(CLI::Range(1, 1024));
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth_cmd->add_option("--config", sa.config_path, "JSON config (replaces the inline flags)")->check(CLI::ExistingFile);
  synth_cmd->add_option("--vocab", sa.cfg.vocab_size, "Vocabulary size")->capture_default_str();
  synth_cmd->add_option("--topics", sa.cfg.num_topics, "Number of topics")->capture_default_str();
  synth_cmd->add_option("--docs-per-topic", sa.cfg.docs_per_topic)->capture_default_str();
  synth_cmd->add_option("--doc-len-min", sa.cfg.doc_len_min)->capture_default_str();
  synth_cmd->add_option("--doc-len-max", sa.cfg.doc_len_max)->capture_default_str();
  synth_cmd->add_option("--M", sa.cfg.m_tokens, "Token rows per document")->capture_default_str();
  synth_cmd->add_option("--k", sa.cfg.dim, "Embedding dimension")->capture_default_str();
  synth_cmd->add_option("--queries-per-topic", sa.cfg.queries_per_topic)->capture_default_str();
  synth_cmd->add_option("--query-len", sa.cfg.query_len)->capture_default_str();
  synth_cmd->add_option("--noise", sa.cfg.noise_fraction, "Share of off-topic tokens, in [0,1)")->capture_default_str();
  synth_cmd->add_option("--triplets", sa.cfg.num_triplets, "Training triplets")->capture_default_str();
  synth_cmd->add_option("--negatives", sa.cfg.negatives_per_triplet, "Negatives per triplet")->capture_default_str();
  synth_cmd->add_option("--out", sa.out, "Output directory")->capture_default_str();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Learn the pooling projection");
  train_cmd->add_option("--corpus", ta.corpus, "Corpus directory from synth")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--C", ta.c, "Pooled vectors per document")->capture_default_str();
  train_cmd->add_option("--M", ta.m, "Expected token rows (must match the corpus)");
  train_cmd->add_option("--k", ta.k, "Expected dimension (must match the corpus)");
  train_cmd->add_option("--epochs", ta.cfg.epochs)->capture_default_str();
  train_cmd->add_option("--lr", ta.cfg.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", ta.cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--loss", ta.loss, "in_batch_softmax or margin_triplet")->capture_default_str();
  train_cmd->add_option("--margin", ta.cfg.margin)->capture_default_str();
  train_cmd->add_flag("--normalize", ta.cfg.normalize_pooled, "Unit-normalize pooled rows");
  train_cmd->add_option("--out", ta.out)->capture_default_str();
  train_cmd->add_option("--loss-csv", ta.loss_csv, "Loss trace (default: <out>.loss.csv)");

  IndexArgs ia;
  auto* index_cmd = app.add_subcommand("index", "Build a fixed-record index");
  index_cmd->add_option("--embeddings", ia.embeddings, "Token embeddings (CBEM)")->required()->check(CLI::ExistingFile);
  index_cmd->add_option("--weights", ia.weights, "Pooling weights (CBPW)")->check(CLI::ExistingFile);
  index_cmd->add_flag("--token-level", ia.token_level, "Store the token embeddings without pooling");
  index_cmd->add_flag("--normalize", ia.normalize, "Unit-normalize stored rows");
  index_cmd->add_option("--dtype", ia.dtype, "f32, f16 or i8")->capture_default_str();
  index_cmd->add_option("--alignment", ia.alignment)->capture_default_str();
  index_cmd->add_option("--out", ia.out)->capture_default_str();

  FirstStageArgs fa;
  auto* fs_cmd = app.add_subcommand("firststage", "Lexical overlap candidates");
  fs_cmd->add_option("--corpus", fa.corpus)->required()->check(CLI::ExistingDirectory);
  fs_cmd->add_option("--topk", fa.topk)->capture_default_str();
  fs_cmd->add_option("--out", fa.out)->capture_default_str();
  fs_cmd->add_option("--tag", fa.tag)->capture_default_str();

  SearchArgs search_args, rerank_args;
  auto add_search_opts = [](CLI::App* cmd, SearchArgs& s) {
    cmd->add_option("--index", s.index)->required()->check(CLI::ExistingFile);
    cmd->add_option("--queries", s.queries, "Query embeddings (CBEM)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--topk", s.topk)->capture_default_str();
    cmd->add_option("--out", s.out)->capture_default_str();
    cmd->add_option("--tag", s.tag)->capture_default_str();
    cmd->add_option("--latency-csv", s.latency_out, "Also write the latency report as CSV");
  };
  auto* search_cmd = app.add_subcommand("search", "Exact MaxSim search over the whole index");
  add_search_opts(search_cmd, search_args);
  auto* rerank_cmd = app.add_subcommand("rerank", "Rescore a candidate run");
  add_search_opts(rerank_cmd, rerank_args);
  rerank_cmd->add_option("--candidates", rerank_args.candidates, "Candidate run (TREC)")->required()->check(CLI::ExistingFile);
  rerank_cmd->add_flag("--lenient", rerank_args.lenient, "Skip candidate ids missing from the index");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Score a run against qrels");
  eval_cmd->add_option("--run", ea.run)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--qrels", ea.qrels)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--metrics", ea.metrics)->capture_default_str();
  eval_cmd->add_option("--csv", ea.csv, "Write metric,value CSV here");

  ReproArgs ra;
  auto* repro_cmd = app.add_subcommand("repro", "Run the acceptance suite and write its report");
  repro_cmd->add_option("--out", ra.out)->capture_default_str();
  repro_cmd->add_option("--only", ra.only, "Criterion numbers to run")->check(CLI::Range(1, 9));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(sa, g);
    if (*train_cmd) return cmd_train(ta, g);
    if (*index_cmd) return cmd_index(ia, g);
    if (*fs_cmd) return cmd_firststage(fa, g);
    if (*search_cmd) return cmd_search(search_args, g, false);
    if (*rerank_cmd) return cmd_search(rerank_args, g, true);
    if (*eval_cmd) return cmd_eval(ea, g);
    if (*repro_cmd) return cmd_repro(ra, g);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
