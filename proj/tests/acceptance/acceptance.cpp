#include "acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <set>

#include "constbert/errors.hpp"
#include "constbert/eval.hpp"
#include "constbert/index.hpp"
#include "constbert/pooling.hpp"
#include "constbert/retrieval.hpp"
#include "constbert/scoring.hpp"
#include "constbert/synth.hpp"
#include "constbert/training.hpp"
#include "eval_oracle.hpp"
#include "oracles.hpp"

namespace constbert::acceptance {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, ...) {
  va_list args;
  va_start(args, f);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

struct Ctx {
  fs::path dir;
  std::ostream* log;

  void note(const std::string& s) const {
    if (log) *log << "  .. " << s << std::endl;
  }
};

// ---------------------------------------------------------------------------
// 1. Scoring oracle equivalence

CriterionResult scoring_oracle(const Ctx&) {
  CriterionResult r{1, "scoring oracle equivalence", false, {}, 0.0};
  const auto t0 = Clock::now();
  std::mt19937_64 gen(1001);
  double worst = 0.0, worst_f64 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + gen() % 32, m = 1 + gen() % 180, k = 1 + gen() % 128;
    const auto q = oracle::random_rows(gen, n, k);
    const auto d = oracle::random_rows(gen, m, k);
    const double got = maxsim(oracle::to_matrix(q), oracle::to_matrix(d)).value;
    worst = std::max(worst, std::abs(got - oracle::maxsim_f32(q, d)));
    worst_f64 = std::max(worst_f64, std::abs(got - oracle::maxsim_f64(q, d)) / std::max(1.0, std::abs(got)));
  }
  r.seconds = seconds_since(t0);
  r.passed = worst < 1e-6 && r.seconds < 5.0;
  r.details.push_back(fmt("1000 instances (n<=32, m<=180, k<=128): max |delta| = %.3g (required < 1e-6)", worst));
  r.details.push_back(fmt("runtime %.2f s (required < 5 s)", r.seconds));
  r.details.push_back(fmt("for reference, max relative gap to an all-double loop = %.3g", worst_f64));
  return r;
}

// ---------------------------------------------------------------------------
// 2. Identity pooling

CriterionResult identity_pooling(const Ctx&) {
  CriterionResult r{2, "identity-pooling equivalence", false, {}, 0.0};
  const auto t0 = Clock::now();
  std::mt19937_64 gen(2002);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t m = 1 + gen() % 16, k = 1 + gen() % 32, n = 1 + gen() % 16;
    const auto q = oracle::to_matrix(oracle::random_rows(gen, n, k));
    const auto d = oracle::to_matrix(oracle::random_rows(gen, m, k));
    const auto w = ProjectionWeights::identity(m, k);
    worst = std::max(worst, std::abs(score_pooled(q, d, w).value - maxsim(q, d).value));
  }
  r.seconds = seconds_since(t0);
  r.passed = worst < 1e-6;
  r.details.push_back(fmt("200 instances with C=M, W=I: max |score_pooled - maxsim| = %.3g (required < 1e-6)", worst));
  return r;
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness

CriterionResult gradient(const Ctx&) {
  CriterionResult r{3, "gradient correctness", false, {}, 0.0};
  const auto t0 = Clock::now();
  std::mt19937_64 gen(3003);
  double worst = 0.0;
  int checked = 0, skipped = 0;
  while (checked < 50) {
    const std::size_t m = 1 + gen() % 6, k = 1 + gen() % 4;
    const std::size_t c = 1 + gen() % std::min<std::size_t>(3, m), n = 1 + gen() % 4;
    const auto q = oracle::random_rows(gen, n, k);
    const auto d = oracle::random_rows(gen, m, k);
    const auto w = init_weights(m, c, k, gen());
    const auto dense = oracle::dense_from(w);
    // Tie-free: the best pooled row must win by more than the probe step can move it.
    if (oracle::argmax_margin(q, d, dense, false) < 1e-2) {
      ++skipped;
      continue;
    }
    const auto fd = oracle::finite_difference_grad(q, d, dense, false, 1e-3);
    const auto g = grad_score_wrt_w(oracle::to_matrix(q), oracle::to_matrix(d), w);
    for (std::size_t i = 0; i < fd.w.size(); ++i) {
      const double a = g.data()[i], f = fd.w[i];
      const double denom = std::max(std::abs(a), std::abs(f));
      if (denom == 0.0) continue;
      worst = std::max(worst, std::abs(a - f) / denom);
    }
    ++checked;
  }
  r.seconds = seconds_since(t0);
  r.passed = worst < 1e-4;
  r.details.push_back(fmt("50 tie-free instances (M<=6, C<=3, k<=4, h=1e-3): max relative error = %.3g (required < 1e-4)", worst));
  r.details.push_back(fmt("%d candidate instances skipped for near-ties (argmax margin < 1e-2)", skipped));
  return r;
}

// ---------------------------------------------------------------------------
// 4. Constant space, factor M/C

CriterionResult constant_space(const Ctx& ctx) {
  CriterionResult r{4, "constant-space records, factor M/C", false, {}, 0.0};
  const auto t0 = Clock::now();
  synth::SynthConfig cfg;
  cfg.num_topics = 20;
  cfg.docs_per_topic = 25;
  cfg.m_tokens = 64;
  cfg.dim = 16;
  cfg.doc_len_min = 16;
  cfg.doc_len_max = 64;
  cfg.num_triplets = 0;
  const auto corpus = synth::gen_corpus(cfg);
  const auto w = init_weights(64, 32, 16, 4);

  IndexWriter token_w(ctx.dir / "c4_token.cbix", {64, 16, DType::F32, 4096, false});
  IndexWriter pooled_w(ctx.dir / "c4_pooled.cbix", {32, 16, DType::F32, 4096, false});
  for (const auto& d : corpus.docs) {
    const auto emb = synth::encode_document(d.tokens, 64, 16, cfg.seed);
    token_w.add(d.id, emb);
    pooled_w.add(d.id, pool(emb, w));
  }
  token_w.finish();
  pooled_w.finish();
  const auto token = open_index(ctx.dir / "c4_token.cbix");
  const auto pooled = open_index(ctx.dir / "c4_pooled.cbix");

  const std::size_t n = token.num_docs();
  const std::size_t token_payload = n * payload_bytes(64, 16, DType::F32);
  const std::size_t pooled_payload = n * payload_bytes(32, 16, DType::F32);
  const double ratio = double(token_payload) / double(pooled_payload);

  bool aligned = true;
  bool constant = true;
  for (const Index* idx : {&token, &pooled}) {
    for (std::uint64_t i = 0; i < idx->num_docs(); ++i) aligned = aligned && idx->record_offset(i) % 4096 == 0;
    constant = constant && idx->file_bytes() == 4096 + idx->num_docs() * idx->record_bytes();
    for (std::uint64_t i = 0; i < idx->num_docs(); i += 97) constant = constant && idx->get_doc(i).rows() == idx->c_vectors();
  }
  r.seconds = seconds_since(t0);
  r.passed = ratio == 2.0 && aligned && constant && n == 500;
  r.details.push_back(fmt("%zu documents, M=64, k=16, f32, alignment 4096", n));
  r.details.push_back(fmt("payload bytes: token-level %zu, pooled C=32 %zu, ratio %.3f (required 2.000)", token_payload,
                          pooled_payload, ratio));
  r.details.push_back(fmt("every record offset divisible by 4096: %s; file = header + n * record: %s",
                          aligned ? "yes" : "NO", constant ? "yes" : "NO"));
  r.details.push_back(fmt("file bytes: token-level %zu, pooled %zu (records padded to %zu and %zu bytes)",
                          token.file_bytes(), pooled.file_bytes(), token.record_bytes(), pooled.record_bytes()));
  return r;
}

// ---------------------------------------------------------------------------
// Shared desk-scale task for criteria 5 and 6.

struct DeskTask {
  synth::SynthCorpus corpus;
  std::vector<TokenEmbeddings> docs;
  std::vector<TokenEmbeddings> queries;
  std::vector<Triplet> triplets;
  TrainConfig train;
  double setup_seconds = 0.0;
};

synth::SynthConfig desk_config() {
  synth::SynthConfig cfg;  // 20 topics x 500 docs, M=32, k=16, noise 0.2, seed 3
  cfg.num_triplets = 50000;
  cfg.negatives_per_triplet = 1;
  return cfg;
}

TrainConfig desk_train_config() {
  TrainConfig t;
  t.epochs = 2;
  t.learning_rate = 0.2;
  t.batch_size = 16;
  t.normalize_pooled = true;
  t.loss = TrainLoss::InBatchSoftmax;
  t.seed = 3;
  return t;
}

const DeskTask& desk_task() {
  static const DeskTask task = [] {
    const auto t0 = Clock::now();
    DeskTask t;
    t.corpus = synth::gen_corpus(desk_config());
    const auto& cfg = t.corpus.config;
    for (const auto& d : t.corpus.docs) t.docs.push_back(synth::encode_document(d.tokens, cfg.m_tokens, cfg.dim, cfg.seed));
    for (const auto& q : t.corpus.queries) t.queries.push_back(synth::toy_encode(q.tokens, cfg.dim, cfg.seed));
    t.triplets = synth::embed_triplets(t.corpus);
    t.train = desk_train_config();
    t.setup_seconds = seconds_since(t0);
    return t;
  }();
  return task;
}

Index build_desk_index(const fs::path& path, const DeskTask& task, const ProjectionWeights* w, bool normalize) {
  const std::size_t rows = w ? w->c_vectors() : task.corpus.config.m_tokens;
  IndexWriter writer(path, {static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(task.corpus.config.dim),
                            DType::F32, 4096, normalize});
  for (std::size_t i = 0; i < task.docs.size(); ++i) {
    writer.add(task.corpus.docs[i].id, w ? pool(task.docs[i], *w, normalize) : task.docs[i]);
  }
  writer.finish();
  return open_index(path);
}

double desk_mrr(const Index& index, const DeskTask& task) {
  Run run;
  for (std::size_t i = 0; i < task.queries.size(); ++i) {
    for (const auto& hit : search_exact(index, task.queries[i], 10)) run.append(task.corpus.queries[i].id, hit.external_id, hit.score);
  }
  return mrr_at_k(run, task.corpus.qrels, 10).value;
}

std::optional<ProjectionWeights>& trained_c16() {
  static std::optional<ProjectionWeights> w;
  return w;
}

const ProjectionWeights& c16_weights(const Ctx& ctx) {
  auto& w = trained_c16();
  if (!w) {
    ctx.note("training C=16 for the rerank check");
    w = train_pool(desk_task().triplets, 16, desk_task().train).weights;
  }
  return *w;
}

// ---------------------------------------------------------------------------
// 5. Desk-scale effectiveness retention

CriterionResult effectiveness(const Ctx& ctx) {
  CriterionResult r{5, "desk-scale effectiveness retention", false, {}, 0.0};
  const auto t0 = Clock::now();
  const auto& task = desk_task();
  ctx.note(fmt("corpus ready: %zu docs, %zu queries, %zu triplets", task.docs.size(), task.queries.size(), task.triplets.size()));

  const double token_mrr = desk_mrr(build_desk_index(ctx.dir / "c5_token.cbix", task, nullptr, false), task);
  ctx.note(fmt("token-level MRR@10 %.4f", token_mrr));
  std::map<std::size_t, double> mrr;
  for (std::size_t c : {4, 8, 16}) {
    auto result = train_pool(task.triplets, c, task.train);
    const auto index = build_desk_index(ctx.dir / fmt("c5_pooled_%zu.cbix", c), task, &result.weights, task.train.normalize_pooled);
    mrr[c] = desk_mrr(index, task);
    ctx.note(fmt("C=%zu MRR@10 %.4f (final epoch loss %.4f)", c, mrr[c], result.epoch_loss.back()));
    if (c == 16) trained_c16() = std::move(result.weights);
  }
  r.seconds = seconds_since(t0);

  const bool sanity = token_mrr >= 0.95;
  const bool trend = mrr[4] <= mrr[8] + 0.02 && mrr[8] + 0.02 <= mrr[16] + 0.04;
  const bool retained = mrr[16] >= 0.90 * token_mrr;
  const bool fast = r.seconds < 180.0;
  r.passed = sanity && trend && retained && fast;
  const auto& t = task.train;
  r.details.push_back(fmt("task: 20 topics x 500 docs, M=32, k=16, noise 0.2, seed 3; %zu training triplets",
                          task.triplets.size()));
  r.details.push_back(fmt("training: %s, lr %.2f, %zu epochs, batch %zu, unit-norm pooled rows",
                          to_string(t.loss).c_str(), t.learning_rate, t.epochs, t.batch_size));
  r.details.push_back(fmt("token-level MRR@10 = %.4f (required >= 0.95)", token_mrr));
  r.details.push_back(fmt("pooled MRR@10: C=4 %.4f, C=8 %.4f, C=16 %.4f", mrr[4], mrr[8], mrr[16]));
  r.details.push_back(fmt("trend C4 <= C8 + 0.02 <= C16 + 0.04: %s", trend ? "holds" : "VIOLATED"));
  r.details.push_back(fmt("retention C=16 / token-level = %.3f (required >= 0.90)", mrr[16] / token_mrr));
  r.details.push_back(fmt("runtime %.1f s single-threaded (required < 180 s)", r.seconds));
  return r;
}

// ---------------------------------------------------------------------------
// 6. Rerank consistency

CriterionResult rerank_consistency(const Ctx& ctx) {
  CriterionResult r{6, "rerank consistency", false, {}, 0.0};
  const auto t0 = Clock::now();
  const auto& task = desk_task();

  std::vector<std::vector<std::uint32_t>> doc_tokens;
  std::vector<std::string> doc_ids;
  for (const auto& d : task.corpus.docs) {
    doc_tokens.push_back(d.tokens);
    doc_ids.push_back(d.id);
  }
  const OverlapRetriever first_stage(doc_tokens, doc_ids);
  std::vector<CandidateList> cands;
  for (const auto& q : task.corpus.queries) cands.push_back(first_stage.retrieve(q.id, q.tokens, 200).candidates);

  // Returns (contained, agreeing) query counts for one index.
  auto check = [&](const Index& index) {
    std::size_t contained = 0, agree = 0;
    for (std::size_t i = 0; i < task.queries.size(); ++i) {
      const auto exact = search_exact(index, task.queries[i], 10);
      const std::set<std::string> ids(cands[i].doc_ids.begin(), cands[i].doc_ids.end());
      if (!std::all_of(exact.begin(), exact.end(), [&](const ScoredDoc& s) { return ids.contains(s.external_id); })) continue;
      ++contained;
      agree += rerank(index, task.queries[i], cands[i], 10) == exact;
    }
    return std::pair{contained, agree};
  };

  const auto& w = c16_weights(ctx);
  const auto [tc, ta] = check(build_desk_index(ctx.dir / "c6_token.cbix", task, nullptr, false));
  const auto [pc, pa] = check(build_desk_index(ctx.dir / "c6_pooled.cbix", task, &w, task.train.normalize_pooled));
  r.seconds = seconds_since(t0);
  // A check that never fires proves nothing, so at least one query must be contained.
  r.passed = ta == tc && pa == pc && tc + pc > 0;
  const double n = double(task.queries.size());
  r.details.push_back(fmt("overlap first stage top-200 over %zu docs, %zu queries", task.docs.size(), task.queries.size()));
  r.details.push_back(fmt("token-level index: containment %zu/%zu = %.3f; rerank == search_exact on %zu of %zu", tc,
                          task.queries.size(), tc / n, ta, tc));
  r.details.push_back(fmt("pooled C=16 index: containment %zu/%zu = %.3f; rerank == search_exact on %zu of %zu", pc,
                          task.queries.size(), pc / n, pa, pc));
  return r;
}

// ---------------------------------------------------------------------------
// 7. Metrics oracle

CriterionResult metrics_oracle(const Ctx& ctx) {
  CriterionResult r{7, "metrics oracle", false, {}, 0.0};
  const auto t0 = Clock::now();

  // Three queries: first relevant at rank 1, rank 4, and absent.
  std::ofstream(ctx.dir / "c7_mrr.qrels") << "a 0 a1 1\nb 0 b4 1\nc 0 c99 1\n";
  {
    std::ofstream run(ctx.dir / "c7_mrr.run");
    for (const char* q : {"a", "b", "c"}) {
      for (int i = 1; i <= 10; ++i) run << q << " Q0 " << q << i << ' ' << i << ' ' << 20 - i << ".000000 fx\n";
    }
  }
  const double mrr = mrr_at_k(load_run(ctx.dir / "c7_mrr.run"), load_qrels(ctx.dir / "c7_mrr.qrels"), 10).value;
  const bool mrr_ok = std::round(mrr * 1e6) / 1e6 == 0.416667;

  // Worked example: ranked grades [3, 0, 1].
  std::ofstream(ctx.dir / "c7_ndcg.qrels") << "q 0 x 3\nq 0 y 0\nq 0 z 1\n";
  std::ofstream(ctx.dir / "c7_ndcg.run") << "q Q0 x 1 3.0 fx\nq Q0 y 2 2.0 fx\nq Q0 z 3 1.0 fx\n";
  const double ndcg = ndcg_at_k(load_run(ctx.dir / "c7_ndcg.run"), load_qrels(ctx.dir / "c7_ndcg.qrels"), 10).value;
  const double hand = 7.5 / (7.0 + 1.0 / std::log2(3.0));
  const bool ndcg_ok = std::abs(ndcg - 0.982841) <= 1e-6;

  // Two of four relevant documents inside the top 50.
  std::ofstream(ctx.dir / "c7_recall.qrels") << "q 0 r5 1\nq 0 r40 2\nq 0 r70 1\nq 0 gone 1\n";
  {
    std::ofstream run(ctx.dir / "c7_recall.run");
    for (int i = 1; i <= 100; ++i) run << "q Q0 r" << i << ' ' << i << ' ' << 200 - i << ".000000 fx\n";
  }
  const double recall = recall_at_k(load_run(ctx.dir / "c7_recall.run"), load_qrels(ctx.dir / "c7_recall.qrels"), 50).value;
  const bool recall_ok = recall == 0.5;

  // 50 judged queries plus two unjudged ones.
  const auto qp = ctx.dir / "c7_fx.qrels", rp = ctx.dir / "c7_fx.run";
  oracle::write_fixture(qp.string(), rp.string(), 7007);
  const auto tables = oracle::read_trec(qp.string(), rp.string());
  const auto run = load_run(rp);
  const auto qrels = load_qrels(qp);
  double fx_worst = 0.0;
  fx_worst = std::max(fx_worst, std::abs(mrr_at_k(run, qrels, 10).value - oracle::metric(tables, oracle::Which::Mrr, 10)));
  fx_worst = std::max(fx_worst, std::abs(ndcg_at_k(run, qrels, 10).value - oracle::metric(tables, oracle::Which::Ndcg, 10)));
  for (std::size_t k : {50, 200, 1000}) {
    fx_worst = std::max(fx_worst, std::abs(recall_at_k(run, qrels, k).value - oracle::metric(tables, oracle::Which::Recall, k)));
  }
  const bool fx_ok = fx_worst <= 1e-6;

  r.seconds = seconds_since(t0);
  r.passed = mrr_ok && ndcg_ok && recall_ok && fx_ok;
  r.details.push_back(fmt("%s MRR@10 on the 3-query fixture = %.6f (required 0.416667)", mrr_ok ? "ok  " : "FAIL", mrr));
  r.details.push_back(fmt("%s nDCG@10 on grades [3,0,1] = %.9f (required 0.982841 +/- 1e-6)", ndcg_ok ? "ok  " : "FAIL", ndcg));
  if (!ndcg_ok) {
    r.details.push_back(fmt("     hand arithmetic 7.5 / (7 + 1/log2 3) = 7.5 / %.6f = %.9f; the pinned value is off by %.2g",
                            7.0 + 1.0 / std::log2(3.0), hand, std::abs(hand - 0.982841)));
  }
  r.details.push_back(fmt("%s Recall@50 with 2 of 4 relevant retrieved = %.6f (required 0.5)", recall_ok ? "ok  " : "FAIL", recall));
  r.details.push_back(fmt("%s 50-query fixture vs independent recomputation: max |delta| = %.3g (required <= 1e-6)",
                          fx_ok ? "ok  " : "FAIL", fx_worst));
  return r;
}

// ---------------------------------------------------------------------------
// 8. Persistence round-trips

CriterionResult persistence(const Ctx& ctx) {
  CriterionResult r{8, "persistence round-trips", false, {}, 0.0};
  const auto t0 = Clock::now();
  std::mt19937_64 gen(8008);
  std::vector<std::pair<std::string, PooledEmbeddings>> docs;
  for (int i = 0; i < 200; ++i) docs.emplace_back("doc" + std::to_string(i), oracle::to_matrix(oracle::random_rows(gen, 8, 32)));

  build_index(ctx.dir / "c8_a.cbix", {8, 32, DType::F32, 4096, false}, docs);
  const auto index = open_index(ctx.dir / "c8_a.cbix");
  bool exact = index.num_docs() == docs.size();
  for (std::size_t i = 0; exact && i < docs.size(); ++i) {
    const auto got = index.get_doc(i);
    exact = std::memcmp(got.data().data(), docs[i].second.data().data(), got.data().size_bytes()) == 0 &&
            index.ids().external(i) == docs[i].first;
  }

  const auto w = init_weights(16, 4, 8, 8);
  save_weights(ctx.dir / "c8.cbpw", w);
  const auto back = load_weights(ctx.dir / "c8.cbpw");
  const bool weights_ok = back.m_tokens() == 16 && back.c_vectors() == 4 && back.dim() == 8 &&
                          std::memcmp(back.data().data(), w.data().data(), w.data().size_bytes()) == 0;

  bool identical = true;
  for (const auto dtype : {DType::F32, DType::F16, DType::I8}) {
    build_index(ctx.dir / "c8_b.cbix", {8, 32, dtype, 64, false}, docs);
    build_index(ctx.dir / "c8_c.cbix", {8, 32, dtype, 64, false}, docs);
    identical = identical && slurp(ctx.dir / "c8_b.cbix") == slurp(ctx.dir / "c8_c.cbix") &&
                slurp(ctx.dir / "c8_b.cbix.ids.tsv") == slurp(ctx.dir / "c8_c.cbix.ids.tsv");
  }
  r.seconds = seconds_since(t0);
  r.passed = exact && weights_ok && identical;
  r.details.push_back(fmt("f32 index build -> open -> get_doc bit-exact on 200 documents: %s", exact ? "yes" : "NO"));
  r.details.push_back(fmt("weights save -> load bit-exact: %s", weights_ok ? "yes" : "NO"));
  r.details.push_back(fmt("rebuild from the same stream byte-identical (f32, f16, i8): %s", identical ? "yes" : "NO"));
  return r;
}

// ---------------------------------------------------------------------------
// 9. i8 quantization bound

CriterionResult quantization(const Ctx& ctx) {
  CriterionResult r{9, "i8 quantization bound", false, {}, 0.0};
  const auto t0 = Clock::now();
  std::mt19937_64 gen(9009);
  std::vector<std::pair<std::string, PooledEmbeddings>> docs;
  for (int i = 0; i < 100; ++i) {
    // Vary the spread so the per-record scale differs.
    const float hi = 0.05f + 0.95f * float(gen() % 1000) / 999.0f;
    docs.emplace_back("r" + std::to_string(i), oracle::to_matrix(oracle::random_rows(gen, 16, 16, -hi, hi)));
  }
  build_index(ctx.dir / "c9.cbix", {16, 16, DType::I8, 64, false}, docs);
  const auto index = open_index(ctx.dir / "c9.cbix");
  double worst_ratio = 0.0;
  bool ok = true;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto orig = docs[i].second.data();
    float max_abs = 0.0f;
    for (float v : orig) max_abs = std::max(max_abs, std::abs(v));
    const double bound = max_abs / 127.0;
    const auto got = index.get_doc(i);
    for (std::size_t j = 0; j < orig.size(); ++j) {
      const double err = std::abs(double(got.data()[j]) - orig[j]);
      ok = ok && err <= bound;
      worst_ratio = std::max(worst_ratio, err / bound);
    }
  }
  r.seconds = seconds_since(t0);
  r.passed = ok;
  r.details.push_back(fmt("100 records (16x16, values in [-1,1]): worst error / (max|v|/127) = %.3f (required <= 1)",
                          worst_ratio));
  return r;
}

}  // namespace

std::vector<CriterionResult> run(const Options& options) {
  const Ctx ctx{options.work_dir, options.log};
  fs::create_directories(ctx.dir);
  using Fn = CriterionResult (*)(const Ctx&);
  const std::vector<Fn> all = {scoring_oracle,     identity_pooling, gradient,    constant_space, effectiveness,
                               rerank_consistency, metrics_oracle,   persistence, quantization};
  std::vector<CriterionResult> out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), id) == options.only.end()) continue;
    if (ctx.log) *ctx.log << "running criterion " << id << std::endl;
    try {
      out.push_back(all[i](ctx));
    } catch (const std::exception& e) {
      out.push_back({id, "criterion " + std::to_string(id), false, {std::string("error: ") + e.what()}, 0.0});
    }
  }
  return out;
}

std::string format(const CriterionResult& result) {
  std::string s = fmt("[%s] %d %s (%.2f s)\n", result.passed ? "PASS" : "FAIL", result.id, result.title.c_str(),
                      result.seconds);
  for (const auto& d : result.details) s += "       " + d + "\n";
  return s;
}

std::string format_report(const std::vector<CriterionResult>& results) {
  std::string s;
  std::size_t passed = 0;
  for (const auto& r : results) {
    s += format(r);
    passed += r.passed;
  }
  s += fmt("%zu/%zu criteria passed\n", passed, results.size());
  return s;
}

}  // namespace constbert::acceptance
