#include "constbert/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "constbert/errors.hpp"

namespace constbert {
namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t lineno, const std::string& msg) {
  throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  std::istringstream ss(s);
  ss >> out;
  return ss && ss.eof();
}

// Applies `per_query` to every run query found in the qrels and averages.
template <typename F>
MetricResult average(const Run& run, const Qrels& qrels, F per_query) {
  MetricResult result;
  double sum = 0.0;
  for (const auto& [qid, entries] : run.queries) {
    if (!qrels.has_query(qid)) {
      result.excluded.push_back(qid);
      continue;
    }
    const double v = per_query(qid, entries);
    result.per_query[qid] = v;
    sum += v;
  }
  if (result.per_query.empty()) throw ConfigError("no run query has relevance judgments");
  result.value = sum / static_cast<double>(result.per_query.size());
  return result;
}

}  // namespace

void Qrels::add(const std::string& query_id, const std::string& doc_id, int grade) {
  if (grade < 0) throw ConfigError("negative relevance grade for (" + query_id + ", " + doc_id + ")");
  if (!judgments_[query_id].emplace(doc_id, grade).second) {
    throw ConfigError("duplicate judgment for (" + query_id + ", " + doc_id + ")");
  }
}

int Qrels::grade(const std::string& query_id, const std::string& doc_id) const {
  const auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return 0;
  const auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

const std::map<std::string, int>& Qrels::judgments(const std::string& query_id) const {
  static const std::map<std::string, int> kNone;
  const auto q = judgments_.find(query_id);
  return q == judgments_.end() ? kNone : q->second;
}

std::size_t Qrels::num_relevant(const std::string& query_id) const {
  const auto& j = judgments(query_id);
  return static_cast<std::size_t>(std::count_if(j.begin(), j.end(), [](const auto& p) { return p.second >= 1; }));
}

void Run::append(const std::string& query_id, const std::string& doc_id, double score) {
  auto& entries = queries[query_id];
  entries.push_back({doc_id, entries.size() + 1, score});
}

void Run::validate() const {
  for (const auto& [qid, entries] : queries) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].rank != i + 1) {
        throw ParseError("run query '" + qid + "': ranks are not contiguous from 1 (found rank " +
                         std::to_string(entries[i].rank) + " at position " + std::to_string(i + 1) + ")");
      }
      if (i > 0 && entries[i].score > entries[i - 1].score) {
        throw ParseError("run query '" + qid + "': score increases at rank " + std::to_string(i + 1));
      }
      if (!seen.insert(entries[i].doc_id).second) {
        throw ParseError("run query '" + qid + "': document '" + entries[i].doc_id + "' appears twice");
      }
    }
  }
}

Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open qrels " + path.string());
  Qrels qrels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto f = split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 4) parse_fail(path, lineno, "expected 'qid 0 docid grade', got " + std::to_string(f.size()) + " fields");
    int grade = 0;
    if (!parse_number(f[3], grade)) parse_fail(path, lineno, "grade '" + f[3] + "' is not an integer");
    try {
      qrels.add(f[0], f[2], grade);
    } catch (const ConfigError& e) {
      parse_fail(path, lineno, e.what());
    }
  }
  return qrels;
}

void write_qrels(const std::filesystem::path& path, const Qrels& qrels) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& [qid, docs] : qrels.all()) {
    for (const auto& [did, grade] : docs) os << qid << " 0 " << did << ' ' << grade << '\n';
  }
  if (!os.flush()) throw IoError("failed writing " + path.string());
}

Run load_run(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open run " + path.string());
  Run run;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto f = split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 6) {
      parse_fail(path, lineno, "expected 'qid Q0 docid rank score tag', got " + std::to_string(f.size()) + " fields");
    }
    RunEntry e{f[2], 0, 0.0};
    long long rank = 0;
    if (!parse_number(f[3], rank) || rank < 1) parse_fail(path, lineno, "rank '" + f[3] + "' is not a positive integer");
    if (!parse_number(f[4], e.score) || !std::isfinite(e.score)) parse_fail(path, lineno, "score '" + f[4] + "' is not a number");
    e.rank = static_cast<std::size_t>(rank);
    run.queries[f[0]].push_back(std::move(e));
    if (run.tag.empty()) run.tag = f[5];
  }
  for (auto& [qid, entries] : run.queries) {
    std::stable_sort(entries.begin(), entries.end(), [](const RunEntry& a, const RunEntry& b) { return a.rank < b.rank; });
  }
  run.validate();
  return run;
}

void write_run(const std::filesystem::path& path, const Run& run, const std::string& tag) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& [qid, entries] : run.queries) {
    for (const auto& e : entries) {
      std::fprintf(f, "%s Q0 %s %zu %.6f %s\n", qid.c_str(), e.doc_id.c_str(), e.rank, e.score, tag.c_str());
    }
  }
  if (std::fclose(f) != 0) throw IoError("failed writing " + path.string());
}

std::string MetricSpec::name() const {
  switch (kind) {
    case MetricKind::Mrr: return "mrr@" + std::to_string(cutoff);
    case MetricKind::Ndcg: return "ndcg@" + std::to_string(cutoff);
    case MetricKind::Recall: return "recall@" + std::to_string(cutoff);
  }
  return "?";
}

std::string supported_metrics() { return "mrr@K, ndcg@K, recall@K (K a positive integer, e.g. mrr@10, recall@1000)"; }

MetricSpec parse_metric(const std::string& name) {
  const auto at = name.find('@');
  const std::string kind = name.substr(0, at);
  std::size_t cutoff = 0;
  if (at == std::string::npos || !parse_number(name.substr(at + 1), cutoff) || cutoff == 0 ||
      (kind != "mrr" && kind != "ndcg" && kind != "recall")) {
    throw ConfigError("unknown metric '" + name + "'; supported: " + supported_metrics());
  }
  MetricSpec spec;
  spec.kind = kind == "mrr" ? MetricKind::Mrr : kind == "ndcg" ? MetricKind::Ndcg : MetricKind::Recall;
  spec.cutoff = cutoff;
  return spec;
}

std::vector<MetricSpec> parse_metric_list(const std::string& comma_separated) {
  std::vector<MetricSpec> out;
  std::istringstream ss(comma_separated);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_metric(item));
  }
  if (out.empty()) throw ConfigError("no metrics given; supported: " + supported_metrics());
  return out;
}

MetricResult mrr_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
  return average(run, qrels, [&](const std::string& qid, const std::vector<RunEntry>& entries) {
    const std::size_t n = std::min(k, entries.size());
    for (std::size_t r = 0; r < n; ++r) {
      if (qrels.grade(qid, entries[r].doc_id) >= 1) return 1.0 / static_cast<double>(r + 1);
    }
    return 0.0;
  });
}

MetricResult ndcg_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
  return average(run, qrels, [&](const std::string& qid, const std::vector<RunEntry>& entries) {
    auto gain = [](int grade) { return std::exp2(static_cast<double>(grade)) - 1.0; };
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, entries.size()); ++r) {
      dcg += gain(qrels.grade(qid, entries[r].doc_id)) / std::log2(static_cast<double>(r + 2));
    }
    std::vector<int> ideal;
    for (const auto& [doc, grade] : qrels.judgments(qid)) ideal.push_back(grade);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ideal.size()); ++r) {
      idcg += gain(ideal[r]) / std::log2(static_cast<double>(r + 2));
    }
    return idcg > 0.0 ? dcg / idcg : 0.0;
  });
}

MetricResult recall_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
  return average(run, qrels, [&](const std::string& qid, const std::vector<RunEntry>& entries) {
    const std::size_t relevant = qrels.num_relevant(qid);
    if (relevant == 0) return 0.0;
    std::size_t found = 0;
    for (std::size_t r = 0; r < std::min(k, entries.size()); ++r) {
      if (qrels.grade(qid, entries[r].doc_id) >= 1) ++found;
    }
    return static_cast<double>(found) / static_cast<double>(relevant);
  });
}

MetricResult evaluate(const MetricSpec& metric, const Run& run, const Qrels& qrels) {
  switch (metric.kind) {
    case MetricKind::Mrr: return mrr_at_k(run, qrels, metric.cutoff);
    case MetricKind::Ndcg: return ndcg_at_k(run, qrels, metric.cutoff);
    case MetricKind::Recall: return recall_at_k(run, qrels, metric.cutoff);
  }
  throw ConfigError("unknown metric kind");
}

LatencyReport mean_response_time(std::span<const Millis> latencies) {
  if (latencies.empty()) throw ConfigError("mean_response_time: no latencies");
  LatencyReport r;
  r.count = latencies.size();
  double sum = 0.0;
  for (const auto& l : latencies) sum += l.count();
  r.mean_ms = sum / static_cast<double>(r.count);

  std::vector<double> sorted;
  sorted.reserve(r.count);
  for (const auto& l : latencies) sorted.push_back(l.count());
  std::sort(sorted.begin(), sorted.end());
  auto nearest_rank = [&](double p) {
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(r.count)));
    return sorted[std::clamp<std::size_t>(rank, 1, r.count) - 1];
  };
  r.p50_ms = nearest_rank(50);
  r.p95_ms = nearest_rank(95);
  r.p99_ms = nearest_rank(99);
  return r;
}

}  // namespace constbert
