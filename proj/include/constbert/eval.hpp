#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace constbert {

/// TREC relevance judgments: query id -> (doc id -> grade >= 0).
class Qrels {
 public:
  /// Throws ConfigError on a negative grade or a duplicate (query, doc) pair.
  void add(const std::string& query_id, const std::string& doc_id, int grade);
  int grade(const std::string& query_id, const std::string& doc_id) const;
  bool has_query(const std::string& query_id) const { return judgments_.contains(query_id); }
  const std::map<std::string, int>& judgments(const std::string& query_id) const;
  const std::map<std::string, std::map<std::string, int>>& all() const { return judgments_; }
  /// Number of documents with grade >= 1 for the query.
  std::size_t num_relevant(const std::string& query_id) const;

 private:
  std::map<std::string, std::map<std::string, int>> judgments_;
};

struct RunEntry {
  std::string doc_id;
  std::size_t rank = 0;
  double score = 0.0;

  bool operator==(const RunEntry&) const = default;
};

/// Ranked results per query; entries are stored in rank order (1..n).
struct Run {
  std::map<std::string, std::vector<RunEntry>> queries;
  std::string tag;

  /// Appends with the next rank. Scores must not increase.
  void append(const std::string& query_id, const std::string& doc_id, double score);
  /// Throws ParseError when ranks are not 1..n, scores increase with rank, or
  /// a document repeats within a query.
  void validate() const;
};

Qrels load_qrels(const std::filesystem::path& path);
void write_qrels(const std::filesystem::path& path, const Qrels& qrels);
/// Parses `qid Q0 docid rank score tag` lines (any order) and validates.
Run load_run(const std::filesystem::path& path);
/// Emits rank-ascending lines with six-decimal scores.
void write_run(const std::filesystem::path& path, const Run& run, const std::string& tag);

enum class MetricKind { Mrr, Ndcg, Recall };

struct MetricSpec {
  MetricKind kind = MetricKind::Mrr;
  std::size_t cutoff = 10;

  std::string name() const;
};

/// "mrr@10", "ndcg@10", "recall@50" etc. Throws ConfigError listing the
/// supported forms.
MetricSpec parse_metric(const std::string& name);
std::vector<MetricSpec> parse_metric_list(const std::string& comma_separated);
std::string supported_metrics();

struct MetricResult {
  double value = 0.0;
  /// Per-query values for the evaluated queries.
  std::map<std::string, double> per_query;
  /// Run queries absent from the qrels; excluded from the mean.
  std::vector<std::string> excluded;
};

/// Mean over run queries present in the qrels. Throws ConfigError when no
/// run query is judged.
MetricResult mrr_at_k(const Run& run, const Qrels& qrels, std::size_t k = 10);
MetricResult ndcg_at_k(const Run& run, const Qrels& qrels, std::size_t k = 10);
MetricResult recall_at_k(const Run& run, const Qrels& qrels, std::size_t k);
MetricResult evaluate(const MetricSpec& metric, const Run& run, const Qrels& qrels);

using Millis = std::chrono::duration<double, std::milli>;

struct LatencyReport {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
  std::size_t count = 0;
};

/// Arithmetic mean plus nearest-rank percentiles. Throws ConfigError on an
/// empty list.
LatencyReport mean_response_time(std::span<const Millis> latencies);

}  // namespace constbert
