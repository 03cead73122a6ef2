#include "constbert/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "constbert/errors.hpp"
#include "constbert/rng.hpp"
#include "constbert/scoring.hpp"

namespace constbert {
namespace {

void check_triplets(std::span<const Triplet> triplets, const TrainConfig& config) {
  if (triplets.empty()) throw ConfigError("train_pool: empty training set");
  const auto& first = triplets.front();
  const std::size_t m = first.positive.rows();
  const std::size_t k = first.query.dim();
  auto check_doc = [&](const TokenEmbeddings& d, std::size_t t) {
    if (d.rows() != m || d.dim() != k) {
      throw ConfigError("train_pool: triplet " + std::to_string(t) + " has a " + std::to_string(d.rows()) + "x" +
                        std::to_string(d.dim()) + " document, expected " + std::to_string(m) + "x" +
                        std::to_string(k));
    }
  };
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& tr = triplets[t];
    if (tr.query.empty() || tr.query.dim() != k) {
      throw ConfigError("train_pool: triplet " + std::to_string(t) + " has a query of dim " +
                        std::to_string(tr.query.dim()) + ", expected " + std::to_string(k));
    }
    check_doc(tr.positive, t);
    for (const auto& n : tr.negatives) check_doc(n, t);
    if (config.loss == TrainLoss::MarginTriplet && tr.negatives.empty()) {
      throw ConfigError("train_pool: margin_triplet needs negatives (triplet " + std::to_string(t) + ")");
    }
  }
}

struct BatchDoc {
  const TokenEmbeddings* tokens;
  PooledEmbeddings raw;
  PooledEmbeddings scored;  // raw or row-normalized
  EmbeddingMatrix grad;     // d loss / d scored
};

// One SGD step over a batch. Returns the summed loss and the number of loss
// terms it was averaged over (0 when the batch was skipped).
std::pair<double, std::size_t> train_batch(std::span<const Triplet> triplets, std::span<const std::size_t> batch,
                                           const TrainConfig& config, ProjectionWeights& w) {
  // Layout: positives of every query first, then every negative in order.
  std::vector<BatchDoc> docs;
  std::vector<std::vector<std::size_t>> neg_slots(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) docs.push_back({&triplets[batch[b]].positive, {}, {}, {}});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (const auto& n : triplets[batch[b]].negatives) {
      neg_slots[b].push_back(docs.size());
      docs.push_back({&n, {}, {}, {}});
    }
  }
  if (config.loss == TrainLoss::InBatchSoftmax && docs.size() < 2) return {0.0, 0};

  for (auto& d : docs) {
    d.raw = pool(*d.tokens, w, false);
    d.scored = d.raw;
    if (config.normalize_pooled) d.scored.normalize_rows();
    d.grad = EmbeddingMatrix(d.raw.rows(), d.raw.dim());
  }

  auto add_grad = [](BatchDoc& d, const EmbeddingMatrix& g, float coeff) {
    auto dst = d.grad.data();
    const auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += coeff * src[i];
  };

  double loss_sum = 0.0;
  std::size_t terms = 0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  if (config.loss == TrainLoss::InBatchSoftmax) {
    std::vector<double> scores(docs.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& q = triplets[batch[b]].query;
      for (std::size_t j = 0; j < docs.size(); ++j) scores[j] = maxsim(q, docs[j].scored).value;
      const double mx = *std::max_element(scores.begin(), scores.end());
      double z = 0.0;
      for (double s : scores) z += std::exp(s - mx);
      const double lse = mx + std::log(z);
      loss_sum += lse - scores[b];
      ++terms;
      for (std::size_t j = 0; j < docs.size(); ++j) {
        const double p = std::exp(scores[j] - lse);
        const double coeff = (p - (j == b ? 1.0 : 0.0)) * inv_b;
        if (coeff == 0.0) continue;
        add_grad(docs[j], score_grad_wrt_pooled(q, docs[j].scored), static_cast<float>(coeff));
      }
    }
  } else {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& q = triplets[batch[b]].query;
      const double s_pos = maxsim(q, docs[b].scored).value;
      const double coeff = inv_b / static_cast<double>(neg_slots[b].size());
      for (std::size_t slot : neg_slots[b]) {
        const double s_neg = maxsim(q, docs[slot].scored).value;
        const double hinge = config.margin - s_pos + s_neg;
        loss_sum += std::max(0.0, hinge) / static_cast<double>(neg_slots[b].size());
        if (hinge > 0.0) {
          add_grad(docs[b], score_grad_wrt_pooled(q, docs[b].scored), static_cast<float>(-coeff));
          add_grad(docs[slot], score_grad_wrt_pooled(q, docs[slot].scored), static_cast<float>(coeff));
        }
      }
      ++terms;
    }
  }

  if (!std::isfinite(loss_sum)) return {loss_sum, terms};

  // Every pooled vector above was computed from the pre-step W, so the
  // update can be applied in place document by document.
  const float step = static_cast<float>(-config.learning_rate);
  for (auto& d : docs) {
    const auto g = config.normalize_pooled ? backprop_row_normalization(d.raw, d.grad) : d.grad;
    accumulate_outer(d.tokens->data(), g.data(), step, w.data());
  }
  return {loss_sum, terms};
}

}  // namespace

std::string to_string(TrainLoss loss) {
  return loss == TrainLoss::InBatchSoftmax ? "in_batch_softmax" : "margin_triplet";
}

TrainLoss parse_train_loss(const std::string& name) {
  if (name == "in_batch_softmax") return TrainLoss::InBatchSoftmax;
  if (name == "margin_triplet") return TrainLoss::MarginTriplet;
  throw ConfigError("unknown loss '" + name + "' (expected in_batch_softmax or margin_triplet)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a positive finite number");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (loss == TrainLoss::InBatchSoftmax && batch_size < 2) {
    throw ConfigError("batch_size must be >= 2 for in_batch_softmax");
  }
  if (!std::isfinite(margin)) throw ConfigError("margin must be finite");
}

TrainResult train_pool(std::span<const Triplet> triplets, std::size_t c_vectors, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  check_triplets(triplets, config);
  const std::size_t m = triplets.front().positive.rows();
  const std::size_t k = triplets.front().query.dim();

  TrainResult result{init_weights(m, c_vectors, k, config.seed), {}};
  std::vector<std::size_t> order(triplets.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(config.seed, /*stream=*/epoch);
    shuffle(order, rng);

    double loss_sum = 0.0;
    std::size_t terms = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      std::pair<double, std::size_t> step;
      try {
        step = train_batch(triplets, std::span(order).subspan(start, len), config, result.weights);
      } catch (const NumericError& e) {
        throw NumericError("train_pool: diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const auto [batch_loss, batch_terms] = step;
      if (!std::isfinite(batch_loss)) {
        throw NumericError("train_pool: loss became non-finite in epoch " + std::to_string(epoch));
      }
      loss_sum += batch_loss;
      terms += batch_terms;
    }
    if (!result.weights.all_finite()) {
      throw NumericError("train_pool: weights became non-finite in epoch " + std::to_string(epoch));
    }
    const double mean = terms ? loss_sum / static_cast<double>(terms) : 0.0;
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

}  // namespace constbert
