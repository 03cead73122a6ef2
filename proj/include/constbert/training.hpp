#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "constbert/embeddings.hpp"
#include "constbert/pooling.hpp"

namespace constbert {

enum class TrainLoss { InBatchSoftmax, MarginTriplet };

std::string to_string(TrainLoss loss);
/// Accepts "in_batch_softmax" / "margin_triplet"; throws ConfigError otherwise.
TrainLoss parse_train_loss(const std::string& name);

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  bool normalize_pooled = false;
  TrainLoss loss = TrainLoss::InBatchSoftmax;
  double margin = 1.0;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// One training example; all documents already padded to M rows.
struct Triplet {
  TokenEmbeddings query;
  TokenEmbeddings positive;
  std::vector<TokenEmbeddings> negatives;
};

struct TrainResult {
  ProjectionWeights weights;
  /// Mean loss of each epoch, in order.
  std::vector<double> epoch_loss;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Mini-batch SGD on W starting from init_weights(M, C, k, config.seed).
///
/// in_batch_softmax: per query, cross-entropy of its positive against every
/// document in the batch (all positives and negatives).
/// margin_triplet: mean over negatives of max(0, margin - s+ + s-).
///
/// Batch order is reshuffled each epoch from the seed, so the result is a
/// pure function of the inputs. Throws ConfigError on an empty or
/// inconsistent training set, NumericError (naming the epoch) on divergence.
TrainResult train_pool(std::span<const Triplet> triplets, std::size_t c_vectors, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

}  // namespace constbert
