#pragma once

/**
 * Deterministic toy transformer for verifying masks and positions.
 *
 * Attention scores follow the rotary form: queries and keys are rotated by
 * their token's position before the dot product, and masked pairs get -inf.
 * Everything runs in double precision with a fixed summation order (layout
 * order), so two runs over the same layout are bit-identical.
 *
 * The batch forward is implemented as an incremental pass over the layout
 * with per-layer KV caching; the same step routine serves the engine's
 * KV-cache-backed decoding, which keeps the two paths numerically identical.
 */

#include <cstdint>
#include <span>
#include <vector>

#include "multiverse/dag.hpp"

namespace multiverse::toy {

struct ToyModelConfig {
  int layers = 2;
  int heads = 2;
  int model_dim = 32;
  int vocab_size = 256;
  std::uint64_t seed = 0;
  double init_range = 0.05;
  double rope_base = 10000.0;

  int head_dim() const { return model_dim / heads; }
  int hidden_dim() const { return 4 * model_dim; }
  /// Doubles of cached K and V one token contributes across all layers.
  int kv_doubles_per_token() const { return 2 * layers * model_dim; }
};

struct ToyModelWeights {
  ToyModelConfig config;

  struct Layer {
    std::vector<double> wq, wk, wv, wo;  // model_dim x model_dim, row-major
    std::vector<double> w_up;            // model_dim x hidden
    std::vector<double> w_down;          // hidden x model_dim
  };

  std::vector<double> embedding;  // vocab x model_dim
  std::vector<Layer> layers;
  std::vector<double> unembed;  // model_dim x vocab

  /// Seeded uniform init in [-init_range, init_range]; reproducible.
  static ToyModelWeights init(const ToyModelConfig& config);
};

struct StepOutput {
  std::vector<double> logits;  // vocab_size
  std::vector<double> hidden;  // model_dim, final residual stream
  std::vector<double> kv;      // kv_doubles_per_token, to cache
};

struct ForwardResult {
  std::vector<double> logits;  // n x vocab, row-major
  std::vector<double> hidden;  // n x model_dim
  std::size_t rows = 0;

  std::span<const double> logits_row(std::size_t i) const;
  std::span<const double> hidden_row(std::size_t i) const;
};

class ToyModel {
 public:
  explicit ToyModel(const ToyModelConfig& config) : weights_(ToyModelWeights::init(config)) {}
  explicit ToyModel(ToyModelWeights weights) : weights_(std::move(weights)) {}

  const ToyModelConfig& config() const { return weights_.config; }
  const ToyModelWeights& weights() const { return weights_; }

  /// One decoding step: attends over `context_kv` (ctx_len cached records in
  /// visibility order) plus the new token itself.
  StepOutput step(std::span<const double> context_kv, std::size_t ctx_len, int token_id,
                  int position) const;

  /// Teacher-forced forward over a flattened batch.
  ForwardResult forward(const dag::TrainingBatch& batch) const;

  /// Mean negative log-likelihood over loss-masked targets.
  double loss(const dag::TrainingBatch& batch) const;

 private:
  ToyModelWeights weights_;
};

}  // namespace multiverse::toy
