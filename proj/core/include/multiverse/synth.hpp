#pragma once

/**
 * Seeded fixture synthesis. Every generated trajectory is parse-accepted,
 * labels its outlines/paths with correct dotted indices, and is fully
 * determined by the seed, so golden tests stay byte-stable.
 */

#include <cstdint>
#include <random>
#include <string>

namespace multiverse::synth {

/// Deterministic RNG helpers over mt19937_64. The standard distributions are
/// not bit-portable across library implementations, so ranges are mapped
/// from raw engine output directly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [lo, hi] inclusive.
  int next_int(int lo, int hi);

  /// Uniform double in [0, 1).
  double next_unit();

  /// Uniform double in [-r, r].
  double next_symmetric(double r);

  bool next_bool(double p_true = 0.5) { return next_unit() < p_true; }

 private:
  std::mt19937_64 engine_;
};

struct TrajectoryParams {
  int max_depth = 2;        // nesting depth of blocks, >= 1 enables blocks
  int max_paths = 4;        // sibling paths per block, >= 1
  int max_blocks = 2;       // top-level blocks
  int max_text_words = 6;   // words per free-text stretch
  double nest_probability = 0.35;
  bool allow_leading_text = true;
  bool allow_trailing_text = true;
};

/// Random tagged trajectory; always parse-accepted and label-consistent.
std::string random_trajectory(Rng& rng, const TrajectoryParams& params);

/// Random block-free text of exactly `words` words.
std::string random_sequential_text(Rng& rng, int words);

/// Deterministic word from a small internal lexicon.
std::string word(Rng& rng);

}  // namespace multiverse::synth
