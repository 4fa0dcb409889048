#pragma once

/**
 * Branch-structured generation DAG.
 *
 * A trajectory maps onto segments: linear text runs (Sequential), the
 * <Parallel>..</Goal> span of a block (Plan), each <Path>..</Path> span
 * (Path, split further when a nested block sits inside the path), and the
 * <Conclusion>..</Parallel> span (Reduce). Visibility follows segment
 * ancestry: a Path sees only its own prefix chain, sibling Paths are
 * mutually invisible, and the Reduce sees all sibling Paths plus the shared
 * prefix.
 *
 * Positions: a segment starts at 1 + max(end of its parents), the root at 0.
 * Sibling Paths therefore share a start position, and the Reduce converges
 * one past the maximum position reached by any path, keeping every visible
 * relative distance positive.
 */

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "multiverse/grammar.hpp"
#include "multiverse/tokenizer.hpp"

namespace multiverse::dag {

enum class SegmentKind { Sequential, Plan, Path, Reduce };

std::string_view to_string(SegmentKind kind);

struct Segment {
  int id = -1;
  SegmentKind kind = SegmentKind::Sequential;
  std::vector<int> parents;  // visibility parents; empty for the root
  std::vector<tok::Token> tokens;
  int start_pos = -1;  // assigned by assign_positions
  int block = -1;      // owning block index for Plan/Path/Reduce
  int path_ordinal = 0;  // 1-based, Path head segments only

  int end_pos() const { return start_pos + static_cast<int>(tokens.size()) - 1; }
  std::size_t size() const { return tokens.size(); }
};

struct BlockInfo {
  int plan_segment = -1;
  std::vector<int> path_heads;
  std::vector<int> path_tails;
  /// Segment-id range [begin, end) of each path's whole subtree, nested
  /// blocks included. Ids are contiguous per subtree (creation is DFS).
  std::vector<std::pair<int, int>> path_subtrees;
  int reduce_segment = -1;
  int parent_block = -1;
};

/// Dense boolean attention mask over the layout order.
class Mask {
 public:
  Mask() = default;
  explicit Mask(std::size_t n) : n_(n), bits_(n * n, 0) {}

  std::size_t size() const { return n_; }
  bool at(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits_[i * n_ + j] = v ? 1 : 0; }

  bool operator==(const Mask&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct GenerationDag {
  std::vector<Segment> segments;  // indexed by id, in source (creation) order
  std::vector<int> layout;        // segment ids in memory-layout order
  std::vector<BlockInfo> blocks;

  std::size_t total_tokens() const;

  /// (segment id, offset) for every layout row.
  std::vector<std::pair<int, int>> token_layout() const;

  /// Tokens in layout order.
  std::vector<tok::Token> layout_tokens() const;

  /// Layout row of the first token of a segment; -1 if empty.
  int row_of(int segment_id, int offset) const;
};

/// Builds the segment DAG for a parsed trajectory. The tokenizer must treat
/// control tags as atomic tokens (tok::Tokenizer always does).
GenerationDag build_dag(const grammar::Trajectory& t, tok::Tokenizer& tokenizer);

/// Token positions in layout order; also fills Segment::start_pos in place.
std::vector<int> assign_positions(GenerationDag& dag);

/// Pairwise visibility in layout order. mask[i][j] is true iff j's segment
/// is i's segment (with j at an offset <= i's) or one of its ancestors.
Mask build_mask(const GenerationDag& dag);

struct VisibilitySpec {
  std::vector<int> positions;
  Mask mask;
};

VisibilitySpec build_visibility(GenerationDag& dag);

/// Reorders the layout of one block's sibling path subtrees; positions and
/// visibility parents are untouched, only memory order changes. `perm` maps
/// new slot -> old path index (0-based) and must be a permutation.
GenerationDag permute_paths(const GenerationDag& dag, int block_index,
                            const std::vector<int>& perm);

// ============================================================================
// Teacher-forced training batch
// ============================================================================

struct BatchOptions {
  bool tag_loss = true;  // when false, targets that are control tags drop out of the loss
};

struct TrainingBatch {
  std::vector<int> token_ids;    // layout order
  std::vector<int> positions;
  Mask mask;
  std::vector<int> target_ids;   // -1 where a row has no next-token target
  std::vector<std::uint8_t> loss_mask;

  std::size_t size() const { return token_ids.size(); }
};

/// Flattened single-sequence batch: layout-next targets inside each segment,
/// the Plan's last token targets path 1's first token, path-final tokens
/// carry no target, and chain boundaries target the unique successor.
TrainingBatch build_training_batch(const grammar::Trajectory& t, tok::Tokenizer& tokenizer,
                                   const BatchOptions& options = {});
TrainingBatch build_training_batch(GenerationDag& dag, const BatchOptions& options = {});

/// '#'/'.' grid of the mask, one row per line (small fixtures only).
std::string mask_grid(const Mask& mask);

}  // namespace multiverse::dag
