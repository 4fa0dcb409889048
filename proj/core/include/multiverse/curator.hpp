#pragma once

/**
 * Automated validation half of the data-curation pipeline: relative edit
 * distance with an inclusive acceptance threshold, grammar gating on the
 * outermost blocks, a path-independence lint, and a five-stage pipeline
 * harness with a pluggable text-transform backend (no live LLM anywhere).
 */

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "multiverse/grammar.hpp"

namespace multiverse::curator {

// ============================================================================
// Edit distance
// ============================================================================

/// Unit-cost Levenshtein distance over Unicode scalar values (invalid UTF-8
/// bytes count as one scalar each).
std::size_t levenshtein(std::string_view a, std::string_view b);

/// Decoded code points; exposed for tests.
std::vector<char32_t> decode_utf8(std::string_view text);

inline constexpr double kDefaultEditThreshold = 0.2;

struct EditDistanceResult {
  std::size_t distance = 0;
  double relative = 0.0;  // distance / max(len_a, len_b); 0 when both empty
  bool pass = true;       // relative <= threshold (inclusive)
};

EditDistanceResult relative_edit_distance(std::string_view a, std::string_view b,
                                          double threshold = kDefaultEditThreshold);

// ============================================================================
// Content check
// ============================================================================

struct Step {
  std::string label;  // "S1", "O2.3", ... or "" for unlabeled
  std::string text;
};

/// Splits "S1: ..." / "O1.2: ..." labeled lines into steps; consecutive
/// unlabeled lines join the current step. Returns nullopt when no labeled
/// line exists (whole-text fallback applies then).
std::optional<std::vector<Step>> split_labeled_steps(std::string_view text);

struct StepCheck {
  std::string label;
  EditDistanceResult result;
};

class AlignmentError : public std::runtime_error {
 public:
  AlignmentError(std::vector<std::string> only_in_original,
                 std::vector<std::string> only_in_refilled);

  const std::vector<std::string>& only_in_original() const { return only_in_original_; }
  const std::vector<std::string>& only_in_refilled() const { return only_in_refilled_; }

 private:
  std::vector<std::string> only_in_original_;
  std::vector<std::string> only_in_refilled_;
};

struct ContentCheckResult {
  std::vector<StepCheck> steps;
  bool pass = true;
  std::vector<std::string> failing_labels;  // flagged for regeneration
};

/// Steps align by label; a label present on only one side raises
/// AlignmentError listing the unmatched labels.
ContentCheckResult content_check(const std::vector<Step>& original_steps,
                                 const std::vector<Step>& refilled_steps,
                                 double threshold = kDefaultEditThreshold);

// ============================================================================
// Grammar gate
// ============================================================================

struct GrammarGateResult {
  bool pass = false;
  std::vector<std::pair<grammar::MapReduceBlock, grammar::Span>> blocks;
  std::vector<grammar::GrammarViolation> violations;
};

/// Pass iff the text contains no grammar violations; on pass the outermost
/// blocks are returned for downstream rewriting.
GrammarGateResult grammar_gate(std::string_view text);

// ============================================================================
// Path-independence lint
// ============================================================================

struct LintConfig {
  std::vector<std::string> phrases = {"Similarly", "Alternatively",    "First",
                                      "Then",      "Next",             "On the other hand"};
  bool flag_cross_references = true;  // "Path 2" mentioned inside path 1
};

struct LintFinding {
  std::string path_id;  // dotted index of the offending path
  std::string phrase;
  grammar::Span span;  // byte range into serialize(block)
  std::string rule;    // "transitional_phrase" | "cross_path_reference"
};

/// Case-insensitive word-boundary scan of every path body (nested blocks
/// recurse with their own path ids). Spans index into serialize(block).
std::vector<LintFinding> independence_lint(const grammar::MapReduceBlock& block,
                                           const LintConfig& config = {});

// ============================================================================
// Pipeline harness
// ============================================================================

inline constexpr int kPipelineStages = 5;

/// Stage prompt texts keyed by stage id (1-based). Loaded from a directory
/// of stage1.txt .. stage5.txt.
class PromptLibrary {
 public:
  static PromptLibrary load_dir(const std::string& dir);
  static PromptLibrary builtin();  // terse built-in fallbacks

  const std::string& prompt(int stage) const;

 private:
  std::vector<std::string> prompts_;  // size kPipelineStages
};

struct StageInput {
  int stage = 1;          // 1..5
  int attempt = 0;        // 0 on the first try
  std::string prompt;
  std::string previous;   // prior stage's accepted output ("" for stage 1)
  std::string original;   // the untouched input trajectory
};

/// Any deterministic or stochastic text transform; tests use scripted mocks.
using StageBackend = std::function<std::string(const StageInput&)>;

struct StageRecord {
  int stage = 1;
  int regeneration_count = 0;
  std::string output;  // accepted output
  std::vector<std::string> rejected;  // outputs that failed their check
};

enum class CurationStatus { Accepted, RegenerationExhausted };

struct CurationRecord {
  CurationStatus status = CurationStatus::Accepted;
  int failed_stage = 0;  // set when exhausted
  std::vector<StageRecord> stages;
  std::optional<ContentCheckResult> content;   // after stage 4
  std::optional<GrammarGateResult> grammar;    // after stage 5 (violation counts only)
  std::vector<LintFinding> lint;               // non-gating, from accepted stage-5 blocks

  const std::string& final_output() const { return stages.back().output; }
};

struct PipelineOptions {
  int max_regens = 3;  // retries per gated stage
  double content_threshold = kDefaultEditThreshold;
  bool per_step_content_check = true;  // fall back to whole-text when unlabeled
};

/// Runs stages 1..5, re-running stage 4 until the content check passes and
/// stage 5 until the grammar gate passes (up to max_regens retries each).
/// Returns the record instead of throwing: exhaustion is data.
CurationRecord pipeline_run(const std::string& input, const StageBackend& backend,
                            const PromptLibrary& prompts, const PipelineOptions& options = {});

}  // namespace multiverse::curator
