#pragma once

/**
 * Control-tag grammar for MapReduce-structured trajectories.
 *
 * A trajectory is free text interleaved with blocks of the form
 *
 *   <Parallel>
 *     <Goal> <Outline> 1: ... </Outline> <Outline> 2: ... </Outline> </Goal>
 *     <Path> 1: ... </Path>
 *     <Path> 2: ... </Path>
 *     <Conclusion> ... </Conclusion>
 *   </Parallel>
 *
 * Blocks nest only inside a <Path> body or at trajectory top level.
 * Parsing preserves every byte of the input: serialize(parse(lex(s))) == s.
 */

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace multiverse::grammar {

// ============================================================================
// Tokens
// ============================================================================

enum class TagKind {
  ParallelOpen,
  ParallelClose,
  GoalOpen,
  GoalClose,
  OutlineOpen,
  OutlineClose,
  PathOpen,
  PathClose,
  ConclusionOpen,
  ConclusionClose,
  Text,
};

/// Number of distinct tag literals (everything except Text).
inline constexpr int kTagLiteralCount = 10;

/// The exact source literal for a tag kind; Text has none.
std::string_view tag_literal(TagKind kind);

/// Half-open byte range into the lexed source.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
};

struct TagToken {
  TagKind kind = TagKind::Text;
  Span span;
  std::string raw;  // exact source bytes

  bool is_tag() const { return kind != TagKind::Text; }
};

/// Splits source into tag tokens and maximal text runs. Concatenating the
/// `raw` fields reproduces the source; unknown angle-bracket text stays Text.
std::vector<TagToken> lex(std::string_view source);

// ============================================================================
// Parsed structure
// ============================================================================

/// Dotted outline/path index such as "1" or "2.3", parsed from a leading
/// "1:" / "2.3:" label. Labels are data: their absence or inconsistency is a
/// validation finding, not a parse error.
struct IndexLabel {
  std::vector<int> parts;
  std::string raw;  // label text without the trailing colon

  std::string dotted() const;
  bool operator==(const IndexLabel&) const = default;
};

/// Parses a leading index label ("1:", "2.3:") from text, skipping leading
/// whitespace. Returns nullopt when the text does not start with one.
std::optional<IndexLabel> parse_index_label(std::string_view text);

struct MapReduceBlock;

/// One element of a path body or of the trajectory top level: either raw
/// text or a nested block.
using Node = std::variant<std::string, MapReduceBlock>;

struct Outline {
  std::string body;       // bytes between <Outline> and </Outline>
  std::string gap_after;  // whitespace run after </Outline>
  std::optional<IndexLabel> label;
};

struct PathBody {
  std::vector<Node> nodes;  // text pieces and nested blocks, in order
  std::string gap_after;    // whitespace run after </Path>
  std::optional<IndexLabel> label;
};

struct MapReduceBlock {
  std::string gap_open;       // whitespace between <Parallel> and <Goal>
  std::string goal_preamble;  // free text between <Goal> and first <Outline>
  std::vector<Outline> outlines;
  std::string gap_goal_close;  // whitespace between </Goal> and first <Path>
  std::vector<PathBody> paths;
  std::string conclusion;  // bytes between <Conclusion> and </Conclusion>
  std::string gap_close;   // whitespace between </Conclusion> and </Parallel>

  std::size_t path_count() const { return paths.size(); }
  /// 1 for a flat block, 1 + max over nested blocks otherwise.
  int depth() const;
};

struct Trajectory {
  std::vector<Node> nodes;

  bool empty() const { return nodes.empty(); }
  std::size_t block_count() const;  // top-level blocks only
};

// ============================================================================
// Errors
// ============================================================================

class ParseError : public std::runtime_error {
 public:
  enum class Kind { MalformedStructure, CountMismatch };

  ParseError(Kind kind, Span span, std::string expected, std::string found);

  Kind kind() const { return kind_; }
  Span span() const { return span_; }
  const std::string& expected() const { return expected_; }
  const std::string& found() const { return found_; }

 private:
  Kind kind_;
  Span span_;
  std::string expected_;
  std::string found_;
};

// ============================================================================
// Operations
// ============================================================================

/// Parses a full token stream into a trajectory. Throws ParseError on
/// mismatched or missing tags (MalformedStructure) and on blocks whose path
/// count differs from the outline count (CountMismatch).
Trajectory parse(const std::vector<TagToken>& tokens);

/// Convenience: parse(lex(source)).
Trajectory parse_text(std::string_view source);

/// Reproduces the exact byte sequence the trajectory was parsed from.
std::string serialize(const Trajectory& t);
std::string serialize(const MapReduceBlock& b);

/// Structural equality. With `normalize_whitespace` set, runs of whitespace
/// inside text compare equal regardless of their exact bytes; default mode
/// is byte-exact.
bool structurally_equal(const Trajectory& a, const Trajectory& b,
                        bool normalize_whitespace = false);

struct GrammarViolation {
  Span span;
  std::string message;
};

struct ExtractResult {
  std::vector<std::pair<MapReduceBlock, Span>> blocks;  // outermost, in order
  std::vector<GrammarViolation> violations;
};

/// Scans arbitrary text and pulls out every maximal well-formed
/// <Parallel>...</Parallel> region. Malformed regions and stray tags become
/// violations instead of errors; nested blocks stay inside their parent.
ExtractResult extract_outermost_blocks(std::string_view source);

// ============================================================================
// Validation
// ============================================================================

struct ValidationLimits {
  std::optional<int> max_depth;
  std::optional<int> max_paths;
};

struct ValidationFinding {
  enum class Kind { IndexGap, IndexMismatch, MissingLabel, DepthExceeded, PathsExceeded };
  Kind kind;
  std::string block_path;  // dotted location of the block, "" for top level
  std::string detail;
};

struct BlockSummary {
  std::string block_path;
  int depth = 1;
  std::size_t paths = 0;
  std::vector<std::string> outline_labels;
};

struct ValidationReport {
  std::vector<BlockSummary> blocks;
  std::vector<ValidationFinding> findings;
  std::map<int, int> depth_histogram;  // depth -> block count (all nesting levels)
  std::vector<std::size_t> path_counts;
  bool passed = true;  // false iff any limit finding was emitted

  bool has_findings() const { return !findings.empty(); }
};

/// Reports depth, path counts and index-label consistency for every block.
/// Limits are enforced only when provided.
ValidationReport validate(const Trajectory& t, const ValidationLimits& limits = {});

}  // namespace multiverse::grammar
