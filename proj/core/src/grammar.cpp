#include "multiverse/grammar.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>

namespace multiverse::grammar {

namespace {

struct TagLiteral {
  TagKind kind;
  std::string_view text;
};

// Longest-first is not needed: no literal is a prefix of another.
constexpr std::array<TagLiteral, kTagLiteralCount> kTagLiterals{{
    {TagKind::ParallelOpen, "<Parallel>"},
    {TagKind::ParallelClose, "</Parallel>"},
    {TagKind::GoalOpen, "<Goal>"},
    {TagKind::GoalClose, "</Goal>"},
    {TagKind::OutlineOpen, "<Outline>"},
    {TagKind::OutlineClose, "</Outline>"},
    {TagKind::PathOpen, "<Path>"},
    {TagKind::PathClose, "</Path>"},
    {TagKind::ConclusionOpen, "<Conclusion>"},
    {TagKind::ConclusionClose, "</Conclusion>"},
}};

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

bool whitespace_only(std::string_view s) {
  return std::all_of(s.begin(), s.end(), is_ws);
}

std::string kind_name(TagKind k) {
  if (k == TagKind::Text) return "text";
  return std::string(tag_literal(k));
}

}  // namespace

std::string_view tag_literal(TagKind kind) {
  for (const auto& lit : kTagLiterals) {
    if (lit.kind == kind) return lit.text;
  }
  return {};
}

std::vector<TagToken> lex(std::string_view source) {
  std::vector<TagToken> out;
  std::size_t text_begin = 0;
  std::size_t i = 0;

  auto flush_text = [&](std::size_t end) {
    if (end > text_begin) {
      out.push_back(TagToken{TagKind::Text,
                             Span{text_begin, end},
                             std::string(source.substr(text_begin, end - text_begin))});
    }
  };

  while (i < source.size()) {
    if (source[i] != '<') {
      ++i;
      continue;
    }
    const TagLiteral* match = nullptr;
    for (const auto& lit : kTagLiterals) {
      if (source.substr(i, lit.text.size()) == lit.text) {
        match = &lit;
        break;
      }
    }
    if (!match) {
      ++i;  // unknown angle-bracket text stays Text
      continue;
    }
    flush_text(i);
    out.push_back(TagToken{match->kind,
                           Span{i, i + match->text.size()},
                           std::string(match->text)});
    i += match->text.size();
    text_begin = i;
  }
  flush_text(source.size());
  return out;
}

std::string IndexLabel::dotted() const {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += '.';
    s += std::to_string(parts[i]);
  }
  return s;
}

std::optional<IndexLabel> parse_index_label(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size() && is_ws(text[i])) ++i;
  std::size_t start = i;
  IndexLabel label;
  while (true) {
    std::size_t digits_begin = i;
    int value = 0;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      value = value * 10 + (text[i] - '0');
      ++i;
    }
    if (i == digits_begin) return std::nullopt;
    label.parts.push_back(value);
    if (i < text.size() && text[i] == '.') {
      ++i;
      continue;
    }
    break;
  }
  if (i >= text.size() || text[i] != ':') return std::nullopt;
  label.raw = std::string(text.substr(start, i - start));
  return label;
}

int MapReduceBlock::depth() const {
  int nested_max = 0;
  for (const auto& path : paths) {
    for (const auto& node : path.nodes) {
      if (const auto* block = std::get_if<MapReduceBlock>(&node)) {
        nested_max = std::max(nested_max, block->depth());
      }
    }
  }
  return 1 + nested_max;
}

std::size_t Trajectory::block_count() const {
  std::size_t n = 0;
  for (const auto& node : nodes) {
    if (std::holds_alternative<MapReduceBlock>(node)) ++n;
  }
  return n;
}

ParseError::ParseError(Kind kind, Span span, std::string expected, std::string found)
    : std::runtime_error("parse error at byte " + std::to_string(span.begin) + ": expected " +
                         expected + ", found " + found),
      kind_(kind),
      span_(span),
      expected_(std::move(expected)),
      found_(std::move(found)) {}

namespace {

// Recursive-descent parser over the tag-token stream.
class Parser {
 public:
  explicit Parser(const std::vector<TagToken>& tokens) : tokens_(tokens) {}

  Trajectory parse_trajectory() {
    Trajectory t;
    while (!at_end()) {
      const TagToken& tok = peek();
      if (tok.kind == TagKind::Text) {
        t.nodes.emplace_back(tok.raw);
        advance();
      } else if (tok.kind == TagKind::ParallelOpen) {
        t.nodes.emplace_back(parse_block());
      } else {
        fail(ParseError::Kind::MalformedStructure, tok.span, "text or <Parallel>",
             kind_name(tok.kind));
      }
    }
    return t;
  }

  MapReduceBlock parse_block() {
    MapReduceBlock block;
    const Span open_span = peek().span;
    expect(TagKind::ParallelOpen);

    block.gap_open = take_gap("<Goal>");
    expect(TagKind::GoalOpen);
    block.goal_preamble = take_text();

    while (!at_end() && peek().kind == TagKind::OutlineOpen) {
      advance();
      Outline outline;
      outline.body = take_text();
      expect(TagKind::OutlineClose);
      outline.gap_after = take_gap("</Goal> or <Outline>");
      outline.label = parse_index_label(outline.body);
      block.outlines.push_back(std::move(outline));
    }
    if (block.outlines.empty()) {
      // A goal with no outlines can never spawn a path.
      throw ParseError(ParseError::Kind::CountMismatch, open_span, "at least one <Outline>",
                       "0 outlines");
    }
    expect(TagKind::GoalClose);
    block.gap_goal_close = take_gap("<Path>");

    while (!at_end() && peek().kind == TagKind::PathOpen) {
      advance();
      PathBody path;
      while (!at_end() && peek().kind != TagKind::PathClose) {
        const TagToken& tok = peek();
        if (tok.kind == TagKind::Text) {
          path.nodes.emplace_back(tok.raw);
          advance();
        } else if (tok.kind == TagKind::ParallelOpen) {
          path.nodes.emplace_back(parse_block());
        } else {
          fail(ParseError::Kind::MalformedStructure, tok.span,
               "path text, <Parallel> or </Path>", kind_name(tok.kind));
        }
      }
      expect(TagKind::PathClose);
      path.gap_after = take_gap("<Path> or <Conclusion>");
      if (!path.nodes.empty()) {
        if (const auto* text = std::get_if<std::string>(&path.nodes.front())) {
          path.label = parse_index_label(*text);
        }
      }
      block.paths.push_back(std::move(path));
    }

    if (block.paths.size() != block.outlines.size()) {
      throw ParseError(ParseError::Kind::CountMismatch, open_span,
                       std::to_string(block.outlines.size()) + " paths",
                       std::to_string(block.paths.size()) + " paths");
    }

    expect(TagKind::ConclusionOpen);
    block.conclusion = take_text();
    expect(TagKind::ConclusionClose);
    block.gap_close = take_gap("</Parallel>");
    expect(TagKind::ParallelClose);
    return block;
  }

  std::size_t consumed() const { return pos_; }

 private:
  bool at_end() const { return pos_ >= tokens_.size(); }
  const TagToken& peek() const { return tokens_[pos_]; }
  void advance() { ++pos_; }

  [[noreturn]] void fail(ParseError::Kind kind, Span span, std::string expected,
                         std::string found) {
    throw ParseError(kind, span, std::move(expected), std::move(found));
  }

  Span end_span() const {
    std::size_t end = tokens_.empty() ? 0 : tokens_.back().span.end;
    return Span{end, end};
  }

  void expect(TagKind kind) {
    if (at_end()) {
      fail(ParseError::Kind::MalformedStructure, end_span(), kind_name(kind), "end of input");
    }
    if (peek().kind != kind) {
      fail(ParseError::Kind::MalformedStructure, peek().span, kind_name(kind),
           kind_name(peek().kind));
    }
    advance();
  }

  // Free text before the next tag; empty when the next token is a tag.
  std::string take_text() {
    if (!at_end() && peek().kind == TagKind::Text) {
      std::string text = peek().raw;
      advance();
      return text;
    }
    return {};
  }

  // Inter-tag gap that must be whitespace-only.
  std::string take_gap(const std::string& coming_next) {
    if (at_end() || peek().kind != TagKind::Text) return {};
    if (!whitespace_only(peek().raw)) {
      fail(ParseError::Kind::MalformedStructure, peek().span, coming_next,
           "stray text \"" + peek().raw.substr(0, 24) + "\"");
    }
    std::string gap = peek().raw;
    advance();
    return gap;
  }

  const std::vector<TagToken>& tokens_;
  std::size_t pos_ = 0;
};

void serialize_block(const MapReduceBlock& b, std::string& out);

void serialize_nodes(const std::vector<Node>& nodes, std::string& out) {
  for (const auto& node : nodes) {
    if (const auto* text = std::get_if<std::string>(&node)) {
      out += *text;
    } else {
      serialize_block(std::get<MapReduceBlock>(node), out);
    }
  }
}

void serialize_block(const MapReduceBlock& b, std::string& out) {
  out += tag_literal(TagKind::ParallelOpen);
  out += b.gap_open;
  out += tag_literal(TagKind::GoalOpen);
  out += b.goal_preamble;
  for (const auto& outline : b.outlines) {
    out += tag_literal(TagKind::OutlineOpen);
    out += outline.body;
    out += tag_literal(TagKind::OutlineClose);
    out += outline.gap_after;
  }
  out += tag_literal(TagKind::GoalClose);
  out += b.gap_goal_close;
  for (const auto& path : b.paths) {
    out += tag_literal(TagKind::PathOpen);
    serialize_nodes(path.nodes, out);
    out += tag_literal(TagKind::PathClose);
    out += path.gap_after;
  }
  out += tag_literal(TagKind::ConclusionOpen);
  out += b.conclusion;
  out += tag_literal(TagKind::ConclusionClose);
  out += b.gap_close;
  out += tag_literal(TagKind::ParallelClose);
}

std::string collapse_ws(std::string_view s) {
  std::string out;
  bool in_ws = false;
  for (char c : s) {
    if (is_ws(c)) {
      in_ws = true;
      continue;
    }
    if (in_ws && !out.empty()) out += ' ';
    in_ws = false;
    out += c;
  }
  return out;
}

bool text_equal(std::string_view a, std::string_view b, bool normalize) {
  if (!normalize) return a == b;
  return collapse_ws(a) == collapse_ws(b);
}

bool blocks_equal(const MapReduceBlock& a, const MapReduceBlock& b, bool normalize);

bool nodes_equal(const std::vector<Node>& a, const std::vector<Node>& b, bool normalize) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto* ta = std::get_if<std::string>(&a[i]);
    const auto* tb = std::get_if<std::string>(&b[i]);
    if ((ta == nullptr) != (tb == nullptr)) return false;
    if (ta) {
      if (!text_equal(*ta, *tb, normalize)) return false;
    } else if (!blocks_equal(std::get<MapReduceBlock>(a[i]), std::get<MapReduceBlock>(b[i]),
                             normalize)) {
      return false;
    }
  }
  return true;
}

bool blocks_equal(const MapReduceBlock& a, const MapReduceBlock& b, bool normalize) {
  if (a.outlines.size() != b.outlines.size() || a.paths.size() != b.paths.size()) return false;
  if (!text_equal(a.gap_open, b.gap_open, normalize)) return false;
  if (!text_equal(a.goal_preamble, b.goal_preamble, normalize)) return false;
  for (std::size_t i = 0; i < a.outlines.size(); ++i) {
    if (!text_equal(a.outlines[i].body, b.outlines[i].body, normalize)) return false;
    if (!text_equal(a.outlines[i].gap_after, b.outlines[i].gap_after, normalize)) return false;
  }
  if (!text_equal(a.gap_goal_close, b.gap_goal_close, normalize)) return false;
  for (std::size_t i = 0; i < a.paths.size(); ++i) {
    if (!nodes_equal(a.paths[i].nodes, b.paths[i].nodes, normalize)) return false;
    if (!text_equal(a.paths[i].gap_after, b.paths[i].gap_after, normalize)) return false;
  }
  if (!text_equal(a.conclusion, b.conclusion, normalize)) return false;
  return text_equal(a.gap_close, b.gap_close, normalize);
}

}  // namespace

Trajectory parse(const std::vector<TagToken>& tokens) {
  Parser parser(tokens);
  return parser.parse_trajectory();
}

Trajectory parse_text(std::string_view source) { return parse(lex(source)); }

std::string serialize(const Trajectory& t) {
  std::string out;
  serialize_nodes(t.nodes, out);
  return out;
}

std::string serialize(const MapReduceBlock& b) {
  std::string out;
  serialize_block(b, out);
  return out;
}

bool structurally_equal(const Trajectory& a, const Trajectory& b, bool normalize_whitespace) {
  return nodes_equal(a.nodes, b.nodes, normalize_whitespace);
}

ExtractResult extract_outermost_blocks(std::string_view source) {
  ExtractResult result;
  std::vector<TagToken> tokens = lex(source);
  std::size_t i = 0;
  while (i < tokens.size()) {
    const TagToken& tok = tokens[i];
    if (tok.kind == TagKind::Text) {
      ++i;
      continue;
    }
    if (tok.kind != TagKind::ParallelOpen) {
      result.violations.push_back(
          {tok.span, "stray " + std::string(tag_literal(tok.kind)) + " outside any block"});
      ++i;
      continue;
    }
    // Try to parse one full block starting here.
    std::vector<TagToken> rest(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.end());
    Parser parser(rest);
    try {
      MapReduceBlock block = parser.parse_block();
      std::size_t consumed = parser.consumed();
      std::size_t end_byte = rest[consumed - 1].span.end;
      result.blocks.emplace_back(std::move(block), Span{tok.span.begin, end_byte});
      i += consumed;
    } catch (const ParseError& err) {
      Span abs{err.span().begin, err.span().end};
      result.violations.push_back(
          {Span{tok.span.begin, abs.end},
           "malformed block: expected " + err.expected() + ", found " + err.found()});
      ++i;  // resume scanning right after the failed <Parallel>
    }
  }
  return result;
}

namespace {

void validate_block(const MapReduceBlock& block, const std::string& block_path,
                    const ValidationLimits& limits, ValidationReport& report) {
  BlockSummary summary;
  summary.block_path = block_path;
  summary.depth = block.depth();
  summary.paths = block.paths.size();

  const std::string prefix = block_path.empty() ? "" : block_path + ".";
  for (std::size_t i = 0; i < block.outlines.size(); ++i) {
    const auto& outline = block.outlines[i];
    std::string expected = prefix + std::to_string(i + 1);
    if (!outline.label) {
      report.findings.push_back({ValidationFinding::Kind::MissingLabel, block_path,
                                 "outline " + std::to_string(i + 1) + " has no index label"});
      summary.outline_labels.emplace_back("");
      continue;
    }
    summary.outline_labels.push_back(outline.label->dotted());
    if (outline.label->dotted() != expected) {
      report.findings.push_back({ValidationFinding::Kind::IndexGap, block_path,
                                 "outline label \"" + outline.label->raw + "\" where \"" +
                                     expected + "\" was expected"});
    }
  }
  for (std::size_t i = 0; i < block.paths.size(); ++i) {
    const auto& path = block.paths[i];
    std::string expected = prefix + std::to_string(i + 1);
    if (!path.label) {
      report.findings.push_back({ValidationFinding::Kind::MissingLabel, block_path,
                                 "path " + std::to_string(i + 1) + " has no index label"});
      continue;
    }
    if (path.label->dotted() != expected) {
      report.findings.push_back({ValidationFinding::Kind::IndexMismatch, block_path,
                                 "path label \"" + path.label->raw + "\" where \"" + expected +
                                     "\" was expected"});
    }
  }

  if (limits.max_paths && block.paths.size() > static_cast<std::size_t>(*limits.max_paths)) {
    report.findings.push_back({ValidationFinding::Kind::PathsExceeded, block_path,
                               std::to_string(block.paths.size()) + " paths > limit " +
                                   std::to_string(*limits.max_paths)});
    report.passed = false;
  }

  report.depth_histogram[summary.depth] += 1;
  report.path_counts.push_back(summary.paths);
  report.blocks.push_back(std::move(summary));

  for (std::size_t i = 0; i < block.paths.size(); ++i) {
    std::string child_path = prefix + std::to_string(i + 1);
    for (const auto& node : block.paths[i].nodes) {
      if (const auto* nested = std::get_if<MapReduceBlock>(&node)) {
        validate_block(*nested, child_path, limits, report);
      }
    }
  }
}

}  // namespace

ValidationReport validate(const Trajectory& t, const ValidationLimits& limits) {
  ValidationReport report;
  for (const auto& node : t.nodes) {
    if (const auto* block = std::get_if<MapReduceBlock>(&node)) {
      validate_block(*block, "", limits, report);
      if (limits.max_depth && block->depth() > *limits.max_depth) {
        report.findings.push_back({ValidationFinding::Kind::DepthExceeded, "",
                                   "block depth " + std::to_string(block->depth()) +
                                       " > limit " + std::to_string(*limits.max_depth)});
        report.passed = false;
      }
    }
  }
  return report;
}

}  // namespace multiverse::grammar
