#include "multiverse/curator.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace multiverse::curator {

// ============================================================================
// Edit distance
// ============================================================================

std::vector<char32_t> decode_utf8(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    std::size_t extra = 0;
    char32_t cp = c;
    if (c >= 0xF0) {
      extra = 3;
      cp = c & 0x07u;
    } else if (c >= 0xE0) {
      extra = 2;
      cp = c & 0x0Fu;
    } else if (c >= 0xC0) {
      extra = 1;
      cp = c & 0x1Fu;
    }
    if (extra > 0 && i + extra < text.size() + 1) {
      bool ok = true;
      for (std::size_t k = 1; k <= extra && ok; ++k) {
        if (i + k >= text.size() ||
            (static_cast<unsigned char>(text[i + k]) & 0xC0u) != 0x80u) {
          ok = false;
        }
      }
      if (ok) {
        for (std::size_t k = 1; k <= extra; ++k) {
          cp = (cp << 6) | (static_cast<unsigned char>(text[i + k]) & 0x3Fu);
        }
        out.push_back(cp);
        i += extra + 1;
        continue;
      }
    }
    out.push_back(c);  // invalid byte counts as one scalar
    ++i;
  }
  return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<char32_t> sa = decode_utf8(a);
  std::vector<char32_t> sb = decode_utf8(b);
  if (sa.size() < sb.size()) std::swap(sa, sb);  // keep the rows short

  std::vector<std::size_t> prev(sb.size() + 1), cur(sb.size() + 1);
  for (std::size_t j = 0; j <= sb.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= sa.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= sb.size(); ++j) {
      std::size_t sub = prev[j - 1] + (sa[i - 1] == sb[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[sb.size()];
}

EditDistanceResult relative_edit_distance(std::string_view a, std::string_view b,
                                          double threshold) {
  EditDistanceResult r;
  std::size_t la = decode_utf8(a).size();
  std::size_t lb = decode_utf8(b).size();
  std::size_t longest = std::max(la, lb);
  if (longest == 0) {
    // Both empty: identical, so distance 0 and an automatic pass.
    r.distance = 0;
    r.relative = 0.0;
    r.pass = true;
    return r;
  }
  r.distance = levenshtein(a, b);
  r.relative = static_cast<double>(r.distance) / static_cast<double>(longest);
  r.pass = r.relative <= threshold;
  return r;
}

// ============================================================================
// Content check
// ============================================================================

namespace {

// "S1:", "O2.3:", "1.2:" at line start, optionally indented.
std::optional<std::string> line_label(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  std::size_t start = i;
  if (i < line.size() && (line[i] == 'S' || line[i] == 'O')) ++i;
  bool any_digit = false;
  while (i < line.size() &&
         (std::isdigit(static_cast<unsigned char>(line[i])) || line[i] == '.')) {
    any_digit |= std::isdigit(static_cast<unsigned char>(line[i])) != 0;
    ++i;
  }
  if (!any_digit || i >= line.size() || line[i] != ':') return std::nullopt;
  return std::string(line.substr(start, i - start));
}

}  // namespace

std::optional<std::vector<Step>> split_labeled_steps(std::string_view text) {
  std::vector<Step> steps;
  std::size_t pos = 0;
  bool any_label = false;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                           : eol - pos);
    if (auto label = line_label(line)) {
      any_label = true;
      Step step;
      step.label = *label;
      std::size_t colon = line.find(':');
      step.text = std::string(line.substr(colon + 1));
      steps.push_back(std::move(step));
    } else if (!steps.empty()) {
      steps.back().text += '\n';
      steps.back().text += std::string(line);
    } else if (!line.empty()) {
      steps.push_back(Step{"", std::string(line)});
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  if (!any_label) return std::nullopt;
  return steps;
}

AlignmentError::AlignmentError(std::vector<std::string> only_in_original,
                               std::vector<std::string> only_in_refilled)
    : std::runtime_error("step labels do not align"),
      only_in_original_(std::move(only_in_original)),
      only_in_refilled_(std::move(only_in_refilled)) {}

ContentCheckResult content_check(const std::vector<Step>& original_steps,
                                 const std::vector<Step>& refilled_steps, double threshold) {
  std::map<std::string, const Step*> by_label;
  for (const auto& s : refilled_steps) by_label[s.label] = &s;

  std::vector<std::string> only_original, only_refilled;
  for (const auto& s : original_steps) {
    if (!by_label.count(s.label)) only_original.push_back(s.label);
  }
  {
    std::map<std::string, bool> original_labels;
    for (const auto& s : original_steps) original_labels[s.label] = true;
    for (const auto& s : refilled_steps) {
      if (!original_labels.count(s.label)) only_refilled.push_back(s.label);
    }
  }
  if (!only_original.empty() || !only_refilled.empty()) {
    throw AlignmentError(std::move(only_original), std::move(only_refilled));
  }

  ContentCheckResult out;
  for (const auto& s : original_steps) {
    StepCheck check;
    check.label = s.label;
    check.result = relative_edit_distance(s.text, by_label[s.label]->text, threshold);
    if (!check.result.pass) {
      out.pass = false;
      out.failing_labels.push_back(s.label);
    }
    out.steps.push_back(std::move(check));
  }
  return out;
}

// ============================================================================
// Grammar gate
// ============================================================================

GrammarGateResult grammar_gate(std::string_view text) {
  GrammarGateResult out;
  grammar::ExtractResult extracted = grammar::extract_outermost_blocks(text);
  out.blocks = std::move(extracted.blocks);
  out.violations = std::move(extracted.violations);
  out.pass = out.violations.empty();
  return out;
}

// ============================================================================
// Independence lint
// ============================================================================

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool iequal(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (lower(a[i]) != lower(b[i])) return false;
  }
  return true;
}

// Case-insensitive word-boundary occurrences of `phrase` in `text`.
std::vector<std::size_t> find_phrase(std::string_view text, std::string_view phrase) {
  std::vector<std::size_t> hits;
  if (phrase.empty() || text.size() < phrase.size()) return hits;
  for (std::size_t i = 0; i + phrase.size() <= text.size(); ++i) {
    if (!iequal(text.substr(i, phrase.size()), phrase)) continue;
    bool left_ok = i == 0 || !is_word_char(text[i - 1]);
    std::size_t after = i + phrase.size();
    bool right_ok = after >= text.size() || !is_word_char(text[after]);
    if (left_ok && right_ok) hits.push_back(i);
  }
  return hits;
}

// Serializer twin that records the offset of every path text piece within
// serialize(block), so lint spans stay byte-accurate.
struct OffsetWalker {
  const LintConfig& config;
  std::vector<LintFinding>& findings;
  std::string out;

  void walk_block(const grammar::MapReduceBlock& block, const std::string& prefix) {
    using grammar::TagKind;
    append(grammar::tag_literal(TagKind::ParallelOpen));
    append(block.gap_open);
    append(grammar::tag_literal(TagKind::GoalOpen));
    append(block.goal_preamble);
    for (const auto& outline : block.outlines) {
      append(grammar::tag_literal(TagKind::OutlineOpen));
      append(outline.body);
      append(grammar::tag_literal(TagKind::OutlineClose));
      append(outline.gap_after);
    }
    append(grammar::tag_literal(TagKind::GoalClose));
    append(block.gap_goal_close);
    for (std::size_t k = 0; k < block.paths.size(); ++k) {
      std::string path_id = prefix.empty() ? std::to_string(k + 1)
                                           : prefix + "." + std::to_string(k + 1);
      append(grammar::tag_literal(TagKind::PathOpen));
      for (const auto& node : block.paths[k].nodes) {
        if (const auto* text = std::get_if<std::string>(&node)) {
          scan_text(*text, path_id, block.paths.size(), k + 1);
          append(*text);
        } else {
          walk_block(std::get<grammar::MapReduceBlock>(node), path_id);
        }
      }
      append(grammar::tag_literal(TagKind::PathClose));
      append(block.paths[k].gap_after);
    }
    append(grammar::tag_literal(TagKind::ConclusionOpen));
    append(block.conclusion);
    append(grammar::tag_literal(TagKind::ConclusionClose));
    append(block.gap_close);
    append(grammar::tag_literal(TagKind::ParallelClose));
  }

  void append(std::string_view piece) { out += piece; }

  void scan_text(const std::string& text, const std::string& path_id, std::size_t siblings,
                 std::size_t ordinal) {
    std::size_t base = out.size();
    for (const auto& phrase : config.phrases) {
      for (std::size_t off : find_phrase(text, phrase)) {
        findings.push_back(LintFinding{path_id,
                                       text.substr(off, phrase.size()),
                                       {base + off, base + off + phrase.size()},
                                       "transitional_phrase"});
      }
    }
    if (!config.flag_cross_references) return;
    for (std::size_t sib = 1; sib <= siblings; ++sib) {
      if (sib == ordinal) continue;  // self references are fine
      std::string needle = "Path " + std::to_string(sib);
      for (std::size_t off : find_phrase(text, needle)) {
        findings.push_back(LintFinding{path_id,
                                       text.substr(off, needle.size()),
                                       {base + off, base + off + needle.size()},
                                       "cross_path_reference"});
      }
    }
  }
};

}  // namespace

std::vector<LintFinding> independence_lint(const grammar::MapReduceBlock& block,
                                           const LintConfig& config) {
  std::vector<LintFinding> findings;
  OffsetWalker walker{config, findings, {}};
  walker.walk_block(block, "");
  return findings;
}

// ============================================================================
// Pipeline
// ============================================================================

namespace {

constexpr const char* kBuiltinPrompts[kPipelineStages] = {
    "Stage 1: break the reasoning into labeled steps (S1, S2, ...) and label "
    "substeps (S2.1) where a step divides cleanly.",
    "Stage 2: group adjacent steps that share no dependencies into parallel "
    "groups (P1: [S1+S2, S3]).",
    "Stage 3: rewrite the summary as an outline whose independent sibling "
    "steps sit inside <parallel> markers, at most two levels deep.",
    "Stage 4: refill each outlined step with its full original text, keeping "
    "every marker where it is.",
    "Stage 5: convert the outline into tagged blocks (<Parallel>, <Goal>, "
    "<Outline>, <Path>, <Conclusion>), writing each path so it stands alone.",
};

}  // namespace

PromptLibrary PromptLibrary::builtin() {
  PromptLibrary lib;
  for (int i = 0; i < kPipelineStages; ++i) lib.prompts_.emplace_back(kBuiltinPrompts[i]);
  return lib;
}

PromptLibrary PromptLibrary::load_dir(const std::string& dir) {
  PromptLibrary lib;
  for (int stage = 1; stage <= kPipelineStages; ++stage) {
    std::string path = dir + "/stage" + std::to_string(stage) + ".txt";
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      throw std::runtime_error("missing prompt file: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    lib.prompts_.push_back(ss.str());
  }
  return lib;
}

const std::string& PromptLibrary::prompt(int stage) const {
  return prompts_.at(static_cast<std::size_t>(stage - 1));
}

namespace {

// Content comparison for stage 4: per-step when both sides carry labels,
// whole-text otherwise.
ContentCheckResult run_content_check(const std::string& original, const std::string& refilled,
                                     const PipelineOptions& options) {
  if (options.per_step_content_check) {
    auto original_steps = split_labeled_steps(original);
    auto refilled_steps = split_labeled_steps(refilled);
    if (original_steps && refilled_steps) {
      return content_check(*original_steps, *refilled_steps, options.content_threshold);
    }
  }
  ContentCheckResult out;
  StepCheck whole;
  whole.label = "";
  whole.result = relative_edit_distance(original, refilled, options.content_threshold);
  out.pass = whole.result.pass;
  if (!out.pass) out.failing_labels.push_back("");
  out.steps.push_back(std::move(whole));
  return out;
}

}  // namespace

CurationRecord pipeline_run(const std::string& input, const StageBackend& backend,
                            const PromptLibrary& prompts, const PipelineOptions& options) {
  CurationRecord record;
  std::string previous;

  for (int stage = 1; stage <= kPipelineStages; ++stage) {
    StageRecord sr;
    sr.stage = stage;
    bool accepted = false;

    for (int attempt = 0; attempt <= options.max_regens; ++attempt) {
      StageInput in;
      in.stage = stage;
      in.attempt = attempt;
      in.prompt = prompts.prompt(stage);
      in.previous = previous;
      in.original = input;
      std::string output = backend(in);

      bool ok = true;
      if (stage == 4) {
        ContentCheckResult check = run_content_check(input, output, options);
        ok = check.pass;
        if (ok || attempt == options.max_regens) record.content = check;
      } else if (stage == 5) {
        GrammarGateResult gate = grammar_gate(output);
        ok = gate.pass;
        if (ok || attempt == options.max_regens) {
          if (ok) {
            for (const auto& [block, span] : gate.blocks) {
              auto findings = independence_lint(block);
              record.lint.insert(record.lint.end(), findings.begin(), findings.end());
            }
          }
          record.grammar = std::move(gate);
        }
      }

      if (ok) {
        sr.output = std::move(output);
        sr.regeneration_count = attempt;
        accepted = true;
        break;
      }
      sr.rejected.push_back(std::move(output));
    }

    if (!accepted) {
      sr.regeneration_count = options.max_regens;
      record.stages.push_back(std::move(sr));
      record.status = CurationStatus::RegenerationExhausted;
      record.failed_stage = stage;
      return record;
    }
    previous = sr.output;
    record.stages.push_back(std::move(sr));
  }

  record.status = CurationStatus::Accepted;
  return record;
}

}  // namespace multiverse::curator
