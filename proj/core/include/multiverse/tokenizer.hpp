#pragma once

/**
 * Fixture tokenizer: whitespace splitting with the ten control tags atomic.
 * Token ids come from a deterministic first-seen vocabulary (tag literals
 * pre-seeded at ids 0..9), so identical text always maps to identical ids.
 */

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "multiverse/grammar.hpp"

namespace multiverse::tok {

enum class TokenizerMode {
  Whitespace,  // text runs split on [ \t\r\n]+
  Character,   // every non-whitespace char of a text run is its own token
};

/// Parses "whitespace" / "char"; returns nullopt for anything else.
std::optional<TokenizerMode> tokenizer_mode_from_string(std::string_view name);
std::string_view to_string(TokenizerMode mode);

struct Token {
  std::string text;
  int id = -1;
  bool is_tag = false;
  grammar::TagKind tag = grammar::TagKind::Text;
};

/// Deterministic string->id table. Tag literals occupy ids 0..9; everything
/// else is assigned in first-seen order.
class Vocab {
 public:
  Vocab();

  int id_of(std::string_view text);                 // inserts when missing
  std::optional<int> lookup(std::string_view text) const;
  const std::string& text_of(int id) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> index_;
};

class Tokenizer {
 public:
  explicit Tokenizer(TokenizerMode mode = TokenizerMode::Whitespace) : mode_(mode) {}

  TokenizerMode mode() const { return mode_; }
  Vocab& vocab() { return vocab_; }
  const Vocab& vocab() const { return vocab_; }

  /// Tokenizes raw text: tags become single tokens, text runs split per mode.
  std::vector<Token> tokenize(std::string_view source);

  /// Tokenizes a text run only (no tag detection).
  std::vector<Token> tokenize_text_run(std::string_view text);

  Token tag_token(grammar::TagKind kind);
  Token text_token(std::string_view text);

 private:
  TokenizerMode mode_;
  Vocab vocab_;
};

/// Joins token texts with single spaces (diagnostic rendering; not a
/// byte-exact inverse of tokenize).
std::string detokenize(const std::vector<Token>& tokens);

}  // namespace multiverse::tok
