#include "multiverse/tokenizer.hpp"

#include <stdexcept>
#include <unordered_map>

namespace multiverse::tok {

namespace {

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

}  // namespace

std::optional<TokenizerMode> tokenizer_mode_from_string(std::string_view name) {
  if (name == "whitespace" || name == "ws") return TokenizerMode::Whitespace;
  if (name == "char" || name == "character") return TokenizerMode::Character;
  return std::nullopt;
}

std::string_view to_string(TokenizerMode mode) {
  return mode == TokenizerMode::Whitespace ? "whitespace" : "char";
}

Vocab::Vocab() {
  using grammar::TagKind;
  for (int k = 0; k < grammar::kTagLiteralCount; ++k) {
    std::string literal(grammar::tag_literal(static_cast<TagKind>(k)));
    index_.emplace(literal, k);
    entries_.push_back(std::move(literal));
  }
}

int Vocab::id_of(std::string_view text) {
  std::string key(text);
  auto it = index_.find(key);
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(entries_.size());
  index_.emplace(key, id);
  entries_.push_back(std::move(key));
  return id;
}

std::optional<int> Vocab::lookup(std::string_view text) const {
  auto it = index_.find(std::string(text));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::text_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
    throw std::out_of_range("vocab id " + std::to_string(id));
  }
  return entries_[static_cast<std::size_t>(id)];
}

Token Tokenizer::tag_token(grammar::TagKind kind) {
  Token t;
  t.text = std::string(grammar::tag_literal(kind));
  t.id = static_cast<int>(kind);
  t.is_tag = true;
  t.tag = kind;
  return t;
}

Token Tokenizer::text_token(std::string_view text) {
  Token t;
  t.text = std::string(text);
  t.id = vocab_.id_of(text);
  return t;
}

std::vector<Token> Tokenizer::tokenize_text_run(std::string_view text) {
  std::vector<Token> out;
  if (mode_ == TokenizerMode::Whitespace) {
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_ws(text[i])) ++i;
      std::size_t start = i;
      while (i < text.size() && !is_ws(text[i])) ++i;
      if (i > start) out.push_back(text_token(text.substr(start, i - start)));
    }
  } else {
    for (char c : text) {
      if (!is_ws(c)) out.push_back(text_token(std::string_view(&c, 1)));
    }
  }
  return out;
}

std::vector<Token> Tokenizer::tokenize(std::string_view source) {
  std::vector<Token> out;
  for (const auto& piece : grammar::lex(source)) {
    if (piece.is_tag()) {
      out.push_back(tag_token(piece.kind));
    } else {
      auto run = tokenize_text_run(piece.raw);
      out.insert(out.end(), run.begin(), run.end());
    }
  }
  return out;
}

std::string detokenize(const std::vector<Token>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t.text;
  }
  return out;
}

}  // namespace multiverse::tok
