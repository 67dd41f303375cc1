#pragma once

#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace p2im {

enum class TokenKind {
  identifier,
  keyword,
  numeric_literal,
  string_literal,
  char_literal,
  punctuation,
  preprocessor_line,
  comment, // only produced when comments are kept
};

std::string_view to_string(TokenKind kind);

struct Token {
  std::string text;
  int line = 1;
  TokenKind kind = TokenKind::identifier;

  friend bool operator==(const Token&, const Token&) = default;
};

struct TokenSequence {
  std::string sample_id;
  std::vector<Token> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
};

struct TokenizerProfile {
  bool strip_comments = true;
  bool preprocessor_atomic = true;
};

/// Splits C-like source into lexical tokens. String and char literals are
/// single tokens; with `preprocessor_atomic` each directive (continuations
/// joined) is one token. Throws TokenizeError on unterminated literals or
/// block comments.
TokenSequence tokenize(std::string_view source, const TokenizerProfile& profile = {},
                       std::string sample_id = {});

/// Tokens on one origin line are joined by single spaces; a newline separates
/// lines. Preprocessor tokens always sit on a line of their own.
std::string render(std::span<const Token> tokens);
inline std::string render(const TokenSequence& seq) { return render(seq.tokens); }

std::set<int> surviving_lines(std::span<const Token> tokens);
inline std::set<int> surviving_lines(const TokenSequence& seq) { return surviving_lines(seq.tokens); }

bool is_subsequence(const std::vector<Token>& sub, const std::vector<Token>& seq);

/// 1 - |minimal| / |original|. `minimal` must be a non-empty subsequence of `original`.
double reduction_rate(const TokenSequence& original, const TokenSequence& minimal);
double reduction_rate(std::size_t original_len, std::size_t minimal_len);

/// Token texts joined with single spaces, ignoring line structure. Used for
/// whitespace-insensitive pattern matching.
std::string normalized_text(std::string_view source);

} // namespace p2im
