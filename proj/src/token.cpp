#include "p2im/token.hpp"

#include <algorithm>
#include <array>
#include <unordered_set>

#include "p2im/errors.hpp"

namespace p2im {

std::string_view to_string(TokenKind kind) {
  switch (kind) {
  case TokenKind::identifier: return "identifier";
  case TokenKind::keyword: return "keyword";
  case TokenKind::numeric_literal: return "numeric-literal";
  case TokenKind::string_literal: return "string-literal";
  case TokenKind::char_literal: return "char-literal";
  case TokenKind::punctuation: return "punctuation";
  case TokenKind::preprocessor_line: return "preprocessor-line";
  case TokenKind::comment: return "comment";
  }
  return "unknown";
}

namespace {

const std::unordered_set<std::string_view>& keywords() {
  static const std::unordered_set<std::string_view> set = {
      "auto",      "break",     "case",      "char",     "const",    "continue", "default",
      "do",        "double",    "else",      "enum",     "extern",   "float",    "for",
      "goto",      "if",        "inline",    "int",      "long",     "register", "restrict",
      "return",    "short",     "signed",    "sizeof",   "static",   "struct",   "switch",
      "typedef",   "union",     "unsigned",  "void",     "volatile", "while",    "_Bool",
      "bool",      "class",     "namespace", "new",      "delete",   "template", "typename",
      "this",      "throw",     "try",       "catch",    "public",   "private",  "protected",
      "virtual",   "operator",  "using",     "nullptr",  "true",     "false",    "constexpr",
      "noexcept",  "explicit",  "friend",    "mutable",  "static_cast", "const_cast",
      "dynamic_cast", "reinterpret_cast", "decltype", "wchar_t",
  };
  return set;
}

// Longest match first.
constexpr std::array<std::string_view, 27> kMultiCharPunct = {
    "<<=", ">>=", "...", "->*", "<=>", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=",
    "&&",  "||",  "+=",  "-=",  "*=",  "/=", "%=", "&=", "|=", "^=", "::", "##", ".*",
};

bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == '$';
}
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_ident_char(char c) { return is_ident_start(c) || is_digit(c); }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }

void rtrim(std::string& s) {
  while (!s.empty() && (is_space(s.back()) || s.back() == '\n'))
    s.pop_back();
}

class Lexer {
public:
  Lexer(std::string_view src, const TokenizerProfile& profile) : src_(src), profile_(profile) {}

  std::vector<Token> run() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '\n') {
        ++line_;
        ++pos_;
        at_line_start_ = true;
        continue;
      }
      if (is_space(c)) {
        ++pos_;
        continue;
      }
      if (c == '\\' && peek(1) == '\n') {
        pos_ += 2;
        ++line_;
        continue;
      }
      if (c == '/' && peek(1) == '/') {
        line_comment();
        continue;
      }
      if (c == '/' && peek(1) == '*') {
        block_comment();
        continue;
      }
      if (c == '#' && at_line_start_ && profile_.preprocessor_atomic) {
        directive();
        continue;
      }
      at_line_start_ = false;
      if (is_ident_start(c)) {
        identifier();
      } else if (is_digit(c) || (c == '.' && is_digit(peek(1)))) {
        number();
      } else if (c == '"' || c == '\'') {
        literal(pos_, pos_);
      } else {
        punctuation();
      }
    }
    return std::move(tokens_);
  }

private:
  char peek(std::size_t ahead) const {
    return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
  }

  void emit(std::string text, TokenKind kind, int line) {
    tokens_.push_back(Token{std::move(text), line, kind});
  }

  void line_comment() {
    std::size_t end = src_.find('\n', pos_);
    if (end == std::string_view::npos)
      end = src_.size();
    if (!profile_.strip_comments) {
      std::string text(src_.substr(pos_, end - pos_));
      rtrim(text);
      emit(std::move(text), TokenKind::comment, line_);
    }
    pos_ = end;
  }

  void block_comment() {
    const int start_line = line_;
    std::size_t end = src_.find("*/", pos_ + 2);
    if (end == std::string_view::npos)
      throw TokenizeError("unterminated block comment", start_line);
    std::string_view body = src_.substr(pos_, end + 2 - pos_);
    line_ += static_cast<int>(std::count(body.begin(), body.end(), '\n'));
    if (!profile_.strip_comments) {
      std::string text(body);
      std::replace(text.begin(), text.end(), '\n', ' ');
      std::erase(text, '\r');
      emit(std::move(text), TokenKind::comment, start_line);
    }
    pos_ = end + 2;
  }

  // One directive line, continuations joined, comments handled per profile.
  void directive() {
    const int start_line = line_;
    std::string text;
    char quote = '\0';
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '\\' && peek(1) == '\n') {
        pos_ += 2;
        ++line_;
        continue;
      }
      if (c == '\n')
        break;
      if (quote != '\0') {
        text += c;
        if (c == '\\' && pos_ + 1 < src_.size() && peek(1) != '\n') {
          text += src_[pos_ + 1];
          pos_ += 2;
          continue;
        }
        if (c == quote)
          quote = '\0';
        ++pos_;
        continue;
      }
      if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '/' && peek(1) == '/') {
        std::size_t end = src_.find('\n', pos_);
        if (end == std::string_view::npos)
          end = src_.size();
        if (!profile_.strip_comments)
          text.append(src_.substr(pos_, end - pos_));
        pos_ = end;
        continue;
      } else if (c == '/' && peek(1) == '*') {
        std::size_t end = src_.find("*/", pos_ + 2);
        if (end == std::string_view::npos)
          throw TokenizeError("unterminated block comment", line_);
        std::string_view body = src_.substr(pos_, end + 2 - pos_);
        line_ += static_cast<int>(std::count(body.begin(), body.end(), '\n'));
        if (profile_.strip_comments) {
          text += ' ';
        } else {
          std::string kept(body);
          std::replace(kept.begin(), kept.end(), '\n', ' ');
          text += kept;
        }
        pos_ = end + 2;
        continue;
      }
      if (c != '\r')
        text += c;
      ++pos_;
    }
    rtrim(text);
    emit(std::move(text), TokenKind::preprocessor_line, start_line);
  }

  void identifier() {
    std::size_t start = pos_;
    while (pos_ < src_.size() && is_ident_char(src_[pos_]))
      ++pos_;
    std::string_view word = src_.substr(start, pos_ - start);
    char next = peek(0);
    if ((next == '"' || next == '\'') && (word == "L" || word == "u" || word == "U" || word == "u8")) {
      literal(start, pos_);
      return;
    }
    emit(std::string(word), keywords().contains(word) ? TokenKind::keyword : TokenKind::identifier,
         line_);
  }

  void number() {
    std::size_t start = pos_;
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if ((c == '+' || c == '-') && pos_ > start) {
        char prev = src_[pos_ - 1];
        if (prev == 'e' || prev == 'E' || prev == 'p' || prev == 'P') {
          ++pos_;
          continue;
        }
        break;
      }
      if (c == '\'' && is_ident_char(peek(1)) && pos_ > start) {
        ++pos_;
        continue;
      }
      if (!is_ident_char(c) && c != '.')
        break;
      ++pos_;
    }
    emit(std::string(src_.substr(start, pos_ - start)), TokenKind::numeric_literal, line_);
  }

  // `start` is where the token text begins (a prefix such as L), `quote_pos`
  // the opening quote.
  void literal(std::size_t start, std::size_t quote_pos) {
    const char quote = src_[quote_pos];
    const int start_line = line_;
    std::string text(src_.substr(start, quote_pos - start));
    text += quote;
    pos_ = quote_pos + 1;
    const char* what = quote == '"' ? "unterminated string literal" : "unterminated char literal";
    while (true) {
      if (pos_ >= src_.size() || src_[pos_] == '\n')
        throw TokenizeError(what, start_line);
      char c = src_[pos_];
      if (c == '\\') {
        if (peek(1) == '\n') {
          pos_ += 2;
          ++line_;
          continue;
        }
        if (pos_ + 1 >= src_.size())
          throw TokenizeError(what, start_line);
        text += c;
        text += src_[pos_ + 1];
        pos_ += 2;
        continue;
      }
      text += c;
      ++pos_;
      if (c == quote)
        break;
    }
    emit(std::move(text),
         quote == '"' ? TokenKind::string_literal : TokenKind::char_literal, start_line);
  }

  void punctuation() {
    std::string_view rest = src_.substr(pos_);
    for (std::string_view p : kMultiCharPunct) {
      if (rest.starts_with(p)) {
        emit(std::string(p), TokenKind::punctuation, line_);
        pos_ += p.size();
        return;
      }
    }
    // Keep UTF-8 sequences together.
    std::size_t len = 1;
    if (static_cast<unsigned char>(src_[pos_]) >= 0xC0) {
      while (pos_ + len < src_.size() && (static_cast<unsigned char>(src_[pos_ + len]) & 0xC0) == 0x80)
        ++len;
    }
    emit(std::string(src_.substr(pos_, len)), TokenKind::punctuation, line_);
    pos_ += len;
  }

  std::string_view src_;
  TokenizerProfile profile_;
  std::size_t pos_ = 0;
  int line_ = 1;
  bool at_line_start_ = true;
  std::vector<Token> tokens_;
};

} // namespace

TokenSequence tokenize(std::string_view source, const TokenizerProfile& profile,
                       std::string sample_id) {
  return TokenSequence{std::move(sample_id), Lexer(source, profile).run()};
}

std::string render(std::span<const Token> tokens) {
  std::string out;
  const Token* prev = nullptr;
  for (const Token& tok : tokens) {
    if (prev != nullptr) {
      bool own_line = tok.kind == TokenKind::preprocessor_line ||
                      prev->kind == TokenKind::preprocessor_line || tok.line != prev->line;
      out += own_line ? '\n' : ' ';
    }
    out += tok.text;
    prev = &tok;
  }
  return out;
}

std::set<int> surviving_lines(std::span<const Token> tokens) {
  std::set<int> lines;
  for (const Token& tok : tokens)
    lines.insert(tok.line);
  return lines;
}

bool is_subsequence(const std::vector<Token>& sub, const std::vector<Token>& seq) {
  auto it = seq.begin();
  for (const Token& tok : sub) {
    it = std::find(it, seq.end(), tok);
    if (it == seq.end())
      return false;
    ++it;
  }
  return true;
}

double reduction_rate(std::size_t original_len, std::size_t minimal_len) {
  if (original_len == 0)
    throw ContractViolation("reduction_rate: original sequence is empty");
  if (minimal_len == 0 || minimal_len > original_len)
    throw ContractViolation("reduction_rate: minimal length must be in [1, original length]");
  return 1.0 - static_cast<double>(minimal_len) / static_cast<double>(original_len);
}

double reduction_rate(const TokenSequence& original, const TokenSequence& minimal) {
  if (!is_subsequence(minimal.tokens, original.tokens))
    throw ContractViolation("reduction_rate: minimal is not a subsequence of original");
  return reduction_rate(original.size(), minimal.size());
}

std::string normalized_text(std::string_view source) {
  std::string out;
  try {
    for (const Token& tok : tokenize(source).tokens) {
      if (!out.empty())
        out += ' ';
      out += tok.text;
    }
  } catch (const TokenizeError&) {
    // Not lexable; fall back to collapsing whitespace runs.
    out.clear();
    bool pending_space = false;
    for (char c : source) {
      if (is_space(c) || c == '\n') {
        pending_space = !out.empty();
        continue;
      }
      if (pending_space)
        out += ' ';
      pending_space = false;
      out += c;
    }
  }
  return out;
}

} // namespace p2im
