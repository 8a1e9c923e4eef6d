#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prlab::xml {

class Error : public std::runtime_error {
 public:
  Error(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " at byte " + std::to_string(offset)), offset(offset) {}
  std::size_t offset;
};

struct Node {
  std::string name;
  std::string text;  // character data directly inside the element, trimmed
  std::vector<Node> children;

  const Node* child(std::string_view tag) const {
    for (const Node& c : children)
      if (c.name == tag) return &c;
    return nullptr;
  }
  const Node& require(std::string_view tag) const {
    const Node* c = child(tag);
    if (!c) throw std::invalid_argument("missing element <" + std::string(tag) + "> in <" + name + ">");
    return *c;
  }
  std::vector<const Node*> all(std::string_view tag) const {
    std::vector<const Node*> out;
    for (const Node& c : children)
      if (c.name == tag) out.push_back(&c);
    return out;
  }
};

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view doc) : doc_(doc) {}

  Node run() {
    skip_misc();
    if (eof()) throw Error("empty document", pos_);
    Node root = element();
    skip_misc();
    if (!eof()) throw Error("trailing content after root element", pos_);
    return root;
  }

 private:
  bool eof() const { return pos_ >= doc_.size(); }
  char peek() const { return doc_[pos_]; }
  bool lookahead(std::string_view s) const { return doc_.compare(pos_, s.size(), s) == 0; }

  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\n' || peek() == '\r'))
      ++pos_;
  }

  void skip_misc() {
    for (;;) {
      skip_ws();
      if (lookahead("<?")) {
        std::size_t end = doc_.find("?>", pos_);
        if (end == std::string_view::npos) throw Error("unterminated processing instruction", pos_);
        pos_ = end + 2;
      } else if (lookahead("<!--")) {
        skip_comment();
      } else {
        return;
      }
    }
  }

  void skip_comment() {
    std::size_t end = doc_.find("-->", pos_ + 4);
    if (end == std::string_view::npos) throw Error("unterminated comment", pos_);
    pos_ = end + 3;
  }

  static bool name_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == ':';
  }
  static bool name_char(char c) {
    return name_start(c) || (c >= '0' && c <= '9') || c == '-' || c == '.';
  }

  std::string tag_name() {
    if (eof() || !name_start(peek())) throw Error("expected element name", pos_);
    std::size_t start = pos_;
    while (!eof() && name_char(peek())) ++pos_;
    return std::string(doc_.substr(start, pos_ - start));
  }

  void attributes() {
    for (;;) {
      skip_ws();
      if (eof()) throw Error("unexpected end of document inside tag", pos_);
      if (peek() == '>' || peek() == '/') return;
      tag_name();
      skip_ws();
      if (eof() || peek() != '=') throw Error("expected '=' in attribute", pos_);
      ++pos_;
      skip_ws();
      if (eof() || (peek() != '"' && peek() != '\'')) throw Error("expected quoted attribute value", pos_);
      char quote = peek();
      ++pos_;
      std::size_t end = doc_.find(quote, pos_);
      if (end == std::string_view::npos) throw Error("unterminated attribute value", pos_);
      pos_ = end + 1;
    }
  }

  std::string entity() {
    std::size_t amp = pos_;
    std::size_t end = doc_.find(';', pos_);
    if (end == std::string_view::npos || end - pos_ > 8) throw Error("malformed entity reference", amp);
    std::string_view ref = doc_.substr(pos_ + 1, end - pos_ - 1);
    pos_ = end + 1;
    if (ref == "lt") return "<";
    if (ref == "gt") return ">";
    if (ref == "amp") return "&";
    if (ref == "quot") return "\"";
    if (ref == "apos") return "'";
    throw Error("unknown entity reference &" + std::string(ref) + ";", amp);
  }

  static void trim(std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) {
      s.clear();
      return;
    }
    std::size_t b = s.find_last_not_of(" \t\r\n");
    s = s.substr(a, b - a + 1);
  }

  Node element() {
    if (eof() || peek() != '<') throw Error("expected '<'", pos_);
    ++pos_;
    Node node;
    node.name = tag_name();
    attributes();
    if (peek() == '/') {
      ++pos_;
      if (eof() || peek() != '>') throw Error("malformed self-closing tag", pos_);
      ++pos_;
      return node;
    }
    ++pos_;  // '>'
    for (;;) {
      if (eof()) throw Error("unexpected end of document inside <" + node.name + ">", pos_);
      if (peek() == '<') {
        if (lookahead("</")) {
          pos_ += 2;
          std::size_t at = pos_;
          std::string closing = tag_name();
          if (closing != node.name)
            throw Error("mismatched closing tag </" + closing + "> for <" + node.name + ">", at);
          skip_ws();
          if (eof() || peek() != '>') throw Error("malformed closing tag", pos_);
          ++pos_;
          trim(node.text);
          return node;
        }
        if (lookahead("<!--")) {
          skip_comment();
          continue;
        }
        node.children.push_back(element());
      } else if (peek() == '&') {
        node.text += entity();
      } else {
        node.text += peek();
        ++pos_;
      }
    }
  }

  std::string_view doc_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Node parse(std::string_view doc) { return detail::Parser(doc).run(); }

}  // namespace prlab::xml
