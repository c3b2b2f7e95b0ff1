#include "lego/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "lego/errors.hpp"

namespace lego {

namespace {

class TomlParser {
 public:
  TomlParser(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (!at_end()) {
      skip_space_and_comments(true);
      if (at_end()) break;
      if (peek() == '[') {
        ++pos_;
        table = &root;
        for (const auto& part : split_dotted(read_until(']'))) {
          auto& next = (*table)[part];
          if (next.is_null()) next = nlohmann::json::object();
          if (!next.is_object()) fail("'" + part + "' is both a value and a table");
          table = &next;
        }
        expect(']');
      } else {
        const std::string key = read_key();
        skip_inline_space();
        expect('=');
        skip_inline_space();
        if (table->contains(key)) fail("duplicate key '" + key + "'");
        (*table)[key] = read_value();
      }
      skip_inline_space();
      if (!at_end() && peek() == '#') skip_comment();
      if (!at_end() && peek() != '\n' && peek() != '\r') fail("unexpected text after value");
    }
    return root;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  [[noreturn]] void fail(const std::string& msg) const {
    int line = 1;
    for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) line += text_[i] == '\n';
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
  }

  void expect(char c) {
    if (at_end() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_comment() {
    while (!at_end() && peek() != '\n') ++pos_;
  }

  void skip_inline_space() {
    while (!at_end() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_space_and_comments(bool newlines) {
    while (!at_end()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || (newlines && (c == '\n' || c == '\r'))) {
        ++pos_;
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  std::string read_until(char end) {
    const auto stop = text_.find(end, pos_);
    if (stop == std::string_view::npos) fail(std::string("missing '") + end + "'");
    std::string out(text_.substr(pos_, stop - pos_));
    pos_ = stop;
    return out;
  }

  std::vector<std::string> split_dotted(const std::string& name) {
    std::vector<std::string> parts;
    std::stringstream ss(name);
    for (std::string p; std::getline(ss, p, '.');) {
      const auto b = p.find_first_not_of(" \t");
      const auto e = p.find_last_not_of(" \t");
      if (b == std::string::npos) fail("empty table name component");
      parts.push_back(p.substr(b, e - b + 1));
    }
    if (parts.empty()) fail("empty table name");
    return parts;
  }

  std::string read_key() {
    if (!at_end() && peek() == '"') return read_string();
    const auto start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
    if (pos_ == start) fail("expected a key");
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string read_string() {
    expect('"');
    std::string out;
    while (true) {
      if (at_end() || peek() == '\n') fail("unterminated string");
      const char c = text_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (at_end()) fail("unterminated escape");
        const char e = text_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  nlohmann::json read_value() {
    if (at_end()) fail("missing value");
    const char c = peek();
    if (c == '"') return read_string();
    if (c == '[') {
      ++pos_;
      nlohmann::json arr = nlohmann::json::array();
      while (true) {
        skip_space_and_comments(true);
        if (at_end()) fail("unterminated array");
        if (peek() == ']') {
          ++pos_;
          return arr;
        }
        arr.push_back(read_value());
        skip_space_and_comments(true);
        if (!at_end() && peek() == ',') {
          ++pos_;
        } else if (at_end() || peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
    }
    const auto start = pos_;
    while (!at_end() && peek() != ',' && peek() != ']' && peek() != '#' && peek() != '\n' && peek() != '\r' &&
           peek() != ' ' && peek() != '\t') {
      ++pos_;
    }
    std::string word(text_.substr(start, pos_ - start));
    if (word == "true") return true;
    if (word == "false") return false;
    std::string digits;
    for (char ch : word) {
      if (ch != '_') digits += ch;
    }
    if (digits.empty()) fail("missing value");
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), i);
    if (ec == std::errc() && p == digits.data() + digits.size()) return i;
    double d = 0;
    auto [pd, ecd] = std::from_chars(digits.data(), digits.data() + digits.size(), d);
    if (ecd == std::errc() && pd == digits.data() + digits.size()) return d;
    fail("cannot parse value '" + word + "'");
  }

  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json parse_toml(std::string_view text, const std::string& source) {
  return TomlParser(text, source).parse();
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (path.extension() == ".json") {
    try {
      auto j = nlohmann::json::parse(text);
      if (!j.is_object()) throw ConfigError(path.string() + ": top level must be an object");
      return j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  return parse_toml(text, path.string());
}

}  // namespace lego
