#include "lego/sequence.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "lego/errors.hpp"

namespace lego {

namespace {

constexpr const char* kAssign = "=";
constexpr const char* kApply = "∘";
constexpr const char* kSep = ";";
constexpr const char* kPad = "<pad>";

}  // namespace

Vocab::Vocab(const GroupSpec& g, int num_symbols)
    : num_elements_(g.order()), num_symbols_(num_symbols) {
  if (num_symbols < 1 || num_symbols > 26) {
    throw ConfigError("symbol library size must be in [1, 26], got " + std::to_string(num_symbols));
  }
  for (const auto& e : g.elements()) texts_.push_back(e.name);
  for (int s = 0; s < num_symbols; ++s) texts_.emplace_back(1, static_cast<char>('a' + s));
  for (const char* t : {kAssign, kApply, kSep, kPad}) texts_.emplace_back(t);
  std::vector<std::string> sorted = texts_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw DataError("element names collide with symbol or structural tokens");
  }
}

int Vocab::element_token(ElementId e) const {
  if (e < 0 || e >= num_elements_) throw DataError("vocabulary has no element id " + std::to_string(e));
  return e;
}

int Vocab::symbol_token(int symbol) const {
  if (symbol < 0 || symbol >= num_symbols_) {
    throw DataError("vocabulary has no symbol index " + std::to_string(symbol));
  }
  return num_elements_ + symbol;
}

int Vocab::symbol_of(int token) const {
  if (!is_symbol(token)) throw DataError("token " + std::to_string(token) + " is not a symbol");
  return token - num_elements_;
}

const std::string& Vocab::text(int token) const {
  if (token < 0 || token >= size()) throw DataError("token id " + std::to_string(token) + " out of range");
  return texts_[static_cast<std::size_t>(token)];
}

int Vocab::token(std::string_view text) const {
  auto it = std::find(texts_.begin(), texts_.end(), text);
  if (it == texts_.end()) throw DataError("unknown token '" + std::string(text) + "'");
  return static_cast<int>(it - texts_.begin());
}

std::vector<ElementId> LegoSequence::targets() const {
  std::vector<ElementId> out;
  out.reserve(clauses.size());
  for (const auto& c : clauses) out.push_back(c.value);
  return out;
}

std::vector<int> TokenizedExample::clause_map() const {
  std::vector<int> out(tokens.size());
  for (int p = 0; p < length(); ++p) out[static_cast<std::size_t>(p)] = clause_of_token(p);
  return out;
}

LegoSequence build_sequence(const GroupSpec& g, ElementId start, const std::vector<ElementId>& relations,
                            std::vector<int> symbols) {
  const int length = static_cast<int>(relations.size()) + 1;
  if (symbols.empty()) {
    symbols.resize(static_cast<std::size_t>(length));
    std::iota(symbols.begin(), symbols.end(), 0);
  }
  if (static_cast<int>(symbols.size()) != length) {
    throw DataError("need " + std::to_string(length) + " symbols, got " + std::to_string(symbols.size()));
  }
  LegoSequence seq;
  seq.clauses.push_back({symbols[0], -1, start, g.compose(start, g.identity())});
  for (int t = 1; t < length; ++t) {
    const auto& prev = seq.clauses.back();
    const ElementId rel = relations[static_cast<std::size_t>(t - 1)];
    seq.clauses.push_back({symbols[static_cast<std::size_t>(t)], prev.symbol, rel, g.compose(prev.value, rel)});
  }
  seq.presentation.resize(static_cast<std::size_t>(length));
  std::iota(seq.presentation.begin(), seq.presentation.end(), 0);
  return seq;
}

LegoSequence sample_sequence(const ExperienceSpec& exp, int length, Rng& rng, int num_symbols) {
  if (length < 1) throw DataError("sequence length must be at least 1");
  if (length > kMaxClauses) throw DataError("sequence length above " + std::to_string(kMaxClauses));
  if (length >= num_symbols) {
    throw DataError("insufficient symbols: length " + std::to_string(length) + " needs more than " +
                    std::to_string(num_symbols) + " symbols");
  }
  if (exp.elements.empty()) throw DataError("experience '" + exp.name + "' has no elements");
  const auto& g = *exp.group;

  ElementId state = exp.elements[uniform_index(rng, exp.elements.size())];
  const ElementId start = state;
  std::vector<ElementId> relations;
  for (int t = 1; t < length; ++t) {
    const auto moves = exp.admissible(state);
    if (moves.empty()) throw DataError("chain is stuck at " + g.name(state) + " in " + exp.name);
    const ElementId rel = moves[uniform_index(rng, moves.size())];
    relations.push_back(rel);
    state = g.compose(state, rel);
  }

  // Distinct symbols: partial Fisher-Yates over the library.
  std::vector<int> library(static_cast<std::size_t>(num_symbols));
  std::iota(library.begin(), library.end(), 0);
  for (int i = 0; i < length; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) +
                          uniform_index(rng, static_cast<std::size_t>(num_symbols - i));
    std::swap(library[static_cast<std::size_t>(i)], library[j]);
  }
  library.resize(static_cast<std::size_t>(length));
  return build_sequence(g, start, relations, std::move(library));
}

LegoSequence shuffle_presentation(LegoSequence seq, Rng& rng) {
  std::shuffle(seq.presentation.begin(), seq.presentation.end(), rng);
  return seq;
}

TokenizedExample tokenize(const LegoSequence& seq, const Vocab& vocab) {
  const int n = seq.length();
  if (static_cast<int>(seq.presentation.size()) != n) {
    throw DataError("presentation order does not cover the clauses");
  }
  TokenizedExample ex;
  const auto total = static_cast<std::size_t>(token_length(n));
  ex.tokens.reserve(total);
  ex.labels.reserve(total);
  ex.slot.reserve(total);
  ex.canonical = seq.presentation;

  auto emit = [&](int token, int label, int slot) {
    ex.tokens.push_back(token);
    ex.labels.push_back(label);
    ex.slot.push_back(slot);
  };
  for (int s = 0; s < n; ++s) {
    if (s > 0) emit(vocab.sep(), kNoLabel, -1);
    const auto& c = seq.clauses.at(static_cast<std::size_t>(seq.presentation[static_cast<std::size_t>(s)]));
    emit(vocab.symbol_token(c.symbol), c.value, s);
    emit(vocab.assign(), kNoLabel, s);
    if (c.opening()) {
      emit(vocab.element_token(c.operand), kNoLabel, s);
    } else {
      emit(vocab.symbol_token(c.source), kNoLabel, s);
      emit(vocab.apply(), kNoLabel, s);
      emit(vocab.element_token(c.operand), kNoLabel, s);
    }
  }
  return ex;
}

LegoSequence detokenize(const TokenizedExample& ex, const Vocab& vocab, const GroupSpec& g) {
  const int n = ex.num_clauses();
  LegoSequence seq;
  seq.clauses.resize(static_cast<std::size_t>(n));
  seq.presentation = ex.canonical;
  std::vector<bool> filled(static_cast<std::size_t>(n), false);

  std::size_t pos = 0;
  auto next = [&]() {
    if (pos >= ex.tokens.size()) throw DataError("token stream ends inside a clause");
    return ex.tokens[pos++];
  };
  for (int s = 0; s < n; ++s) {
    if (s > 0 && next() != vocab.sep()) throw DataError("expected a clause separator");
    const int canon = ex.canonical.at(static_cast<std::size_t>(s));
    if (canon < 0 || canon >= n || filled[static_cast<std::size_t>(canon)]) {
      throw DataError("invalid canonical clause index " + std::to_string(canon));
    }
    Clause c;
    const std::size_t sym_pos = pos;
    c.symbol = vocab.symbol_of(next());
    c.value = ex.labels.at(sym_pos);
    if (c.value < 0 || c.value >= g.order()) throw DataError("clause symbol carries no label");
    if (next() != vocab.assign()) throw DataError("expected '='");
    const int rhs = next();
    if (vocab.is_element(rhs)) {
      c.operand = rhs;
    } else {
      c.source = vocab.symbol_of(rhs);
      if (next() != vocab.apply()) throw DataError("expected '∘'");
      const int rel = next();
      if (!vocab.is_element(rel)) throw DataError("expected a relation element");
      c.operand = rel;
    }
    seq.clauses[static_cast<std::size_t>(canon)] = c;
    filled[static_cast<std::size_t>(canon)] = true;
  }
  if (pos != ex.tokens.size()) throw DataError("trailing tokens after the last clause");
  return seq;
}

std::vector<ElementId> oracle_solve(const GroupSpec& g, const LegoSequence& seq) {
  const int n = seq.length();
  std::map<int, ElementId> known;
  std::vector<ElementId> out(static_cast<std::size_t>(n), -1);
  std::vector<int> order = seq.presentation;
  if (static_cast<int>(order.size()) != n) {
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
  }

  int resolved = 0;
  bool progress = true;
  while (resolved < n && progress) {
    progress = false;
    for (int idx : order) {
      auto& slot = out[static_cast<std::size_t>(idx)];
      if (slot >= 0) continue;
      const auto& c = seq.clauses[static_cast<std::size_t>(idx)];
      if (c.opening()) {
        slot = c.operand;
      } else if (auto it = known.find(c.source); it != known.end()) {
        slot = g.compose(it->second, c.operand);
      } else {
        continue;
      }
      if (!known.emplace(c.symbol, slot).second) {
        throw DataError("malformed sequence: symbol assigned twice");
      }
      ++resolved;
      progress = true;
    }
  }
  if (resolved < n) throw DataError("malformed sequence: dangling symbol reference");
  return out;
}

std::string format_clauses(const LegoSequence& seq, const Vocab& vocab) {
  std::string out;
  for (const auto& c : seq.clauses) {
    if (!out.empty()) out += ' ';
    out += vocab.text(vocab.symbol_token(c.symbol));
    out += kAssign;
    if (c.opening()) {
      out += vocab.text(vocab.element_token(c.operand));
    } else {
      out += vocab.text(vocab.symbol_token(c.source));
      out += kApply;
      out += vocab.text(vocab.element_token(c.operand));
    }
  }
  return out;
}

LegoSequence parse_clauses(std::string_view text, const Vocab& vocab, const GroupSpec& g) {
  std::istringstream in{std::string(text)};
  LegoSequence seq;
  std::map<int, ElementId> values;
  const std::string apply = kApply;
  for (std::string item; in >> item;) {
    const auto eq = item.find(kAssign);
    if (eq == std::string::npos) throw DataError("clause '" + item + "' lacks '='");
    Clause c;
    c.symbol = vocab.symbol_of(vocab.token(item.substr(0, eq)));
    const std::string rhs = item.substr(eq + 1);
    const auto op = rhs.find(apply);
    if (op == std::string::npos) {
      c.operand = g.id(rhs);
      c.value = c.operand;
    } else {
      c.source = vocab.symbol_of(vocab.token(rhs.substr(0, op)));
      c.operand = g.id(rhs.substr(op + apply.size()));
      auto it = values.find(c.source);
      if (it == values.end()) throw DataError("clause '" + item + "' references an unknown symbol");
      c.value = g.compose(it->second, c.operand);
    }
    values[c.symbol] = c.value;
    seq.clauses.push_back(c);
  }
  seq.presentation.resize(seq.clauses.size());
  std::iota(seq.presentation.begin(), seq.presentation.end(), 0);
  return seq;
}

}  // namespace lego
