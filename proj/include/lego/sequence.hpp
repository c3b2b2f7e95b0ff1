#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lego/experience.hpp"
#include "lego/group.hpp"
#include "lego/random.hpp"

namespace lego {

inline constexpr int kDefaultSymbols = 26;  // a..z
inline constexpr int kMaxClauses = 12;
inline constexpr int kNoLabel = -1;

// Token table: group elements, then symbols, then "=", "∘", ";", "<pad>".
class Vocab {
 public:
  explicit Vocab(const GroupSpec& g, int num_symbols = kDefaultSymbols);

  int size() const noexcept { return static_cast<int>(texts_.size()); }
  int num_elements() const noexcept { return num_elements_; }
  int num_symbols() const noexcept { return num_symbols_; }

  int element_token(ElementId e) const;
  int symbol_token(int symbol) const;
  int assign() const noexcept { return num_elements_ + num_symbols_; }
  int apply() const noexcept { return assign() + 1; }
  int sep() const noexcept { return assign() + 2; }
  int pad() const noexcept { return assign() + 3; }

  bool is_element(int token) const noexcept { return token >= 0 && token < num_elements_; }
  bool is_symbol(int token) const noexcept {
    return token >= num_elements_ && token < num_elements_ + num_symbols_;
  }
  int symbol_of(int token) const;

  const std::string& text(int token) const;
  int token(std::string_view text) const;  // DataError on unknown text

  bool operator==(const Vocab&) const = default;

 private:
  int num_elements_ = 0;
  int num_symbols_ = 0;
  std::vector<std::string> texts_;
};

// One unit a_t = a_{t-1} ∘ x_t, or the opening assignment a_1 = x_1.
struct Clause {
  int symbol = 0;       // index into the symbol library
  int source = -1;      // symbol of the preceding clause; -1 for the opening clause
  ElementId operand = 0;  // literal element for the opening clause, the relation otherwise
  ElementId value = 0;    // resolved target

  bool opening() const noexcept { return source < 0; }
  bool operator==(const Clause&) const = default;
};

// Clauses are stored in canonical (chain) order; `presentation[s]` is the
// canonical index of the clause shown in slot s.
struct LegoSequence {
  std::vector<Clause> clauses;
  std::vector<int> presentation;

  int length() const noexcept { return static_cast<int>(clauses.size()); }
  std::vector<ElementId> targets() const;
  bool operator==(const LegoSequence&) const = default;
};

struct TokenizedExample {
  std::vector<int> tokens;
  std::vector<int> labels;     // element id at each clause's symbol, kNoLabel elsewhere
  std::vector<int> slot;       // presentation slot of each token, -1 for separators/padding
  std::vector<int> canonical;  // canonical clause index (0-based) of each slot

  int length() const noexcept { return static_cast<int>(tokens.size()); }
  int num_clauses() const noexcept { return static_cast<int>(canonical.size()); }
  // Canonical clause index of the token at `pos`, or -1 for separators/padding.
  int clause_of_token(int pos) const {
    const int s = slot[static_cast<std::size_t>(pos)];
    return s < 0 ? -1 : canonical[static_cast<std::size_t>(s)];
  }
  std::vector<int> clause_map() const;

  bool operator==(const TokenizedExample&) const = default;
};

// Token count for T clauses: 3 + 5(T-1) + (T-1) separators.
constexpr int token_length(int clauses) { return 3 + 6 * (clauses - 1); }

// Chain with forced draws, presented in canonical order. `symbols` defaults
// to 0, 1, 2, ... (a, b, c, ...).
LegoSequence build_sequence(const GroupSpec& g, ElementId start, const std::vector<ElementId>& relations,
                            std::vector<int> symbols = {});

// x_1 uniform over the experience's elements, each later x_t uniform over the
// relations admissible at the current state, T distinct symbols.
LegoSequence sample_sequence(const ExperienceSpec& exp, int length, Rng& rng,
                             int num_symbols = kDefaultSymbols);

LegoSequence shuffle_presentation(LegoSequence seq, Rng& rng);

TokenizedExample tokenize(const LegoSequence& seq, const Vocab& vocab);
LegoSequence detokenize(const TokenizedExample& example, const Vocab& vocab, const GroupSpec& g);

// Recomputes the targets (canonical order) by resolving clauses in the order
// presented, using only composition. Ignores the stored values.
std::vector<ElementId> oracle_solve(const GroupSpec& g, const LegoSequence& seq);

// "a=spin b=a∘val c=b∘reflect", canonical order.
std::string format_clauses(const LegoSequence& seq, const Vocab& vocab);
LegoSequence parse_clauses(std::string_view text, const Vocab& vocab, const GroupSpec& g);

}  // namespace lego
