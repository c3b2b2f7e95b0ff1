#include "lego/group.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "lego/errors.hpp"

namespace lego {

CayleyTable::CayleyTable(int order, std::vector<ElementId> entries)
    : order_(order), entries_(std::move(entries)) {
  if (order < 1) throw GroupError("cayley table order must be positive");
  if (entries_.size() != static_cast<std::size_t>(order) * static_cast<std::size_t>(order)) {
    throw GroupError("cayley table has " + std::to_string(entries_.size()) +
                     " entries, expected " + std::to_string(order * order));
  }
}

GroupSpec::GroupSpec(std::vector<std::string> names, ElementId identity, CayleyTable table)
    : identity_(identity), table_(std::move(table)) {
  if (names.empty()) throw GroupError("group needs at least one element");
  if (static_cast<int>(names.size()) != table_.order()) {
    throw GroupError("group has " + std::to_string(names.size()) +
                     " names but a table of order " + std::to_string(table_.order()));
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& n = names[i];
    if (n.empty() || n.find_first_of(" \t\r\n") != std::string::npos) {
      throw GroupError("invalid element name '" + n + "'");
    }
    if (!seen.insert(n).second) throw GroupError("duplicate element name '" + n + "'");
    elements_.push_back({static_cast<ElementId>(i), std::move(names[i])});
  }
  if (identity < 0 || identity >= order()) {
    throw GroupError("identity id " + std::to_string(identity) + " out of range");
  }
}

void GroupSpec::check(ElementId a) const {
  if (a < 0 || a >= order()) {
    throw GroupError("invalid element id " + std::to_string(a) + " for group of order " +
                     std::to_string(order()));
  }
}

const std::string& GroupSpec::name(ElementId id) const {
  check(id);
  return elements_[static_cast<std::size_t>(id)].name;
}

std::optional<ElementId> GroupSpec::find(std::string_view name) const {
  for (const auto& e : elements_) {
    if (e.name == name) return e.id;
  }
  return std::nullopt;
}

ElementId GroupSpec::id(std::string_view name) const {
  if (auto found = find(name)) return *found;
  throw GroupError("unknown group element '" + std::string(name) + "'");
}

ElementId GroupSpec::compose(ElementId a, ElementId b) const {
  check(a);
  check(b);
  return table_.at(a, b);
}

ElementId GroupSpec::inverse(ElementId a) const {
  check(a);
  for (ElementId b = 0; b < order(); ++b) {
    if (table_.at(a, b) == identity_ && table_.at(b, a) == identity_) return b;
  }
  throw GroupError("element '" + name(a) + "' has no inverse");
}

int GroupSpec::element_order(ElementId a) const {
  check(a);
  ElementId power = a;
  for (int m = 1; m <= order(); ++m) {
    if (power == identity_) return m;
    power = table_.at(power, a);
  }
  throw GroupError("element '" + name(a) + "' never returns to the identity");
}

std::vector<std::string> GroupSpec::manifest_lines() const {
  std::vector<std::string> lines;
  lines.push_back("group order=" + std::to_string(order()) + " identity=" + name(identity_));
  std::string names = "elements";
  for (const auto& e : elements_) names += " " + e.name;
  lines.push_back(names);
  for (ElementId a = 0; a < order(); ++a) {
    std::string row = "cayley";
    for (ElementId b = 0; b < order(); ++b) row += " " + name(table_.at(a, b));
    lines.push_back(row);
  }
  return lines;
}

namespace {

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

}  // namespace

GroupSpec GroupSpec::from_manifest(const std::vector<std::string>& lines) {
  if (lines.size() < 2) throw GroupError("group manifest is truncated");
  const auto head = split_words(lines[0]);
  if (head.size() != 3 || head[0] != "group" || head[1].rfind("order=", 0) != 0 ||
      head[2].rfind("identity=", 0) != 0) {
    throw GroupError("malformed group manifest header: '" + lines[0] + "'");
  }
  const int n = std::stoi(head[1].substr(6));
  const std::string identity = head[2].substr(9);

  auto names = split_words(lines[1]);
  if (names.empty() || names.front() != "elements") {
    throw GroupError("group manifest is missing its element list");
  }
  names.erase(names.begin());
  if (static_cast<int>(names.size()) != n) throw GroupError("group manifest order mismatch");
  if (static_cast<int>(lines.size()) != 2 + n) throw GroupError("group manifest needs n table rows");

  std::map<std::string, ElementId> ids;
  for (int i = 0; i < n; ++i) ids[names[static_cast<std::size_t>(i)]] = i;
  auto lookup = [&](const std::string& s) {
    auto it = ids.find(s);
    if (it == ids.end()) throw GroupError("group manifest references unknown element '" + s + "'");
    return it->second;
  };

  std::vector<ElementId> entries;
  entries.reserve(static_cast<std::size_t>(n * n));
  for (int r = 0; r < n; ++r) {
    const auto row = split_words(lines[static_cast<std::size_t>(2 + r)]);
    if (static_cast<int>(row.size()) != n + 1 || row[0] != "cayley") {
      throw GroupError("malformed cayley row " + std::to_string(r));
    }
    for (int c = 1; c <= n; ++c) entries.push_back(lookup(row[static_cast<std::size_t>(c)]));
  }
  ElementId e = lookup(identity);
  return GroupSpec(std::move(names), e, CayleyTable(n, std::move(entries)));
}

bool GroupSpec::operator==(const GroupSpec& other) const {
  if (identity_ != other.identity_ || !(table_ == other.table_)) return false;
  if (elements_.size() != other.elements_.size()) return false;
  for (std::size_t i = 0; i < elements_.size(); ++i) {
    if (elements_[i].name != other.elements_[i].name) return false;
  }
  return true;
}

namespace {

using Perm = std::vector<int>;

// a∘b acts with a first, then b.
Perm then(const Perm& a, const Perm& b) {
  Perm p(a.size());
  for (std::size_t v = 0; v < a.size(); ++v) p[v] = b[static_cast<std::size_t>(a[v])];
  return p;
}

// Permutations act on the k vertices followed by the k edges (edge i joins
// vertices i and i+1). Vertices alone are not faithful for k = 2.
Perm rotation(int k, int steps) {
  Perm p(static_cast<std::size_t>(2 * k));
  for (int v = 0; v < k; ++v) {
    p[static_cast<std::size_t>(v)] = (v + steps) % k;
    p[static_cast<std::size_t>(k + v)] = k + (v + steps) % k;
  }
  return p;
}

Perm reflection(int k, int axis) {
  Perm p(static_cast<std::size_t>(2 * k));
  for (int v = 0; v < k; ++v) {
    p[static_cast<std::size_t>(v)] = ((axis - v) % k + k) % k;
    p[static_cast<std::size_t>(k + v)] = k + ((axis - v - 1) % k + k) % k;
  }
  return p;
}

GroupSpec group_from_perms(std::vector<std::string> names, const std::vector<Perm>& perms) {
  const int n = static_cast<int>(perms.size());
  std::map<Perm, ElementId> index;
  for (int i = 0; i < n; ++i) index[perms[static_cast<std::size_t>(i)]] = i;
  std::vector<ElementId> entries;
  entries.reserve(static_cast<std::size_t>(n * n));
  for (const auto& a : perms) {
    for (const auto& b : perms) entries.push_back(index.at(then(a, b)));
  }
  return GroupSpec(std::move(names), 0, CayleyTable(n, std::move(entries)));
}

// Compositions stated or implied by the worked D3 examples.
bool satisfies_d3_examples(const GroupSpec& g) {
  auto id = [&](const char* s) { return g.id(s); };
  const ElementId val = id("val"), rotate = id("rotate"), spin = id("spin");
  const ElementId flip = id("flip"), reflect = id("reflect"), mirror = id("mirror");

  struct Chain {
    ElementId start;
    std::array<ElementId, 3> relations;
    std::array<ElementId, 4> targets;
  };
  const Chain chains[] = {
      {spin, {val, reflect, reflect}, {spin, spin, mirror, spin}},
      {rotate, {val, mirror, val}, {rotate, rotate, reflect, reflect}},
      {val, {flip, flip, flip}, {val, flip, val, flip}},
  };
  for (const auto& c : chains) {
    ElementId state = c.start;
    if (state != c.targets[0]) return false;
    for (std::size_t t = 0; t < 3; ++t) {
      state = g.compose(state, c.relations[t]);
      if (state != c.targets[t + 1]) return false;
    }
  }
  for (ElementId x = 0; x < g.order(); ++x) {
    if (g.compose(val, x) != x || g.compose(x, val) != x) return false;
  }
  if (g.compose(rotate, spin) != val || g.compose(spin, rotate) != val) return false;
  for (ElementId s : {flip, reflect, mirror}) {
    if (g.compose(s, s) != val) return false;
  }
  return true;
}

GroupSpec build_d3() {
  const int k = 3;
  const Perm identity = rotation(k, 0);
  const std::array<Perm, 2> cycles = {rotation(k, 1), rotation(k, 2)};
  std::array<int, 3> axes = {0, 1, 2};
  std::vector<std::string> names(std::begin(kD3Names), std::end(kD3Names));

  // rotate = one vertex step is tried first, then the reverse binding.
  for (int r = 0; r < 2; ++r) {
    std::sort(axes.begin(), axes.end());
    do {
      const std::vector<Perm> perms = {
          identity,
          cycles[static_cast<std::size_t>(r)],
          cycles[static_cast<std::size_t>(1 - r)],
          reflection(k, axes[0]),
          reflection(k, axes[1]),
          reflection(k, axes[2]),
      };
      GroupSpec g = group_from_perms(names, perms);
      if (satisfies_d3_examples(g)) return g;
    } while (std::next_permutation(axes.begin(), axes.end()));
  }
  throw GroupError("no binding of D3 names satisfies the worked example compositions");
}

}  // namespace

GroupSpec build_dihedral(int k) {
  if (k < 2) throw GroupError("dihedral group needs k >= 2, got " + std::to_string(k));
  if (k == 3) return build_d3();
  std::vector<std::string> names;
  std::vector<Perm> perms;
  for (int i = 0; i < k; ++i) {
    names.push_back("r" + std::to_string(i));
    perms.push_back(rotation(k, i));
  }
  for (int i = 0; i < k; ++i) {
    names.push_back("s" + std::to_string(i));
    perms.push_back(reflection(k, i));
  }
  return group_from_perms(std::move(names), perms);
}

bool has_d3_names(const GroupSpec& g) {
  if (g.order() != 6) return false;
  return std::all_of(std::begin(kD3Names), std::end(kD3Names),
                     [&](const char* n) { return g.find(n).has_value(); });
}

std::vector<std::string> validate_group(const GroupSpec& g) {
  const int n = g.order();
  const auto& t = g.cayley();
  const ElementId e = g.identity();
  std::vector<std::string> out;
  auto nm = [&](ElementId x) { return "'" + g.name(x) + "'"; };
  auto in_range = [&](ElementId x) { return x >= 0 && x < n; };

  bool closed = true;
  for (ElementId a = 0; a < n; ++a) {
    for (ElementId b = 0; b < n; ++b) {
      if (!in_range(t.at(a, b))) {
        closed = false;
        out.push_back("closure: " + nm(a) + "∘" + nm(b) + " = id " + std::to_string(t.at(a, b)) +
                      " is not a group element");
      }
    }
  }
  if (!closed) return out;

  for (ElementId a = 0; a < n; ++a) {
    std::vector<int> row_hits(static_cast<std::size_t>(n), 0);
    std::vector<int> col_hits(static_cast<std::size_t>(n), 0);
    for (ElementId b = 0; b < n; ++b) {
      ++row_hits[static_cast<std::size_t>(t.at(a, b))];
      ++col_hits[static_cast<std::size_t>(t.at(b, a))];
    }
    for (ElementId v = 0; v < n; ++v) {
      if (row_hits[static_cast<std::size_t>(v)] > 1) {
        out.push_back("closure: row " + nm(a) + " repeats " + nm(v) + " (not a Latin square)");
      }
      if (col_hits[static_cast<std::size_t>(v)] > 1) {
        out.push_back("closure: column " + nm(a) + " repeats " + nm(v) + " (not a Latin square)");
      }
    }
  }

  for (ElementId x = 0; x < n; ++x) {
    if (t.at(e, x) != x || t.at(x, e) != x) {
      out.push_back("identity: " + nm(e) + " does not fix " + nm(x));
    }
  }

  for (ElementId a = 0; a < n; ++a) {
    bool found = false;
    for (ElementId b = 0; b < n && !found; ++b) found = t.at(a, b) == e && t.at(b, a) == e;
    if (!found) out.push_back("inverse: " + nm(a) + " has no two-sided inverse");
  }

  constexpr int kMaxListed = 8;
  int failures = 0;
  for (ElementId a = 0; a < n; ++a) {
    for (ElementId b = 0; b < n; ++b) {
      for (ElementId c = 0; c < n; ++c) {
        if (t.at(t.at(a, b), c) == t.at(a, t.at(b, c))) continue;
        if (++failures <= kMaxListed) {
          out.push_back("associativity: (" + nm(a) + "∘" + nm(b) + ")∘" + nm(c) + " != " + nm(a) +
                        "∘(" + nm(b) + "∘" + nm(c) + ")");
        }
      }
    }
  }
  if (failures > kMaxListed) {
    out.push_back("associativity: " + std::to_string(failures - kMaxListed) +
                  " further failing triples");
  }
  return out;
}

}  // namespace lego
