#include "lego/experience.hpp"

#include <algorithm>
#include <set>

#include "lego/errors.hpp"

namespace lego {

bool ExperienceSpec::contains(ElementId x) const {
  return std::find(elements.begin(), elements.end(), x) != elements.end();
}

bool ExperienceSpec::is_closed() const {
  for (ElementId x : elements) {
    for (ElementId r : relations) {
      if (!contains(group->compose(x, r))) return false;
    }
  }
  return true;
}

std::vector<ElementId> ExperienceSpec::admissible(ElementId state) const {
  std::vector<ElementId> out;
  for (ElementId r : relations) {
    if (contains(group->compose(state, r))) out.push_back(r);
  }
  return out;
}

std::vector<std::string> validate_experience(const ExperienceSpec& exp, bool require_closed) {
  std::vector<std::string> out;
  if (!exp.group) return {"experience '" + exp.name + "' has no group"};
  const auto& g = *exp.group;
  if (exp.elements.empty()) out.push_back("experience '" + exp.name + "' has no elements");
  if (std::find(exp.relations.begin(), exp.relations.end(), g.identity()) == exp.relations.end()) {
    out.push_back("experience '" + exp.name + "' lacks the identity relation");
  }
  for (ElementId x : exp.elements) {
    if (exp.admissible(x).empty()) {
      out.push_back("experience '" + exp.name + "': no admissible relation from " + g.name(x));
    }
    if (!require_closed) continue;
    for (ElementId r : exp.relations) {
      const ElementId y = g.compose(x, r);
      if (!exp.contains(y)) {
        out.push_back("experience '" + exp.name + "' not closed: " + g.name(x) + "∘" + g.name(r) +
                      " = " + g.name(y));
      }
    }
  }
  return out;
}

namespace {

ExperienceSpec named(const GroupPtr& g, std::string name, std::vector<const char*> elements,
                     std::vector<const char*> relations) {
  ExperienceSpec exp{std::move(name), {}, {}, g};
  for (const char* e : elements) exp.elements.push_back(g->id(e));
  for (const char* r : relations) exp.relations.push_back(g->id(r));
  return exp;
}

std::vector<ElementId> sorted_union(const std::vector<ExperienceSpec>& exps,
                                    std::vector<ElementId> ExperienceSpec::*field) {
  std::set<ElementId> all;
  for (const auto& e : exps) all.insert((e.*field).begin(), (e.*field).end());
  return {all.begin(), all.end()};
}

void require_same_group(const std::vector<ExperienceSpec>& exps) {
  if (exps.empty()) throw DataError("no compositional experiences given");
  for (const auto& e : exps) {
    if (!e.group || !(*e.group == *exps.front().group)) {
      throw DataError("experiences are defined over different groups");
    }
  }
}

struct FlipFlop {
  ElementId relation;
  ElementId first;
  ElementId second;
};

int shared(const FlipFlop& a, const FlipFlop& b) {
  int n = 0;
  for (ElementId x : {a.first, a.second}) n += (x == b.first || x == b.second) ? 1 : 0;
  return n;
}

}  // namespace

std::vector<ExperienceSpec> make_flipflop_experiences(const GroupPtr& g) {
  if (!g || !has_d3_names(*g)) {
    throw DataError("flip-flop experiences need D3 with its canonical element names");
  }
  std::vector<ExperienceSpec> out = {
      named(g, "flipflop1", {"spin", "mirror"}, {"val", "reflect"}),
      named(g, "flipflop2", {"rotate", "reflect"}, {"val", "mirror"}),
      named(g, "flipflop3", {"val", "flip"}, {"val", "flip"}),
  };
  for (const auto& e : out) {
    auto problems = validate_experience(e, true);
    if (!problems.empty()) throw DataError(problems.front());
  }
  return out;
}

std::vector<ExperienceSpec> make_compositional_experiences(const GroupPtr& g,
                                                           const CompositionalOptions& options) {
  if (!g) throw DataError("no group given");
  if (options.count < 1) throw ConfigError("compositional experience count must be positive");

  // Candidates in search order: relation id, then the smaller element id.
  std::vector<FlipFlop> candidates;
  for (ElementId r = 0; r < g->order(); ++r) {
    if (r == g->identity() || g->element_order(r) != 2) continue;
    for (ElementId x = 0; x < g->order(); ++x) {
      const ElementId y = g->compose(x, r);
      if (x < y) candidates.push_back({r, x, y});
    }
  }
  if (candidates.empty()) throw DataError("group has no involutions to build flip-flop pairs");

  FlipFlop anchor = candidates.front();
  const bool want_default = !options.anchor_elements && !options.anchor_relation;
  if (options.anchor_elements || options.anchor_relation || (want_default && has_d3_names(*g))) {
    const auto pair = options.anchor_elements.value_or(std::pair<std::string, std::string>{"spin", "mirror"});
    const ElementId rel = g->id(options.anchor_relation.value_or("reflect"));
    const ElementId a = g->id(pair.first), b = g->id(pair.second);
    if (g->compose(a, rel) != b || g->compose(b, rel) != a || a == b) {
      throw DataError("anchor " + pair.first + "/" + pair.second + " is not a flip-flop pair under " +
                      g->name(rel));
    }
    anchor = {rel, std::min(a, b), std::max(a, b)};
  }

  std::vector<FlipFlop> chain = {anchor};
  while (static_cast<int>(chain.size()) < options.count) {
    const FlipFlop& last = chain.back();
    auto next = std::find_if(candidates.begin(), candidates.end(), [&](const FlipFlop& c) {
      if (shared(c, last) != 1) return false;
      for (const auto& used : chain) {
        if (used.relation == c.relation) return false;
        if (&used != &last && shared(c, used) != 0) return false;
      }
      return true;
    });
    if (next == candidates.end()) {
      throw DataError("no flip-flop pair overlaps the previous experience in exactly one element");
    }
    chain.push_back(*next);
  }

  std::vector<ExperienceSpec> out;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const auto& c = chain[i];
    std::vector<ElementId> elems = {c.first, c.second};
    if (i == 0 && (options.anchor_elements || (want_default && has_d3_names(*g)))) {
      const auto pair =
          options.anchor_elements.value_or(std::pair<std::string, std::string>{"spin", "mirror"});
      elems = {g->id(pair.first), g->id(pair.second)};
    } else if (i > 0) {
      // Shared element first.
      const auto& prev = chain[i - 1];
      if (c.second == prev.first || c.second == prev.second) elems = {c.second, c.first};
    }
    out.push_back({"compositional" + std::to_string(i + 1), elems, {g->identity(), c.relation}, g});
  }
  return out;
}

ExperienceSpec make_full_experience(const std::vector<ExperienceSpec>& compositional) {
  require_same_group(compositional);
  const GroupPtr g = compositional.front().group;
  ExperienceSpec full{"full", sorted_union(compositional, &ExperienceSpec::elements), {}, g};

  std::set<ElementId> relations = {g->identity()};
  for (ElementId a : full.elements) {
    for (ElementId b : full.elements) {
      if (a != b) relations.insert(g->compose(g->inverse(a), b));
    }
  }
  full.relations.assign(relations.begin(), relations.end());

  // Every element must be able to reach every other one in a single move.
  for (ElementId a : full.elements) {
    const auto moves = full.admissible(a);
    std::set<ElementId> reach;
    for (ElementId r : moves) reach.insert(g->compose(a, r));
    if (reach.size() != full.elements.size()) {
      throw DataError("full experience is not closed under its relation completion");
    }
  }
  return full;
}

std::vector<ExperienceSpec> make_incremental_experiences(
    const std::vector<ExperienceSpec>& compositional, const ExperienceSpec& full) {
  require_same_group(compositional);
  std::vector<ExperienceSpec> out = {compositional.front()};
  for (std::size_t m = 2; m <= compositional.size(); ++m) {
    const std::vector<ExperienceSpec> seen(compositional.begin(),
                                           compositional.begin() + static_cast<std::ptrdiff_t>(m));
    ExperienceSpec stitch{"stitch" + std::to_string(m), sorted_union(seen, &ExperienceSpec::elements),
                          sorted_union(seen, &ExperienceSpec::relations), full.group};
    auto problems = validate_experience(stitch, false);
    if (!problems.empty()) throw DataError(problems.front());
    out.push_back(std::move(stitch));
  }
  out.push_back(full);
  return out;
}

}  // namespace lego
