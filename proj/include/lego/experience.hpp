#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lego/group.hpp"

namespace lego {

// One continual-learning experience: the states a chain may visit and the
// relations (edges) it may apply.
//
// Chains draw each relation uniformly from those that are admissible at the
// current state, i.e. keep the chain inside `elements`. For flip-flop and
// compositional experiences every relation is admissible everywhere
// (is_closed() holds); stitched and full experiences rely on the
// restriction.
struct ExperienceSpec {
  std::string name;
  std::vector<ElementId> elements;
  std::vector<ElementId> relations;
  GroupPtr group;

  bool contains(ElementId x) const;
  bool is_closed() const;
  std::vector<ElementId> admissible(ElementId state) const;

  bool operator==(const ExperienceSpec& other) const {
    return name == other.name && elements == other.elements && relations == other.relations;
  }
};

// Empty iff the experience is usable: non-empty elements, identity among the
// relations, every element with at least one admissible move. With
// `require_closed` the full closure invariant is checked as well.
std::vector<std::string> validate_experience(const ExperienceSpec& exp, bool require_closed);

// The three flip-flop experiences on D3:
//   flipflop1 = {spin, mirror} under {val, reflect}
//   flipflop2 = {rotate, reflect} under {val, mirror}
//   flipflop3 = {val, flip} under {val, flip}
std::vector<ExperienceSpec> make_flipflop_experiences(const GroupPtr& g);

struct CompositionalOptions {
  int count = 2;
  // Names of the first experience's two elements and its relation. Defaults
  // to flipflop1 when the group carries the D3 names.
  std::optional<std::pair<std::string, std::string>> anchor_elements;
  std::optional<std::string> anchor_relation;
};

// Chain of two-element flip-flop experiences in which each experience shares
// exactly one element with the previous one and uses a relation not used
// before. Found by exhaustive search over (involution, element pair).
std::vector<ExperienceSpec> make_compositional_experiences(const GroupPtr& g,
                                                           const CompositionalOptions& options = {});

// Union of the elements; relations = identity plus every a⁻¹∘b needed to move
// between two elements of the union.
ExperienceSpec make_full_experience(const std::vector<ExperienceSpec>& compositional);

// [first, stitch(first two), ..., stitch(all but full), full]. A stitch has the
// union of elements and the union of the experiences' own relations.
std::vector<ExperienceSpec> make_incremental_experiences(
    const std::vector<ExperienceSpec>& compositional, const ExperienceSpec& full);

}  // namespace lego
