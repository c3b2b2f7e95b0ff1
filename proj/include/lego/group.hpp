#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lego {

using ElementId = int;

struct GroupElement {
  ElementId id = 0;
  std::string name;
};

// Multiplication table of a finite group: at(a, b) is the id of a∘b.
class CayleyTable {
 public:
  CayleyTable() = default;
  CayleyTable(int order, std::vector<ElementId> entries);

  int order() const noexcept { return order_; }
  ElementId at(ElementId a, ElementId b) const { return entries_[index(a, b)]; }
  void set(ElementId a, ElementId b, ElementId value) { entries_[index(a, b)] = value; }
  const std::vector<ElementId>& entries() const noexcept { return entries_; }

  bool operator==(const CayleyTable&) const = default;

 private:
  std::size_t index(ElementId a, ElementId b) const {
    return static_cast<std::size_t>(a) * static_cast<std::size_t>(order_) +
           static_cast<std::size_t>(b);
  }

  int order_ = 0;
  std::vector<ElementId> entries_;
};

// A finite group given by element names, a Cayley table and its identity.
//
// The constructor checks shape and naming only; group axioms are checked by
// validate_group() so that deliberately broken tables can be inspected.
//
// Composition convention: compose(a, b) is "state a acted on by b", which is
// the clause semantics a_t = a_{t-1} ∘ x_t.
class GroupSpec {
 public:
  GroupSpec(std::vector<std::string> names, ElementId identity, CayleyTable table);

  int order() const noexcept { return static_cast<int>(elements_.size()); }
  ElementId identity() const noexcept { return identity_; }
  const std::vector<GroupElement>& elements() const noexcept { return elements_; }
  const CayleyTable& cayley() const noexcept { return table_; }

  const std::string& name(ElementId id) const;
  ElementId id(std::string_view name) const;  // throws GroupError when unknown
  std::optional<ElementId> find(std::string_view name) const;

  ElementId compose(ElementId a, ElementId b) const;
  ElementId inverse(ElementId a) const;
  int element_order(ElementId a) const;

  // Text manifest: element names in id order plus the n×n table of names.
  std::vector<std::string> manifest_lines() const;
  static GroupSpec from_manifest(const std::vector<std::string>& lines);

  bool operator==(const GroupSpec& other) const;

 private:
  void check(ElementId a) const;

  std::vector<GroupElement> elements_;
  ElementId identity_ = 0;
  CayleyTable table_;
};

using GroupPtr = std::shared_ptr<const GroupSpec>;

// Element names of D3, in id order.
inline constexpr const char* kD3Names[] = {"val", "rotate", "spin", "flip", "reflect", "mirror"};

// Dihedral group of order 2k built from vertex permutations of a regular k-gon.
// For k = 3 the elements carry the names in kD3Names, bound so that the
// worked example sequences hold; other k use r0..r{k-1}, s0..s{k-1}.
GroupSpec build_dihedral(int k);

// True when the group carries all six D3 names.
bool has_d3_names(const GroupSpec& g);

// Empty iff closure, identity, inverse and associativity all hold. Each entry
// names the violated axiom and the witnessing elements.
std::vector<std::string> validate_group(const GroupSpec& g);

}  // namespace lego
