#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <set>

#include "lego/errors.hpp"
#include "lego/group.hpp"

using namespace lego;

namespace {

const GroupSpec& d3() {
  static const GroupSpec g = build_dihedral(3);
  return g;
}

ElementId id(const char* name) { return d3().id(name); }

// Symmetries of a square as vertex permutations, composed "apply a, then b".
std::vector<std::array<int, 4>> square_symmetries() {
  std::vector<std::array<int, 4>> out;
  for (int r = 0; r < 4; ++r) {
    out.push_back({r % 4, (1 + r) % 4, (2 + r) % 4, (3 + r) % 4});
    out.push_back({r % 4, (r + 3) % 4, (r + 2) % 4, (r + 1) % 4});
  }
  return out;
}

}  // namespace

TEST_SUITE("groups") {
  TEST_CASE("D3 composition facts from the worked examples") {
    CHECK(d3().compose(id("spin"), id("reflect")) == id("mirror"));
    CHECK(d3().compose(id("rotate"), id("mirror")) == id("reflect"));
    CHECK(d3().compose(id("flip"), id("flip")) == id("val"));
    CHECK(d3().compose(d3().compose(id("spin"), id("spin")), id("spin")) == id("val"));
  }

  TEST_CASE("identity, inverse and involution facts") {
    for (const auto& e : d3().elements()) {
      CHECK(d3().compose(id("val"), e.id) == e.id);
      CHECK(d3().compose(e.id, id("val")) == e.id);
    }
    CHECK(d3().compose(id("rotate"), id("spin")) == id("val"));
    CHECK(d3().compose(id("spin"), id("rotate")) == id("val"));
    for (const char* inv : {"flip", "reflect", "mirror"}) CHECK(d3().compose(id(inv), id(inv)) == id("val"));
    CHECK(d3().inverse(id("rotate")) == id("spin"));
    CHECK(d3().inverse(id("val")) == id("val"));
    CHECK(d3().inverse(id("mirror")) == id("mirror"));
  }

  TEST_CASE("element orders") {
    std::vector<int> orders;
    for (const char* n : kD3Names) orders.push_back(d3().element_order(id(n)));
    CHECK(orders == std::vector<int>{1, 3, 3, 2, 2, 2});
    CHECK(d3().element_order(id("rotate")) == 3);
    CHECK(d3().element_order(id("flip")) == 2);
  }

  TEST_CASE("validate_group accepts dihedral groups and the trivial group") {
    CHECK(validate_group(d3()).empty());
    for (int k = 2; k <= 8; ++k) CHECK(validate_group(build_dihedral(k)).empty());
    GroupSpec trivial({"e"}, 0, CayleyTable(1, {0}));
    CHECK(validate_group(trivial).empty());
  }

  TEST_CASE("group axioms hold exhaustively up to order 16") {
    for (int k = 2; k <= 8; ++k) {
      const auto g = build_dihedral(k);
      REQUIRE(g.order() == 2 * k);
      for (int a = 0; a < g.order(); ++a) {
        CHECK(g.compose(a, g.inverse(a)) == g.identity());
        CHECK(g.inverse(g.inverse(a)) == a);
        for (int b = 0; b < g.order(); ++b) {
          for (int c = 0; c < g.order(); ++c) {
            CHECK(g.compose(g.compose(a, b), c) == g.compose(a, g.compose(b, c)));
          }
        }
      }
    }
  }

  TEST_CASE("D4 matches the brute-force square symmetry table") {
    const auto g = build_dihedral(4);
    REQUIRE(g.order() == 8);
    const auto perms = square_symmetries();
    std::set<std::array<int, 4>> distinct(perms.begin(), perms.end());
    REQUIRE(distinct.size() == 8);
    // Brute-force table over the permutations, then look for an isomorphism
    // with the built group by matching order profiles of every product.
    auto pcompose = [](const std::array<int, 4>& a, const std::array<int, 4>& b) {
      std::array<int, 4> p{};
      for (int v = 0; v < 4; ++v) p[v] = b[a[v]];
      return p;
    };
    auto pindex = [&](const std::array<int, 4>& p) {
      return static_cast<int>(std::find(perms.begin(), perms.end(), p) - perms.begin());
    };
    std::vector<int> brute(64);
    for (int a = 0; a < 8; ++a) {
      for (int b = 0; b < 8; ++b) {
        const int c = pindex(pcompose(perms[a], perms[b]));
        REQUIRE(c < 8);
        brute[a * 8 + b] = c;
      }
    }
    // Latin square property of both tables.
    for (int a = 0; a < 8; ++a) {
      std::set<int> row, col;
      for (int b = 0; b < 8; ++b) {
        row.insert(g.compose(a, b));
        col.insert(g.compose(b, a));
      }
      CHECK(row.size() == 8);
      CHECK(col.size() == 8);
    }
    // Search all bijections for one that maps the brute-force table onto g.
    std::vector<int> map(8);
    for (int i = 0; i < 8; ++i) map[i] = i;
    bool found = false;
    do {
      bool ok = true;
      for (int a = 0; a < 8 && ok; ++a) {
        for (int b = 0; b < 8 && ok; ++b) ok = map[brute[a * 8 + b]] == g.compose(map[a], map[b]);
      }
      found = ok;
    } while (!found && std::next_permutation(map.begin(), map.end()));
    CHECK(found);
  }

  TEST_CASE("a corrupted entry is reported") {
    auto entries = d3().cayley().entries();
    // Make row `rotate` repeat an element: breaks the Latin square.
    const int n = d3().order();
    entries[static_cast<std::size_t>(id("rotate") * n + id("flip"))] = entries[static_cast<std::size_t>(id("rotate") * n + id("val"))];
    std::vector<std::string> names(std::begin(kD3Names), std::end(kD3Names));
    GroupSpec broken(names, id("val"), CayleyTable(n, entries));
    const auto violations = validate_group(broken);
    REQUIRE_FALSE(violations.empty());
    bool named = false;
    for (const auto& v : violations) {
      named = named || v.find("inverse") != std::string::npos || v.find("closure") != std::string::npos ||
              v.find("Latin") != std::string::npos || v.find("associativ") != std::string::npos;
    }
    CHECK(named);
  }

  TEST_CASE("names, lookup errors and manifest round trip") {
    CHECK(has_d3_names(d3()));
    CHECK(d3().name(id("spin")) == "spin");
    CHECK_THROWS_AS(d3().id("twirl"), GroupError);
    CHECK_FALSE(d3().find("twirl").has_value());
    CHECK_THROWS_AS(build_dihedral(0), GroupError);
    const auto back = GroupSpec::from_manifest(d3().manifest_lines());
    CHECK(back == d3());
  }
}
