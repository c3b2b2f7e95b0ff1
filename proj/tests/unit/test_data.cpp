#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "lego/dataset.hpp"
#include "lego/errors.hpp"
#include "lego/experiment.hpp"

using namespace lego;

namespace {

GroupPtr d3() {
  static const GroupPtr g = std::make_shared<const GroupSpec>(build_dihedral(3));
  return g;
}

ElementId el(const char* name) { return d3()->id(name); }

std::vector<ElementId> ids(std::initializer_list<const char*> names) {
  std::vector<ElementId> out;
  for (const char* n : names) out.push_back(el(n));
  return out;
}

std::set<ElementId> as_set(const std::vector<ElementId>& v) { return {v.begin(), v.end()}; }

// Every chain of `length` clauses an experience can produce.
std::vector<LegoSequence> enumerate(const ExperienceSpec& exp, int length) {
  std::vector<LegoSequence> out;
  std::function<void(ElementId, ElementId, std::vector<ElementId>&)> rec = [&](ElementId start, ElementId state,
                                                                              std::vector<ElementId>& rels) {
    if (static_cast<int>(rels.size()) == length - 1) {
      out.push_back(build_sequence(*exp.group, start, rels));
      return;
    }
    for (ElementId r : exp.admissible(state)) {
      rels.push_back(r);
      rec(start, exp.group->compose(state, r), rels);
      rels.pop_back();
    }
  };
  for (ElementId s : exp.elements) {
    std::vector<ElementId> rels;
    rec(s, s, rels);
  }
  return out;
}

// Independent step-by-step interpreter over the Cayley table, canonical order.
std::vector<ElementId> interpret(const GroupSpec& g, const LegoSequence& seq) {
  std::vector<ElementId> out;
  for (const auto& c : seq.clauses) out.push_back(c.opening() ? c.operand : g.compose(out.back(), c.operand));
  return out;
}

std::vector<ElementId> labels_in_canonical_order(const TokenizedExample& ex) {
  std::vector<ElementId> out(static_cast<std::size_t>(ex.num_clauses()), -1);
  for (int p = 0; p < ex.length(); ++p) {
    if (ex.labels[static_cast<std::size_t>(p)] != kNoLabel) {
      out[static_cast<std::size_t>(ex.clause_of_token(p))] = ex.labels[static_cast<std::size_t>(p)];
    }
  }
  return out;
}

std::string render(const TokenizedExample& ex, const Vocab& v) {
  std::string s;
  for (int t : ex.tokens) s += (s.empty() ? "" : " ") + v.text(t);
  return s;
}

}  // namespace

TEST_SUITE("lego-data") {
  TEST_CASE("flip-flop experiences") {
    const auto e = make_flipflop_experiences(d3());
    REQUIRE(e.size() == 3);
    CHECK(as_set(e[0].elements) == as_set(ids({"spin", "mirror"})));
    CHECK(as_set(e[0].relations) == as_set(ids({"val", "reflect"})));
    CHECK(as_set(e[1].elements) == as_set(ids({"rotate", "reflect"})));
    CHECK(as_set(e[1].relations) == as_set(ids({"val", "mirror"})));
    CHECK(as_set(e[2].elements) == as_set(ids({"val", "flip"})));
    CHECK(as_set(e[2].relations) == as_set(ids({"val", "flip"})));
    for (const auto& x : e) {
      CHECK(x.is_closed());
      CHECK(validate_experience(x, true).empty());
    }
  }

  TEST_CASE("worked examples") {
    const auto& g = *d3();
    const auto s1 = build_sequence(g, el("spin"), ids({"val", "reflect", "reflect"}));
    CHECK(s1.targets() == ids({"spin", "spin", "mirror", "spin"}));
    const auto s2 = build_sequence(g, el("rotate"), ids({"val", "mirror", "val"}));
    CHECK(oracle_solve(g, s2) == ids({"rotate", "rotate", "reflect", "reflect"}));
    const auto s3 = build_sequence(g, el("val"), ids({"flip", "flip", "flip"}));
    CHECK(s3.targets() == ids({"val", "flip", "val", "flip"}));
    const Vocab v(g);
    const auto ex = tokenize(s3, v);
    CHECK(render(ex, v) == "a = val ; b = a ∘ flip ; c = b ∘ flip ; d = c ∘ flip");
    CHECK(labels_in_canonical_order(ex) == ids({"val", "flip", "val", "flip"}));
    CHECK(format_clauses(s1, v) == "a=spin b=a∘val c=b∘reflect d=c∘reflect");
    CHECK(parse_clauses(format_clauses(s1, v), v, g) == s1);
  }

  TEST_CASE("identity relations keep the start element") {
    for (const auto& e : make_flipflop_experiences(d3())) {
      for (ElementId s : e.elements) {
        const auto seq = build_sequence(*d3(), s, std::vector<ElementId>(5, el("val")));
        for (ElementId t : oracle_solve(*d3(), seq)) CHECK(t == s);
      }
    }
  }

  TEST_CASE("exhaustive T=3 oracle agreement, round trips and shuffle invariance") {
    const Vocab v(*d3());
    Rng rng(7);
    for (const auto& e : make_flipflop_experiences(d3())) {
      const auto all = enumerate(e, 3);
      CHECK(all.size() == 8);  // 2 starts x 2 x 2 relation choices
      std::set<std::vector<ElementId>> seen_chains;
      for (const auto& seq : all) {
        const auto ex = tokenize(seq, v);
        CHECK(labels_in_canonical_order(ex) == oracle_solve(*d3(), seq));
        CHECK(oracle_solve(*d3(), seq) == interpret(*d3(), seq));
        CHECK(detokenize(ex, v, *d3()) == seq);
        CHECK(tokenize(detokenize(ex, v, *d3()), v) == ex);
        for (int rep = 0; rep < 5; ++rep) {
          const auto sh = shuffle_presentation(seq, rng);
          const auto sx = tokenize(sh, v);
          CHECK(oracle_solve(*d3(), sh) == oracle_solve(*d3(), seq));
          CHECK(labels_in_canonical_order(sx) == labels_in_canonical_order(ex));
          CHECK(detokenize(sx, v, *d3()) == sh);
        }
        std::vector<ElementId> chain;
        for (const auto& c : seq.clauses) chain.push_back(c.operand);
        seen_chains.insert(chain);
      }
      CHECK(seen_chains.size() == 8);
      // Sampling only ever produces enumerated chains, and labels agree.
      std::set<std::vector<ElementId>> sampled;
      for (int n = 0; n < 400; ++n) {
        const auto seq = sample_sequence(e, 3, rng);
        std::vector<ElementId> chain;
        for (const auto& c : seq.clauses) chain.push_back(c.operand);
        CHECK(seen_chains.count(chain) == 1);
        sampled.insert(chain);
        CHECK(labels_in_canonical_order(tokenize(seq, v)) == oracle_solve(*d3(), seq));
      }
      CHECK(sampled.size() == 8);
    }
  }

  TEST_CASE("shuffles are uniform over permutations") {
    const auto seq = build_sequence(*d3(), el("spin"), ids({"val", "reflect", "reflect"}));
    Rng rng(123);
    std::map<std::vector<int>, int> counts;
    const int n = 10000;
    for (int i = 0; i < n; ++i) counts[shuffle_presentation(seq, rng).presentation]++;
    CHECK(counts.size() == 24);
    const double p = 1.0 / 24.0, mean = n * p, sigma = std::sqrt(n * p * (1 - p));
    for (const auto& [perm, c] : counts) CHECK(std::abs(c - mean) <= 3 * sigma);
    Rng r1(1);
    const auto one = build_sequence(*d3(), el("val"), {});
    CHECK(shuffle_presentation(one, r1).presentation == std::vector<int>{0});
  }

  TEST_CASE("token layout and sampled-sequence invariants") {
    for (int T = 1; T <= kMaxClauses; ++T) CHECK(token_length(T) == 3 + 5 * (T - 1) + (T - 1));
    const Vocab v(*d3());
    Rng rng(99);
    for (const auto& e : make_flipflop_experiences(d3())) {
      for (int n = 0; n < 200; ++n) {
        const int T = 1 + static_cast<int>(n % 6);
        const auto seq = shuffle_presentation(sample_sequence(e, T, rng), rng);
        const auto ex = tokenize(seq, v);
        CHECK(ex.length() == token_length(T));
        int labeled = 0;
        std::set<int> lhs;
        for (int p = 0; p < ex.length(); ++p) {
          if (ex.labels[static_cast<std::size_t>(p)] == kNoLabel) continue;
          ++labeled;
          CHECK(v.is_symbol(ex.tokens[static_cast<std::size_t>(p)]));
          lhs.insert(ex.tokens[static_cast<std::size_t>(p)]);
        }
        CHECK(labeled == T);
        CHECK(static_cast<int>(lhs.size()) == T);
        const auto targets = oracle_solve(*d3(), seq);
        for (ElementId t : targets) CHECK(e.contains(t));
        // Applying the involution twice returns to the earlier element.
        for (int t = 0; t + 2 < T; ++t) {
          const auto& c1 = seq.clauses[static_cast<std::size_t>(t + 1)];
          const auto& c2 = seq.clauses[static_cast<std::size_t>(t + 2)];
          if (c1.operand == c2.operand) CHECK(targets[static_cast<std::size_t>(t)] == targets[static_cast<std::size_t>(t + 2)]);
        }
      }
    }
    CHECK_THROWS_AS(sample_sequence(make_flipflop_experiences(d3())[0], 27, rng), DataError);
    CHECK_THROWS_AS(sample_sequence(make_flipflop_experiences(d3())[0], 5, rng, 5), DataError);
  }

  TEST_CASE("compositional, full and incremental experiences") {
    const auto comp = make_compositional_experiences(d3());
    REQUIRE(comp.size() == 2);
    CHECK(as_set(comp[0].elements) == as_set(ids({"spin", "mirror"})));
    CHECK(as_set(comp[0].relations) == as_set(ids({"val", "reflect"})));
    CHECK(as_set(comp[1].elements) == as_set(ids({"mirror", "rotate"})));
    CHECK(as_set(comp[1].relations) == as_set(ids({"val", "flip"})));
    CHECK(d3()->compose(el("mirror"), el("flip")) == el("rotate"));
    const auto first = as_set(comp[0].elements), second = as_set(comp[1].elements);
    std::vector<ElementId> common;
    std::set_intersection(first.begin(), first.end(), second.begin(), second.end(), std::back_inserter(common));
    CHECK(common.size() == 1);
    for (const auto& c : comp) CHECK(validate_experience(c, true).empty());

    const auto full = make_full_experience(comp);
    CHECK(as_set(full.elements) == as_set(ids({"spin", "mirror", "rotate"})));
    CHECK(validate_experience(full, false).empty());
    // spin -reflect-> mirror -flip-> rotate mixes both experiences' relations.
    auto chains = [](const ExperienceSpec& e) {
      std::set<std::vector<ElementId>> out;
      for (const auto& s : enumerate(e, 3)) {
        std::vector<ElementId> ch;
        for (const auto& c : s.clauses) ch.push_back(c.operand);
        out.insert(ch);
      }
      return out;
    };
    const std::vector<ElementId> mixed = ids({"spin", "reflect", "flip"});
    CHECK(chains(full).count(mixed) == 1);
    CHECK(chains(comp[0]).count(mixed) == 0);
    CHECK(chains(comp[1]).count(mixed) == 0);
    CHECK(oracle_solve(*d3(), build_sequence(*d3(), el("spin"), ids({"reflect", "flip"}))) ==
          ids({"spin", "mirror", "rotate"}));

    const auto inc = make_incremental_experiences(comp, full);
    REQUIRE(inc.size() == 3);
    CHECK(inc.front() == comp[0]);
    CHECK(inc.back() == full);
    CHECK(as_set(inc[1].elements) == as_set(full.elements));

    // Chance on the full task: the most frequent a_4 value covers about 1/3.
    const auto data = generate_dataset(full, 3000, 4, 5);
    std::map<ElementId, int> freq;
    for (const auto& ex : data.examples) freq[ex.sequence.targets()[3]]++;
    CHECK(freq.size() == 3);
    int top = 0;
    for (const auto& [k, c] : freq) top = std::max(top, c);
    CHECK(top / 3000.0 == doctest::Approx(1.0 / 3.0).epsilon(0.15));
  }

  TEST_CASE("dataset generation is deterministic and files round trip") {
    const auto e = make_flipflop_experiences(d3())[1];
    const auto a = generate_dataset(e, 64, 4, 42);
    const auto b = generate_dataset(e, 64, 4, 42);
    const auto c = generate_dataset(e, 64, 4, 43);
    std::ostringstream sa, sb, sc;
    write_dataset(a, sa);
    write_dataset(b, sb);
    write_dataset(c, sc);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str() != sc.str());
    std::istringstream in(sa.str());
    const auto back = read_dataset(in);
    std::ostringstream again;
    write_dataset(back, again);
    CHECK(again.str() == sa.str());
    CHECK(back.size() == 64);
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back.examples[i].tokens == a.examples[i].tokens);
      CHECK(back.examples[i].sequence == a.examples[i].sequence);
    }
    std::istringstream bad("# not a dataset\n");
    CHECK_THROWS_AS(read_dataset(bad), DataError);
  }

  TEST_CASE("paper preset sizes and lengths") {
    const auto c = resolve_config({{"scale", "paper"}});
    CHECK(c.data.train_size == 60000);
    CHECK(c.data.test_size == 6000);
    CHECK(c.data.train_length == 4);
    CHECK(c.data.test_length == 6);
  }
}
