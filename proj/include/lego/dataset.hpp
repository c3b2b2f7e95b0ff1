#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "lego/experience.hpp"
#include "lego/sequence.hpp"

namespace lego {

struct Example {
  std::int64_t id = 0;
  std::uint64_t seed = 0;  // per-example generator seed
  LegoSequence sequence;
  TokenizedExample tokens;
};

struct Dataset {
  ExperienceSpec experience;
  Vocab vocab;
  std::uint64_t seed = 0;
  int length = 0;  // clauses per example
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  const GroupSpec& group() const { return *experience.group; }
};

// `count` independent shuffled examples of `length` clauses. Example i is
// generated from derive_seed(seed, streams::dataset, i) alone.
Dataset generate_dataset(const ExperienceSpec& exp, int count, int length, std::uint64_t seed,
                         int num_symbols = kDefaultSymbols);

// Line-oriented text format. Header lines start with "# " and carry the
// format version, experience, seed, clause count, example count, symbol
// library size, group manifest, experience element/relation names and the
// vocabulary. Each record line has seven tab-separated fields:
//   id, experience, example seed, canonical clauses, presentation order,
//   token ids, labels
// Lists inside a field are space-separated.
void write_dataset(const Dataset& data, std::ostream& out);
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace lego
