#include "lego/dataset.hpp"

#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>

#include "lego/errors.hpp"

namespace lego {

namespace {

constexpr const char* kMagic = "lego-dataset 1";

template <class Range>
std::string join(const Range& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ' ';
    out += std::to_string(v);
  }
  return out;
}

std::vector<int> parse_ints(const std::string& field) {
  std::istringstream in(field);
  std::vector<int> out;
  for (int v; in >> v;) out.push_back(v);
  if (!in.eof()) throw DataError("malformed integer list '" + field + "'");
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string names_of(const GroupSpec& g, const std::vector<ElementId>& ids) {
  std::string out;
  for (ElementId e : ids) {
    if (!out.empty()) out += ' ';
    out += g.name(e);
  }
  return out;
}

std::vector<ElementId> ids_of(const GroupSpec& g, const std::string& names) {
  std::istringstream in(names);
  std::vector<ElementId> out;
  for (std::string w; in >> w;) out.push_back(g.id(w));
  return out;
}

}  // namespace

Dataset generate_dataset(const ExperienceSpec& exp, int count, int length, std::uint64_t seed,
                         int num_symbols) {
  if (count < 1) throw DataError("dataset needs at least one example");
  if (!exp.group) throw DataError("experience '" + exp.name + "' has no group");
  Dataset data{exp, Vocab(*exp.group, num_symbols), seed, length, {}};
  data.examples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Example ex;
    ex.id = i;
    ex.seed = derive_seed(seed, streams::dataset, static_cast<std::uint64_t>(i));
    Rng rng(ex.seed);
    ex.sequence = shuffle_presentation(sample_sequence(exp, length, rng, num_symbols), rng);
    ex.tokens = tokenize(ex.sequence, data.vocab);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

void write_dataset(const Dataset& data, std::ostream& out) {
  const auto& g = data.group();
  out << "# " << kMagic << '\n';
  out << "# experience " << data.experience.name << '\n';
  out << "# seed " << data.seed << '\n';
  out << "# length " << data.length << '\n';
  out << "# count " << data.examples.size() << '\n';
  out << "# symbols " << data.vocab.num_symbols() << '\n';
  for (const auto& line : g.manifest_lines()) out << "# " << line << '\n';
  out << "# exp-elements " << names_of(g, data.experience.elements) << '\n';
  out << "# exp-relations " << names_of(g, data.experience.relations) << '\n';
  out << "# vocab";
  for (int t = 0; t < data.vocab.size(); ++t) out << ' ' << data.vocab.text(t);
  out << '\n';
  out << "# fields id\texperience\tseed\tclauses\tpresentation\ttokens\tlabels\n";
  for (const auto& ex : data.examples) {
    out << ex.id << '\t' << data.experience.name << '\t' << ex.seed << '\t'
        << format_clauses(ex.sequence, data.vocab) << '\t' << join(ex.sequence.presentation) << '\t'
        << join(ex.tokens.tokens) << '\t' << join(ex.tokens.labels) << '\n';
  }
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_dataset(data, out);
  out.flush();
  if (!out) throw DataError("failed writing " + path.string());
}

Dataset read_dataset(std::istream& in, const std::string& source) {
  auto fail = [&](const std::string& what) -> DataError { return DataError(source + ": " + what); };
  std::vector<std::string> header;
  std::string line;
  while (in.peek() == '#' && std::getline(in, line)) {
    if (line.size() < 2) throw fail("empty header line");
    header.push_back(line.substr(2));
  }
  if (header.empty() || header[0] != kMagic) throw fail("not a lego dataset (missing magic line)");

  auto value = [&](std::size_t idx, const std::string& key) {
    if (idx >= header.size() || header[idx].rfind(key + " ", 0) != 0) {
      throw fail("expected header key '" + key + "'");
    }
    return header[idx].substr(key.size() + 1);
  };
  const std::string exp_name = value(1, "experience");
  const std::uint64_t seed = std::stoull(value(2, "seed"));
  const int length = std::stoi(value(3, "length"));
  const std::size_t count = std::stoull(value(4, "count"));
  const int symbols = std::stoi(value(5, "symbols"));

  const std::string group_head = header.size() > 6 ? header[6] : "";
  const auto order_pos = group_head.find("order=");
  if (order_pos == std::string::npos) throw fail("missing group manifest");
  const int order = std::stoi(group_head.substr(order_pos + 6));
  const std::size_t g_end = 6 + 2 + static_cast<std::size_t>(order);
  if (header.size() < g_end + 4) throw fail("truncated header");
  auto group = std::make_shared<const GroupSpec>(GroupSpec::from_manifest(
      std::vector<std::string>(header.begin() + 6, header.begin() + static_cast<std::ptrdiff_t>(g_end))));

  ExperienceSpec exp{exp_name, ids_of(*group, value(g_end, "exp-elements")),
                     ids_of(*group, value(g_end + 1, "exp-relations")), group};
  Dataset data{exp, Vocab(*group, symbols), seed, length, {}};
  {
    std::string listed = "vocab";
    for (int t = 0; t < data.vocab.size(); ++t) listed += " " + data.vocab.text(t);
    if (header[g_end + 2] != listed) throw fail("vocabulary table does not match the group");
  }

  data.examples.reserve(count);
  std::size_t line_no = header.size();
  while (std::getline(in, line)) {
    ++line_no;
    const auto where = " (line " + std::to_string(line_no) + ")";
    const auto f = split(line, '\t');
    if (f.size() != 7) throw fail("expected 7 fields" + where);
    if (f[1] != exp_name) throw fail("record belongs to experience '" + f[1] + "'" + where);
    Example ex;
    ex.id = std::stoll(f[0]);
    ex.seed = std::stoull(f[2]);
    ex.sequence = parse_clauses(f[3], data.vocab, *group);
    ex.sequence.presentation = parse_ints(f[4]);
    if (ex.sequence.length() != length) throw fail("clause count differs from header" + where);
    ex.tokens = tokenize(ex.sequence, data.vocab);
    if (ex.tokens.tokens != parse_ints(f[5]) || ex.tokens.labels != parse_ints(f[6])) {
      throw fail("tokens or labels disagree with the clause list" + where);
    }
    data.examples.push_back(std::move(ex));
  }
  if (data.examples.size() != count) {
    throw fail("header promises " + std::to_string(count) + " examples, found " +
               std::to_string(data.examples.size()));
  }
  return data;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return read_dataset(in, path.string());
}

}  // namespace lego
