#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

#include "lego/errors.hpp"
#include "lego/experiment.hpp"
#include "lego/harness.hpp"
#include "lego/metrics.hpp"
#include "lego/sequence.hpp"

namespace py = pybind11;
using namespace lego;

namespace {

// JSON crosses the boundary as text; the Python side wraps it with json.loads.
nlohmann::json parse_doc(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

std::vector<std::string> names(const GroupSpec& g, const std::vector<ElementId>& ids) {
  std::vector<std::string> out;
  for (ElementId e : ids) out.push_back(g.name(e));
  return out;
}

std::vector<ExperienceSpec> schedule_for(const std::string& kind, const GroupPtr& g) {
  ExperimentConfig c;
  c.train.schedule = schedule_from_string(kind);
  return build_schedule(c, g);
}

py::dict experience_dict(const ExperienceSpec& e) {
  py::dict d;
  d["name"] = e.name;
  d["elements"] = names(*e.group, e.elements);
  d["relations"] = names(*e.group, e.relations);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Continual LEGO core: groups, sequences, training and analysis.";

  // Translators are tried newest first, so subclasses map to their category.
  const auto base = py::register_exception<Error>(m, "LegoError");
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<TrainingError>(m, "TrainingError", base);
  py::register_exception<AnalysisError>(m, "AnalysisError", base);

  py::class_<GroupSpec, std::shared_ptr<GroupSpec>>(m, "Group")
      .def(py::init([](int k) { return std::make_shared<GroupSpec>(build_dihedral(k)); }), py::arg("k") = 3,
           "Dihedral group of order 2k.")
      .def_property_readonly("order", &GroupSpec::order)
      .def_property_readonly("names", [](const GroupSpec& g) {
        std::vector<std::string> out;
        for (const auto& e : g.elements()) out.push_back(e.name);
        return out;
      })
      .def_property_readonly("identity", [](const GroupSpec& g) { return g.name(g.identity()); })
      .def("compose", [](const GroupSpec& g, const std::string& a, const std::string& b) {
        return g.name(g.compose(g.id(a), g.id(b)));
      })
      .def("inverse", [](const GroupSpec& g, const std::string& a) { return g.name(g.inverse(g.id(a))); })
      .def("element_order", [](const GroupSpec& g, const std::string& a) { return g.element_order(g.id(a)); })
      .def("table", [](const GroupSpec& g) {
        std::vector<std::vector<std::string>> rows;
        for (int a = 0; a < g.order(); ++a) {
          std::vector<std::string> row;
          for (int b = 0; b < g.order(); ++b) row.push_back(g.name(g.compose(a, b)));
          rows.push_back(std::move(row));
        }
        return rows;
      })
      .def("violations", [](const GroupSpec& g) { return validate_group(g); });

  m.def(
      "experiences",
      [](const std::string& schedule) {
        const auto g = std::make_shared<const GroupSpec>(build_dihedral(3));
        py::list out;
        for (const auto& e : schedule_for(schedule, g)) out.append(experience_dict(e));
        return out;
      },
      py::arg("schedule") = "flipflop", "Experiences of a D3 schedule.");

  m.def(
      "sample",
      [](const std::string& schedule, int index, int length, std::uint64_t seed) {
        const auto g = std::make_shared<const GroupSpec>(build_dihedral(3));
        const auto exps = schedule_for(schedule, g);
        if (index < 0 || index >= static_cast<int>(exps.size())) throw DataError("experience index out of range");
        Rng rng(seed);
        const auto seq = shuffle_presentation(sample_sequence(exps[static_cast<std::size_t>(index)], length, rng), rng);
        const Vocab vocab(*g);
        const auto tok = tokenize(seq, vocab);
        std::vector<std::string> tokens;
        for (int t : tok.tokens) tokens.push_back(vocab.text(t));
        py::dict d;
        d["clauses"] = format_clauses(seq, vocab);
        d["tokens"] = tokens;
        d["targets"] = names(*g, seq.targets());
        return d;
      },
      py::arg("schedule"), py::arg("index"), py::arg("length"), py::arg("seed"),
      "One shuffled sequence from experience `index` of a D3 schedule.");

  m.def(
      "solve",
      [](const std::string& clauses) {
        const GroupSpec g = build_dihedral(3);
        const Vocab vocab(g);
        return names(g, oracle_solve(g, parse_clauses(clauses, vocab, g)));
      },
      py::arg("clauses"), "Brute-force solution of a clause list such as 'a=spin b=a∘reflect'.");

  m.def(
      "resolve_config", [](const std::string& doc) { return nlohmann::json(resolve_config(parse_doc(doc))).dump(); },
      py::arg("doc"));

  m.def(
      "generate",
      [](const std::string& doc) {
        const auto files = cmd_generate(resolve_config(parse_doc(doc)));
        std::vector<std::string> out;
        for (const auto& f : files) out.push_back(f.path.string());
        return out;
      },
      py::arg("doc"));

  m.def(
      "train",
      [](const std::string& doc) {
        const auto cfg = resolve_config(parse_doc(doc));
        std::vector<RunResult> runs;
        {
          py::gil_scoped_release release;
          runs = cmd_train(cfg);
        }
        nlohmann::json out = nlohmann::json::array();
        for (const auto& r : runs) {
          out.push_back({{"dir", r.dir.string()},
                         {"seed", r.seed},
                         {"replay_fraction", r.replay_fraction},
                         {"metrics", r.metrics ? to_json_value(*r.metrics) : nlohmann::json(nullptr)}});
        }
        return out.dump();
      },
      py::arg("doc"));

  m.def(
      "analyze",
      [](const std::vector<std::filesystem::path>& runs, int probe_size) {
        std::vector<RunAnalysis> res;
        {
          py::gil_scoped_release release;
          res = cmd_analyze(runs, probe_size);
        }
        nlohmann::json out = nlohmann::json::array();
        for (const auto& a : res) {
          nlohmann::json pre = nlohmann::json::array();
          for (const auto& [k, v] : a.preceding) pre.push_back({{"epoch", k}, {"per_layer", v}});
          nlohmann::json cos = nlohmann::json::array();
          for (const auto& c : a.cosine) cos.push_back({{"before", c.before}, {"after", c.after}, {"per_layer", c.per_layer}});
          out.push_back({{"dir", a.dir.string()}, {"preceding", pre}, {"cosine", cos}});
        }
        return out.dump();
      },
      py::arg("runs"), py::arg("probe_size") = 50);

  m.def("plot", &cmd_plot, py::arg("tables"), py::arg("out_dir"));

  m.def(
      "metrics_from_table",
      [](const std::filesystem::path& table, const std::vector<std::string>& experiences, int epochs_per_experience) {
        std::ifstream in(table);
        if (!in) throw AnalysisError("cannot read " + table.string());
        const auto record = read_metrics_csv(in, experiences, epochs_per_experience);
        return to_json_value(compute_metrics(record)).dump();
      },
      py::arg("table"), py::arg("experiences"), py::arg("epochs_per_experience"));
}
