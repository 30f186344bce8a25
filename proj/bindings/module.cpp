#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "p2r/ast_io.hpp"
#include "p2r/frontend.hpp"
#include "p2r/matcher.hpp"
#include "p2r/patch.hpp"
#include "p2r/refine.hpp"
#include "p2r/rulegen.hpp"
#include "p2r/treediff.hpp"

namespace py = pybind11;
using namespace p2r;

namespace {

EditScript diff_functions(const std::string &pre_text,
                          const std::string &post_text) {
  auto pre = std::make_shared<AstTree>(parse_function(pre_text));
  auto post = std::make_shared<AstTree>(parse_function(post_text));
  return derive_editscript(pre, post, match_trees(*pre, *post));
}

Rule generate_rule(const std::string &pre_text, const std::string &post_text,
                   const GenerationConfig &config) {
  EditScript script = diff_functions(pre_text, post_text);
  Rule rule = generate_raw_rule(script);
  rule = enrich_cfg(std::move(rule), script);
  rule = enrich_dfg(std::move(rule), script, config);
  return generalize(std::move(rule), config);
}

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Patch-to-rule pipeline: parse C, diff ASTs, generate and "
            "evaluate static-analysis rules";

  py::class_<Loc>(m, "Loc")
      .def_readonly("file", &Loc::file)
      .def_readonly("start_line", &Loc::start_line)
      .def_readonly("start_col", &Loc::start_col)
      .def_readonly("end_line", &Loc::end_line)
      .def_readonly("end_col", &Loc::end_col);

  py::class_<AstTree>(m, "AstTree")
      .def_readonly("function_name", &AstTree::function_name)
      .def("size", &AstTree::size)
      .def("serialize", [](const AstTree &t) { return serialize(t); })
      .def("render", [](const AstTree &t) { return render_source(t); });

  py::class_<SourceUnit>(m, "SourceUnit")
      .def_readonly("path", &SourceUnit::path)
      .def_readonly("functions", &SourceUnit::functions)
      .def("diagnostics", [](const SourceUnit &u) {
        std::vector<std::string> out;
        for (const auto &d : u.diagnostics)
          out.push_back(d.to_string());
        return out;
      });

  py::class_<EditScript>(m, "EditScript")
      .def("__len__", [](const EditScript &s) { return s.ops.size(); })
      .def("format", [](const EditScript &s) { return format_editscript(s); });

  py::class_<GenerationConfig>(m, "GenerationConfig")
      .def(py::init<>())
      .def_readwrite("wrapper_substitutions",
                     &GenerationConfig::wrapper_substitutions)
      .def_readwrite("drop_noise", &GenerationConfig::drop_noise)
      .def_readwrite("operand_symmetry", &GenerationConfig::operand_symmetry)
      .def_readwrite("max_dfg_hops", &GenerationConfig::max_dfg_hops);

  py::class_<Rule>(m, "Rule")
      .def_readonly("rule_id", &Rule::rule_id)
      .def_readonly("provenance", &Rule::provenance)
      .def("predicate_count", [](const Rule &r) { return r.predicates.size(); })
      .def("serialize", [](const Rule &r) { return serialize_rule(r); })
      .def("emit_text", [](const Rule &r) { return emit_text(r); });

  py::class_<FunctionMatch>(m, "FunctionMatch")
      .def_readonly("function_name", &FunctionMatch::function_name)
      .def_readonly("file", &FunctionMatch::file)
      .def_readonly("bindings", &FunctionMatch::bindings);

  py::class_<MatchReport>(m, "MatchReport")
      .def_readonly("rule_id", &MatchReport::rule_id)
      .def_readonly("matches", &MatchReport::matches);

  py::class_<AstDatabase>(m, "AstDatabase")
      .def("function_count",
           [](const AstDatabase &db) { return db.functions.size(); });

  m.def("parse_unit", &parse_unit, py::arg("path"), py::arg("text"));
  m.def("parse_function", &parse_function, py::arg("text"));
  m.def("deserialize", &deserialize, py::arg("doc"));
  m.def("deserialize_rule", &deserialize_rule, py::arg("doc"));
  m.def("diff_functions", &diff_functions, py::arg("pre"), py::arg("post"));
  m.def("generate_rule", &generate_rule, py::arg("pre"), py::arg("post"),
        py::arg("config") = GenerationConfig{});
  m.def("build_db", &build_db, py::arg("paths"));
  m.def(
      "match_source",
      [](const std::string &rule_doc, const std::string &text) {
        Rule rule = deserialize_rule(rule_doc);
        SourceUnit unit = parse_unit("<memory>", text);
        std::vector<FunctionMatch> out;
        for (const auto &fn : unit.functions)
          if (auto match = match_function(fn, unit.path, rule))
            out.push_back(std::move(*match));
        return out;
      },
      py::arg("rule_doc"), py::arg("text"),
      "Evaluate a serialized rule against C source text");
}
