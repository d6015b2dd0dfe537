// Python bindings: metrics, corpus generation and checks, checkpoint loading
// and decoding. Structured results come back as plain dicts and lists.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <variant>

#include "unigen/checkpoint.hpp"
#include "unigen/config.hpp"
#include "unigen/corpus.hpp"
#include "unigen/decoding.hpp"
#include "unigen/error.hpp"
#include "unigen/metrics.hpp"
#include "unigen/syntax.hpp"

namespace py = pybind11;
using namespace unigen;
using Words = std::vector<std::string>;

namespace {

py::object to_python(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

model::Paradigm paradigm_from(const std::string& name) {
  if (name == "seq") return model::Paradigm::seq;
  if (name == "tree") return model::Paradigm::tree;
  throw ConfigError("unknown paradigm '" + name + "' (expected seq or tree)");
}

Words split_words(const std::string& text) {
  Words out;
  std::istringstream in(text);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

py::dict example_dict(const corpus::ParallelExample& ex) {
  py::dict d;
  d["id"] = ex.id;
  d["source"] = ex.source;
  d["target"] = join(ex.target_tokens);
  d["n"] = ex.n();
  d["m"] = ex.m();
  return d;
}

py::dict output_dict(const decoding::DecodeOutput& out) {
  py::dict d;
  d["paradigm"] = model::to_string(out.paradigm);
  d["tokens"] = out.words();
  d["code"] = join(out.tokens);
  d["status"] = decoding::to_string(out.status);
  d["score"] = out.score;
  return d;
}

struct PyModel {
  model::Model model;
  checkpoint::Metadata metadata;

  py::dict decode(const std::variant<std::string, Words>& source, const std::string& paradigm, int beam,
                  int max_length) const {
    Words words = std::holds_alternative<std::string>(source) ? split_words(std::get<std::string>(source))
                                                              : std::get<Words>(source);
    decoding::Strategy strategy{beam, max_length};
    if (paradigm == "routed") {
      auto routed = decoding::route_and_decode(model, words, strategy);
      py::dict d = output_dict(routed.output);
      d["p_seq"] = routed.p[0];
      d["p_tree"] = routed.p[1];
      return d;
    }
    return output_dict(decoding::decode(model, paradigm_from(paradigm), words, strategy));
  }
};

}  // namespace

PYBIND11_MODULE(unigen, m) {
  m.doc() = "Unified seq/tree code generation";

  static py::exception<Error> base(m, "UnigenError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.def("bleu", &metrics::bleu_sentence, py::arg("hyp"), py::arg("ref"),
        "Smoothed sentence BLEU of two token lists, in [0, 1].");
  m.def(
      "corpus_bleu",
      [](const std::vector<Words>& hyps, const std::vector<Words>& refs) {
        if (hyps.size() != refs.size()) throw ConfigError("hyps and refs differ in length");
        std::vector<std::pair<Words, Words>> pairs;
        for (std::size_t k = 0; k < hyps.size(); ++k) pairs.emplace_back(hyps[k], refs[k]);
        return metrics::bleu_corpus(pairs);
      },
      py::arg("hyps"), py::arg("refs"));
  m.def(
      "codebleu",
      [](const Words& hyp, const Words& ref, const std::string& task) {
        auto c = metrics::codebleu(hyp, ref, corpus::target_grammar(corpus::task_from_string(task)));
        py::dict d;
        d["ngram"] = c.ngram;
        d["weighted_ngram"] = c.weighted_ngram;
        d["syntax"] = c.syntax;
        d["dataflow"] = c.dataflow;
        d["composite"] = c.composite;
        return d;
      },
      py::arg("hyp"), py::arg("ref"), py::arg("task") = "nl2code");
  m.def(
      "tokenize",
      [](const std::string& code, const std::string& task) {
        Words out;
        for (const auto& t : lex(code, corpus::target_grammar(corpus::task_from_string(task)))) out.push_back(t.lexeme);
        return out;
      },
      py::arg("code"), py::arg("task") = "nl2code");

  m.def(
      "generate",
      [](const std::string& task, int size, std::uint64_t seed, int depth, const std::string& out) {
        corpus::GenerationConfig g;
        g.task = corpus::task_from_string(task);
        g.size = size;
        g.seed = seed;
        g.depth = depth;
        auto split = corpus::generate_synthetic(g);
        if (!out.empty()) corpus::save_split(split, out);
        py::dict d;
        for (auto [name, part] : {std::pair{"train", &split.train}, {"valid", &split.valid}, {"test", &split.test}}) {
          py::list rows;
          for (const auto& ex : *part) rows.append(example_dict(ex));
          d[name] = rows;
        }
        return d;
      },
      py::arg("task") = "nl2code", py::arg("size") = 100, py::arg("seed") = 0, py::arg("depth") = 2,
      py::arg("out") = "", "Synthetic corpus as {train, valid, test}; also written to `out` when given.");
  m.def(
      "roundtrip_check", [](const std::string& dir) { return to_python(corpus::roundtrip_check(dir).to_json()); },
      py::arg("dir"));

  py::class_<PyModel>(m, "Model")
      .def_static(
          "load",
          [](const std::string& path) {
            auto loaded = checkpoint::load(path);
            return PyModel{std::move(loaded.model), std::move(loaded.metadata)};
          },
          py::arg("path"))
      .def_property_readonly("has_selector", [](const PyModel& p) { return p.model.selector.has_value(); })
      .def_property_readonly("stage", [](const PyModel& p) { return p.metadata.stage; })
      .def_property_readonly("config", [](const PyModel& p) { return to_python(config::to_json(p.model.config)); })
      .def("decode", &PyModel::decode, py::arg("source"), py::arg("paradigm") = "routed", py::arg("beam") = 1,
           py::arg("max_length") = 512,
           "Decodes a source sentence (string or word list) under seq, tree or the selector's choice.")
      .def(
          "evaluate",
          [](const PyModel& p, const std::string& data_dir, const std::string& split, int beam, std::uint64_t seed) {
            auto data = corpus::load_split(data_dir);
            const auto& part = split == "train" ? data.train : split == "valid" ? data.valid : data.test;
            decoding::EvalConfig ec;
            ec.strategy = decoding::Strategy::beam_search(beam);
            ec.random_seed = seed;
            if (!p.model.selector)
              ec.modes = {decoding::Mode::seq, decoding::Mode::tree, decoding::Mode::random, decoding::Mode::oracle};
            return to_python(decoding::evaluate(p.model, part, ec).to_json());
          },
          py::arg("data_dir"), py::arg("split") = "test", py::arg("beam") = 5, py::arg("seed") = 0);
}
