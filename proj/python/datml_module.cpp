#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "datml/corpus/generator.hpp"
#include "datml/eval/eval.hpp"
#include "datml/meta/meta.hpp"
#include "datml/pipeline/checkpoint.hpp"
#include "datml/pipeline/pipeline.hpp"

namespace py = pybind11;
using namespace datml;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::object json_loads(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

ParamSet to_params(const py::dict& d) {
  ParamSet p;
  for (auto [k, v] : d) {
    Array a = py::cast<Array>(v);
    Shape shape(a.shape(), a.shape() + a.ndim());
    p.add(py::cast<std::string>(k), Tensor::from(shape, std::vector<Scalar>(a.data(), a.data() + a.size())));
  }
  return p;
}

py::dict to_dict(const ParamSet& p) {
  py::dict out;
  for (const auto& [name, t] : p) {
    Array a(t.shape());
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    out[py::str(name)] = a;
  }
  return out;
}

EntitySet to_entities(const py::iterable& items) {
  EntitySet s;
  for (auto e : items) {
    auto pair = py::cast<std::pair<std::string, std::string>>(e);
    s.insert({pair.first, pair.second});
  }
  return s;
}

py::dict dialogue_dict(const Dialogue& d) {
  py::list turns;
  for (const auto& t : d.turns) {
    py::list ents;
    for (const auto& e : t.entities) ents.append(py::make_tuple(e.slot, e.value));
    py::dict turn;
    turn["speaker"] = speaker_name(t.speaker);
    turn["domain"] = t.domain;
    turn["tokens"] = t.tokens;
    turn["entities"] = ents;
    turns.append(turn);
  }
  py::dict out;
  out["id"] = d.id;
  out["domains"] = std::vector<std::string>(d.domains.begin(), d.domains.end());
  out["turns"] = turns;
  return out;
}

}  // namespace

PYBIND11_MODULE(datml, m) {
  m.doc() = "Few-shot dialogue generation with discrete latent transfer and meta-learning";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<CheckpointKindMismatch>(m, "CheckpointKindMismatch", PyExc_RuntimeError);
  py::register_exception<CheckpointTruncated>(m, "CheckpointTruncated", PyExc_RuntimeError);
  py::register_exception<CheckpointShapeError>(m, "CheckpointShapeError", PyExc_RuntimeError);
  py::register_exception<MissingStage>(m, "MissingStage", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("tokenize", &tokenize, py::arg("text"));
  m.def("bleu", &bleu, py::arg("candidates"), py::arg("references"),
        "Corpus BLEU-4 over aligned token lists, in [0, 1].");
  m.def(
      "entity_f1",
      [](const std::vector<py::iterable>& predicted, const std::vector<py::iterable>& gold) {
        std::vector<EntitySet> p, g;
        for (const auto& x : predicted) p.push_back(to_entities(x));
        for (const auto& x : gold) g.push_back(to_entities(x));
        const auto s = entity_f1(p, g);
        py::dict out;
        out["precision"] = s.precision;
        out["recall"] = s.recall;
        out["f1"] = s.f1;
        out["predicted"] = s.predicted;
        out["gold"] = s.gold;
        out["correct"] = s.correct;
        return out;
      },
      py::arg("predicted"), py::arg("gold"), "Micro-averaged entity scores; each turn is an iterable of (slot, value).");

  m.def(
      "generate_corpus",
      [](std::size_t domains, std::size_t dialogues_per_domain, std::uint64_t seed, double multi_domain_fraction) {
        auto spec = default_corpus_spec(domains, dialogues_per_domain);
        spec.seed = seed;
        spec.multi_domain_fraction = multi_domain_fraction;
        const auto g = generate_corpus(spec);
        py::list dialogues;
        for (const auto& d : g.dialogues) dialogues.append(dialogue_dict(d));
        py::dict kb;
        for (const auto& [domain, rows] : g.kb.tables) kb[py::str(domain)] = rows;
        return py::make_tuple(dialogues, kb);
      },
      py::arg("domains") = 4, py::arg("dialogues_per_domain") = 150, py::arg("seed") = 271,
      py::arg("multi_domain_fraction") = 0.0, "Synthetic corpus as (dialogues, knowledge base).");

  m.def(
      "reptile_update",
      [](const py::dict& theta, const py::dict& adapted, double alpha) {
        ParamSet t = to_params(theta);
        reptile_update(t, to_params(adapted), alpha);
        return to_dict(t);
      },
      py::arg("theta"), py::arg("adapted"), py::arg("alpha"), "theta + alpha (adapted - theta) per array.");
  m.def(
      "early_stop_check",
      [](const std::vector<double>& val_accuracies, std::size_t epoch) {
        TrainHistory h;
        for (std::size_t i = 0; i < val_accuracies.size(); ++i) h.add({i + 1, 0.0, val_accuracies[i]});
        return early_stop_check(h, epoch);
      },
      py::arg("val_accuracies"), py::arg("epoch"), "Validation accuracies of epochs 1..n.");

  m.def(
      "default_config", [] { return json_loads(RunConfig{}.to_json()); }, "Every run configuration field.");
  m.def(
      "config_fingerprint", [](const std::string& text) { return RunConfig::from_json(text).fingerprint(); },
      py::arg("config_json"));

  m.def(
      "save_checkpoint",
      [](const std::filesystem::path& path, const py::dict& params, const std::string& kind,
         const std::string& fingerprint, const std::string& config_json) {
        save_checkpoint(path, to_params(params), kind, fingerprint, config_json);
      },
      py::arg("path"), py::arg("params"), py::arg("kind"), py::arg("fingerprint") = "", py::arg("config_json") = "{}");
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path, const std::string& kind) {
        const auto c = load_checkpoint(path, kind);
        py::dict out;
        out["kind"] = c.kind;
        out["fingerprint"] = c.fingerprint;
        out["config"] = json_loads(c.config);
        out["params"] = to_dict(c.params);
        return out;
      },
      py::arg("path"), py::arg("kind"));

  m.def(
      "run_command",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int status;
        {
          py::gil_scoped_release release;
          status = run_command(args, out, err);
        }
        return py::make_tuple(status, out.str(), err.str());
      },
      py::arg("args"), "Runs a datml subcommand; returns (status, stdout, stderr).");
  m.def(
      "run_all",
      [](const std::filesystem::path& config, const std::filesystem::path& out) {
        PipelineOptions o;
        o.config = RunConfig::load(config);
        o.out = out;
        EvalOutcome r;
        {
          py::gil_scoped_release release;
          r = run_all(o);
        }
        py::dict d;
        d["finetuned"] = json_loads(r.finetuned.to_json());
        d["source"] = json_loads(r.source.to_json());
        return d;
      },
      py::arg("config"), py::arg("out"), "Every stage; returns the fine-tuned and source-model reports.");
}
