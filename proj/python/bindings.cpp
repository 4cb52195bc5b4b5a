#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fairlens/error.hpp"
#include "fairlens/fairpro.hpp"
#include "fairlens/judge.hpp"
#include "fairlens/lexicon.hpp"
#include "fairlens/metrics.hpp"
#include "fairlens/pipeline.hpp"
#include "fairlens/probes.hpp"

namespace py = pybind11;
using namespace fairlens;
using nlohmann::json;

namespace {

// Structured values cross the boundary as JSON text; the Python package
// decodes them.
py::tuple fd(const std::vector<std::vector<double>>& per_prompt) {
  if (per_prompt.empty()) throw Error(ErrorCode::InvalidInput, "no distributions");
  std::vector<AttributeDistribution> dists(per_prompt.size());
  for (std::size_t i = 0; i < per_prompt.size(); ++i) dists[i].probs = per_prompt[i];
  const auto s = fd_bias(dists, per_prompt.front().size());
  return py::make_tuple(s.raw_fd, s.normalized);
}

std::map<std::string, std::size_t> words(const std::vector<std::string>& texts, const std::string& dimension) {
  return word_distribution(texts, WordCategoryLexicon::default_lexicon(), parse_dimension(dimension));
}

py::tuple parse_meta(const std::string& raw, const std::string& format) {
  const auto p = parse_fair_output(raw, parse_output_format(format));
  return py::make_tuple(p.reasoning, p.system_prompt);
}

std::string desk_config() { return RunConfig::desk_preset().to_json().dump(); }

py::dict audit(const std::string& config_json, const std::string& output_dir) {
  RunConfig config = RunConfig::from_json(json::parse(config_json));
  if (!output_dir.empty()) config.output_dir = output_dir;
  AuditOutcome outcome;
  {
    py::gil_scoped_release release;
    outcome = AuditRunner(std::move(config)).run();
  }
  py::dict d;
  d["exit_code"] = outcome.exit_code;
  d["run_dir"] = outcome.run_dir.string();
  d["error"] = outcome.error;
  d["error_code"] = outcome.error_code ? py::cast(std::string(to_string(*outcome.error_code))) : py::none();
  d["report"] = outcome.report ? py::cast(outcome.report->to_json().dump()) : py::none();
  d["calls"] = outcome.calls.total();
  return d;
}

}  // namespace

PYBIND11_MODULE(_fairlens, m) {
  m.doc() = "Native core of the fairlens bias-audit toolkit.";

  static py::exception<Error> error(m, "FairlensError");
  static py::exception<ParseFailed> parse_failed(m, "ParseFailed", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParseFailed& e) {
      py::set_error(parse_failed, e.what());
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.attr("__version__") = std::string(kToolVersion);

  m.def("fd_bias", &fd, py::arg("distributions"),
        "Mean distance to uniform over per-prompt distributions; returns (raw, normalized).");
  m.def("normalization_factor", &normalization_factor, py::arg("n_classes"));
  m.def("distance_to_uniform", [](const std::vector<double>& p) { return distance_to_uniform(p); }, py::arg("probs"));
  m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson(x, y); },
        py::arg("xs"), py::arg("ys"));
  m.def("association_score", &association_score, py::arg("male_concept"), py::arg("female_concept"),
        py::arg("occupation"));
  m.def("word_distribution", &words, py::arg("texts"), py::arg("dimension"));
  m.def("parse_fair_output", &parse_meta, py::arg("raw"), py::arg("format") = "tagged",
        "Returns (reasoning, system_prompt); raises ParseFailed.");
  m.def("parse_label",
        [](const std::string& answer, const std::vector<std::string>& options) { return parse_label(answer, options); },
        py::arg("answer"), py::arg("options"));
  m.def("desk_config_json", &desk_config);
  m.def("audit_json", &audit, py::arg("config_json"), py::arg("output_dir") = "");
}
