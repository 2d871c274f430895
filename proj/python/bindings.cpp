#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "specache/experiment.hpp"
#include "specache/verifier.hpp"

namespace py = pybind11;
using namespace specache;

namespace {

std::optional<std::filesystem::path> out_path(const std::optional<std::string>& dir) {
  if (!dir) return std::nullopt;
  return std::filesystem::path(*dir);
}

// Config text in, report JSON text out. The Python layer does the dict
// conversion so the core never sees Python objects.
template <OrderedJson (*Run)(const ExperimentConfig&, const std::optional<std::filesystem::path>&)>
std::string run_command(const std::string& config_text, const std::optional<std::string>& out_dir) {
  const ExperimentConfig config = parse_experiment_config(config_text);
  const auto out = out_path(out_dir);
  py::gil_scoped_release release;
  return Run(config, out).dump();
}

}  // namespace

PYBIND11_MODULE(_specache, m) {
  m.doc() = "specache core bindings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("effective_config", [](const std::string& text) { return OrderedJson(parse_experiment_config(text)).dump(); },
        py::arg("config_text"));
  m.def("config_digest", [](const std::string& text) { return config_digest(parse_experiment_config(text)); },
        py::arg("config_text"));

  m.def("simulate", &run_command<run_simulate>, py::arg("config_text"), py::arg("out_dir") = py::none());
  m.def("sweep", &run_command<run_sweep>, py::arg("config_text"), py::arg("out_dir") = py::none());
  m.def("ablate", &run_command<run_ablate>, py::arg("config_text"), py::arg("out_dir") = py::none());

  m.def(
      "select",
      [](const std::vector<double>& scores, double fraction) {
        RankingRequest r;
        r.candidates.resize(scores.size());
        for (std::size_t k = 0; k < scores.size(); ++k) r.candidates[k] = static_cast<ItemId>(k);
        return select_candidates(r, scores, fraction).selected;
      },
      py::arg("scores"), py::arg("fraction") = 0.2,
      "Indices the verifier keeps, best first.");

  m.def(
      "measure_locality",
      [](const std::string& config_text, std::size_t n_requests) {
        const ExperimentConfig c = parse_experiment_config(config_text);
        py::gil_scoped_release release;
        const World world = World::generate(c.world);
        const LocalityStats s = measure_locality(generate_trace(world, n_requests), c.world.revisit_window_hours * kHour);
        return std::make_tuple(s.requests, s.requests_with_history, s.mean_overlap, s.mean_overlap_all);
      },
      py::arg("config_text"), py::arg("n_requests") = 10000);

  py::class_<EmbedCache>(m, "EmbedCache")
      .def(py::init<std::size_t>(), py::arg("capacity") = 0)
      .def(
          "put",
          [](EmbedCache& c, UserId user, ItemId item, Vector v, SimTime now) {
            c.put({user, item}, TeacherEmbedding{std::move(v), now}, now);
          },
          py::arg("user"), py::arg("item"), py::arg("vector"), py::arg("now"))
      .def(
          "get",
          [](EmbedCache& c, UserId user, ItemId item, SimTime now, Duration ttl) -> std::optional<Vector> {
            if (auto hit = c.get({user, item}, now, ttl)) return hit->vector;
            return std::nullopt;
          },
          py::arg("user"), py::arg("item"), py::arg("now"), py::arg("ttl"))
      .def("compact", &EmbedCache::compact, py::arg("now"), py::arg("max_age"))
      .def("stats", [](const EmbedCache& c) { return Json(c.stats()).dump(); })
      .def("__len__", &EmbedCache::size);
}
