#include "nlens/analysis.hpp"
#include "nlens/error.hpp"
#include "nlens/nda.hpp"
#include "nlens/pipeline.hpp"
#include "nlens/probe.hpp"
#include "nlens/ranking.hpp"
#include "nlens/redundancy.hpp"
#include "nlens/reporting.hpp"
#include "nlens/serialize.hpp"
#include "nlens/synth.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace nlens;

namespace {

// JSON crosses the boundary as Python objects via the json module.
py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

ActivationDataset make_dataset(const std::vector<std::string>& texts, const std::vector<int>& labels,
                               const std::vector<std::string>& label_names, const ActivationMatrix& activations,
                               int num_layers, int hidden_size, const std::string& kind,
                               const std::vector<NeuronId>& neuron_ids) {
  if (texts.size() != labels.size()) throw InvalidArgument("texts and labels differ in length");
  std::vector<Item> items(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) items[i] = {texts[i], labels[i]};
  return ActivationDataset(std::move(items), label_names, item_kind_from_string(kind), num_layers, hidden_size,
                           activations, {}, neuron_ids);
}

ProbeConfig make_probe_config(int epochs, double lr, int batch_size, double l1, double l2, std::uint64_t seed,
                              bool standardize, bool best_dev) {
  ProbeConfig c;
  c.epochs = epochs;
  c.learning_rate = lr;
  c.batch_size = batch_size;
  c.l1_lambda = l1;
  c.l2_lambda = l2;
  c.seed = seed;
  c.standardize = standardize;
  c.select_best_dev = best_dev;
  c.validate();
  return c;
}

AnalysisConfig make_analysis_config(const ProbeConfig& probe, const std::string& metric, double delta,
                                    std::optional<std::vector<std::size_t>> k_grid,
                                    std::optional<std::vector<double>> c_grid, std::uint64_t seed, unsigned jobs) {
  AnalysisConfig c;
  c.probe = probe;
  c.metric = score_metric_from_string(metric);
  c.delta = delta;
  if (k_grid) c.k_grid = *k_grid;
  if (c_grid) c.c_grid = *c_grid;
  c.cluster_seed = seed;
  c.jobs = jobs;
  return c;
}

synth::SynthSpec spec_from(const py::dict& overrides, std::uint64_t seed) {
  Json j = Json::parse(py::module_::import("json").attr("dumps")(overrides).cast<std::string>());
  auto spec = synth_spec_from_json(j);
  spec.seed = seed;
  return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "nlens core: activation datasets, probes, rankings and redundancy analysis";
  m.attr("__version__") = NLENS_VERSION;

  // Translators are tried newest first, so the base class goes in first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  py::class_<ActivationDataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("texts"), py::arg("labels"), py::arg("label_names"), py::arg("activations"),
           py::arg("num_layers"), py::arg("hidden_size"), py::arg("kind") = "token",
           py::arg("neuron_ids") = std::vector<NeuronId>{})
      .def_property_readonly("activations", &ActivationDataset::activations)
      .def_property_readonly("texts",
                             [](const ActivationDataset& ds) {
                               std::vector<std::string> out;
                               for (const auto& it : ds.items()) out.push_back(it.text);
                               return out;
                             })
      .def_property_readonly("labels", &ActivationDataset::label_indices)
      .def_property_readonly("label_names", &ActivationDataset::labels)
      .def_property_readonly("kind", [](const ActivationDataset& ds) { return std::string(to_string(ds.kind())); })
      .def_property_readonly("num_layers", &ActivationDataset::num_layers)
      .def_property_readonly("hidden_size", &ActivationDataset::hidden_size)
      .def_property_readonly("neuron_ids", &ActivationDataset::neuron_ids)
      .def_property_readonly("fingerprint", &ActivationDataset::fingerprint)
      .def("__len__", &ActivationDataset::num_items)
      .def("__eq__", [](const ActivationDataset& a, const ActivationDataset& b) { return a == b; });

  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
  m.def(
      "split",
      [](const ActivationDataset& ds, double ratio, std::uint64_t seed) {
        auto s = split(ds, ratio, seed);
        return py::make_tuple(s.train, s.dev);
      },
      py::arg("dataset"), py::arg("ratio") = 0.9, py::arg("seed") = 0);
  m.def("select_neurons", &select_neurons, py::arg("dataset"), py::arg("ids"));
  m.def("select_layers", &select_layers, py::arg("dataset"), py::arg("lo"), py::arg("hi"));
  m.def("filter_classes", &filter_classes, py::arg("dataset"), py::arg("keep"));

  py::class_<ProbeConfig>(m, "ProbeConfig")
      .def(py::init(&make_probe_config), py::arg("epochs") = 10, py::arg("learning_rate") = 1e-3,
           py::arg("batch_size") = 128, py::arg("l1") = 1e-5, py::arg("l2") = 1e-5, py::arg("seed") = 0,
           py::arg("standardize") = true, py::arg("best_dev") = false)
      .def_readonly("epochs", &ProbeConfig::epochs)
      .def_readonly("learning_rate", &ProbeConfig::learning_rate)
      .def_readonly("batch_size", &ProbeConfig::batch_size)
      .def_readonly("l1", &ProbeConfig::l1_lambda)
      .def_readonly("l2", &ProbeConfig::l2_lambda)
      .def_readonly("seed", &ProbeConfig::seed);

  py::class_<Probe>(m, "Probe")
      .def_readonly("weights", &Probe::weights)
      .def_readonly("bias", &Probe::bias)
      .def_readonly("feature_ids", &Probe::feature_ids)
      .def_readonly("labels", &Probe::labels)
      .def_property_readonly("history", [](const Probe& p) {
        py::list out;
        for (const auto& r : p.history)
          out.append(py::dict(py::arg("epoch") = r.epoch, py::arg("train_loss") = r.train_loss,
                              py::arg("dev_accuracy") = r.dev_accuracy));
        return out;
      });

  m.def("train_probe", &train_probe, py::arg("train"), py::arg("dev"), py::arg("config") = ProbeConfig{},
        py::call_guard<py::gil_scoped_release>());
  m.def("predict", &predict, py::arg("probe"), py::arg("dataset"));
  m.def(
      "evaluate", [](const Probe& p, const ActivationDataset& ds) { return to_py(to_json(evaluate(p, ds), p.labels)); },
      py::arg("probe"), py::arg("dataset"));
  m.def("save_probe", &save_probe, py::arg("probe"), py::arg("path"));
  m.def("load_probe", &load_probe, py::arg("path"));
  m.def("selectivity", py::overload_cast<double, double>(&selectivity), py::arg("task_accuracy"),
        py::arg("control_accuracy"));
  m.def(
      "make_control_task",
      [](const ActivationDataset& ds, std::uint64_t seed, bool uniform) {
        auto r = make_control_labels(ds, seed, uniform ? ControlSampling::uniform : ControlSampling::frequency);
        return py::make_tuple(to_py(to_json(r.task)), r.dataset);
      },
      py::arg("dataset"), py::arg("seed") = 0, py::arg("uniform") = false);
  m.def(
      "apply_control",
      [](const py::object& task, const ActivationDataset& ds) {
        const auto text = py::module_::import("json").attr("dumps")(task).cast<std::string>();
        return apply_control(control_task_from_json(Json::parse(text)), ds);
      },
      py::arg("task"), py::arg("dataset"));

  py::class_<NeuronRanking>(m, "Ranking")
      .def_property_readonly("method", [](const NeuronRanking& r) { return std::string(to_string(r.method)); })
      .def_readonly("order", &NeuronRanking::global_order)
      .def_readonly("scores", &NeuronRanking::global_scores)
      .def_readonly("class_orders", &NeuronRanking::class_orders)
      .def("to_json", [](const NeuronRanking& r) { return to_py(to_json(r)); });
  m.def("lca_rank", &lca_rank, py::arg("probe"));
  m.def("probeless_rank", &probeless_rank, py::arg("dataset"));
  m.def("top_k", &top_k, py::arg("ranking"), py::arg("k"), py::arg("class_index") = std::nullopt);

  py::class_<AnalysisConfig>(m, "AnalysisConfig")
      .def(py::init(&make_analysis_config), py::arg("probe") = ProbeConfig{}, py::arg("metric") = "accuracy",
           py::arg("delta") = 0.01, py::arg("k_grid") = std::nullopt, py::arg("c_grid") = std::nullopt,
           py::arg("seed") = 0, py::arg("jobs") = 1u)
      .def_readonly("delta", &AnalysisConfig::delta)
      .def_readonly("k_grid", &AnalysisConfig::k_grid)
      .def_readonly("c_grid", &AnalysisConfig::c_grid);

  m.def(
      "k_sweep",
      [](const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
         const NeuronRanking& ranking, const AnalysisConfig& config) {
        py::gil_scoped_release release;
        auto r = k_sweep(train, dev, test, ranking, clip_k_grid(config.k_grid, ranking.feature_ids.size()), config);
        py::gil_scoped_acquire acquire;
        return py::dict(py::arg("best_k") = r.best_k, py::arg("oracle_score") = r.oracle_score,
                        py::arg("reports") = to_py(reports_to_json(r.reports)));
      },
      py::arg("train"), py::arg("dev"), py::arg("test"), py::arg("ranking"), py::arg("config") = AnalysisConfig{});

  m.def(
      "correlation_matrix", [](const ActivationDataset& ds) { return correlation_matrix(ds).values; },
      py::arg("dataset"));
  m.def(
      "cluster_neurons",
      [](const ActivationDataset& ds, double threshold, std::uint64_t seed) {
        return to_py(to_json(cluster_neurons(correlation_matrix(ds), threshold, seed), ds.hidden_size()));
      },
      py::arg("dataset"), py::arg("threshold"), py::arg("seed") = 0);
  m.def(
      "cc_reduce",
      [](const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
         const AnalysisConfig& config) {
        py::gil_scoped_release release;
        auto r = cc_reduce(train, dev, test, config.c_grid, config);
        py::gil_scoped_acquire acquire;
        return py::dict(py::arg("threshold") = r.chosen_threshold, py::arg("oracle_score") = r.oracle_score,
                        py::arg("reports") = to_py(reports_to_json(r.reports)));
      },
      py::arg("train"), py::arg("dev"), py::arg("test"), py::arg("config") = AnalysisConfig{});
  m.def("cka", &cka, py::arg("x"), py::arg("y"));
  m.def(
      "layer_cka_map",
      [](const ActivationDataset& ds, std::size_t sample, std::uint64_t seed, unsigned jobs) {
        return layer_cka_map(ds, sample, seed, jobs).values;
      },
      py::arg("dataset"), py::arg("sample") = kDefaultCkaSample, py::arg("seed") = 0, py::arg("jobs") = 1u);
  m.def(
      "layerwise",
      [](const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
         const std::string& mode, const AnalysisConfig& config) {
        LayerwiseMode lm;
        if (mode == "incremental") lm = LayerwiseMode::incremental;
        else if (mode == "independent") lm = LayerwiseMode::independent;
        else throw InvalidArgument("mode must be independent or incremental");
        return to_py(reports_to_json(layerwise(train, dev, test, lm, config)));
      },
      py::arg("train"), py::arg("dev"), py::arg("test"), py::arg("mode") = "incremental",
      py::arg("config") = AnalysisConfig{});
  m.def(
      "minimal_neuron_set",
      [](const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
         const AnalysisConfig& config) {
        py::gil_scoped_release release;
        auto r = minimal_neuron_set(train, dev, test, config);
        py::gil_scoped_acquire acquire;
        return py::dict(py::arg("neuron_ids") = r.neuron_ids, py::arg("score") = r.final_report.score,
                        py::arg("oracle_score") = r.oracle_score, py::arg("reduction") = r.final_report.reduction(),
                        py::arg("failed") = r.failed, py::arg("selected_layer") = r.selected_layer,
                        py::arg("selected_threshold") = r.selected_threshold, py::arg("selected_k") = r.selected_k);
      },
      py::arg("train"), py::arg("dev"), py::arg("test"), py::arg("config") = AnalysisConfig{});
  m.def(
      "table4",
      [](const ActivationDataset& data, std::optional<ActivationDataset> test, std::uint64_t seed,
         const AnalysisConfig& config) {
        py::gil_scoped_release release;
        const auto result = run_table4(prepare_splits(data, test, seed), config);
        py::gil_scoped_acquire acquire;
        return to_py(table4_to_json(result));
      },
      py::arg("data"), py::arg("test") = std::nullopt, py::arg("seed") = 0, py::arg("config") = AnalysisConfig{});

  m.def(
      "top_words",
      [](const ActivationDataset& ds, NeuronId neuron, std::size_t n, const std::string& mode) {
        if (mode != "mean" && mode != "max") throw InvalidArgument("mode must be mean or max");
        std::vector<std::pair<std::string, double>> out;
        for (const auto& w : top_words(ds, neuron, n, mode == "max" ? TopWordsMode::max : TopWordsMode::mean))
          out.emplace_back(w.text, w.value);
        return out;
      },
      py::arg("dataset"), py::arg("neuron"), py::arg("n") = 5, py::arg("mode") = "mean");
  m.def(
      "highlight_html",
      [](const ActivationDataset& ds, const std::vector<NeuronId>& neurons, std::size_t max_items) {
        HighlightOptions o;
        o.max_items = max_items;
        return highlight_html(ds, neurons, o);
      },
      py::arg("dataset"), py::arg("neurons"), py::arg("max_items") = HighlightOptions{}.max_items);
  m.def(
      "results_table",
      [](const py::object& reports, const std::string& format) {
        const auto text = py::module_::import("json").attr("dumps")(reports).cast<std::string>();
        return results_table(reports_from_json_text(text), table_format_from_string(format));
      },
      py::arg("reports"), py::arg("format") = "md");
  m.def("format_percent", &format_percent, py::arg("fraction"));

  auto synth_m = m.def_submodule("synth", "Synthetic datasets with planted ground truth");
  synth_m.def(
      "generate",
      [](std::uint64_t seed, const py::dict& overrides) {
        auto g = synth::generate(spec_from(overrides, seed));
        return py::make_tuple(g.dataset, to_py(to_json(g.truth)));
      },
      py::arg("seed") = 0, py::arg("overrides") = py::dict());
  synth_m.def(
      "make_leaky_pair",
      [](double leak, std::uint64_t seed, const py::dict& overrides) {
        Json base = to_json(synth::leakage_spec(seed));
        auto spec = synth_spec_from_json(
            Json::parse(py::module_::import("json").attr("dumps")(overrides).cast<std::string>()),
            synth_spec_from_json(base));
        spec.seed = seed;
        auto p = synth::make_leaky_pair(spec, leak);
        return py::make_tuple(p.train, p.test, to_py(to_json(p.truth)));
      },
      py::arg("leak"), py::arg("seed") = 0, py::arg("overrides") = py::dict());
  synth_m.def(
      "score_ranking",
      [](const NeuronRanking& ranking, const std::vector<NeuronId>& informative, std::size_t k) {
        if (k < 1) throw InvalidArgument("k must be at least 1");
        auto s = synth::score_ids(top_k(ranking, std::min(k, ranking.feature_ids.size())), informative);
        return py::dict(py::arg("precision") = s.precision, py::arg("recall") = s.recall, py::arg("hits") = s.hits);
      },
      py::arg("ranking"), py::arg("informative"), py::arg("k") = 15);
}
