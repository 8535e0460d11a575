#include "nlens/serialize.hpp"

#include "nlens/error.hpp"
#include "nlens/nda.hpp"

#include <fstream>

namespace nlens {

namespace fs = std::filesystem;

Json to_json(const ProbeConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"l1_lambda", c.l1_lambda},
          {"l2_lambda", c.l2_lambda},
          {"seed", c.seed},
          {"standardize", c.standardize},
          {"select_best_dev", c.select_best_dev},
          {"optimizer", {{"name", "adam"}, {"beta1", kAdamBeta1}, {"beta2", kAdamBeta2}, {"epsilon", kAdamEpsilon}}}};
}

ProbeConfig probe_config_from_json(const Json& j, ProbeConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.l1_lambda = j.value("l1_lambda", c.l1_lambda);
  c.l2_lambda = j.value("l2_lambda", c.l2_lambda);
  c.seed = j.value("seed", c.seed);
  c.standardize = j.value("standardize", c.standardize);
  c.select_best_dev = j.value("select_best_dev", c.select_best_dev);
  return c;
}

Json to_json(const Metrics& m, const std::vector<std::string>& labels) {
  Json per_class = Json::object();
  for (std::size_t t = 0; t < m.precision.size(); ++t)
    per_class[t < labels.size() ? labels[t] : std::to_string(t)] = {
        {"precision", m.precision[t]}, {"recall", m.recall[t]}, {"f1", m.f1[t]}};
  return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"count", m.count}, {"per_class", per_class},
          {"confusion", m.confusion}};
}

Json to_json(const StandardizationStats& s) {
  return {{"mean", s.mean},
          {"std", s.stddev},
          {"zero_variance", s.zero_variance},
          {"neuron_ids", s.neuron_ids},
          {"source_fingerprint", s.source_fingerprint}};
}

Json to_json(const AnalysisReport& r) {
  Json j = {{"method", r.method},
            {"variant", r.variant},
            {"layers", r.layers ? Json::array({r.layers->first, r.layers->second}) : Json(nullptr)},
            {"threshold", r.threshold ? Json(*r.threshold) : Json(r.threshold_na ? Json("NA") : Json(nullptr))},
            {"neuron_count", r.neuron_count},
            {"total_neurons", r.total_neurons},
            {"score", r.score},
            {"oracle_score", r.oracle_score},
            {"metric", to_string(r.metric)},
            {"diff", r.diff()},
            {"reduction", r.reduction()},
            {"selected", r.selected},
            {"neuron_ids", r.neuron_ids}};
  return j;
}

AnalysisReport report_from_json(const Json& j) {
  AnalysisReport r;
  r.method = j.at("method").get<std::string>();
  r.variant = j.value("variant", "");
  if (j.contains("layers") && j["layers"].is_array())
    r.layers = std::make_pair(j["layers"][0].get<int>(), j["layers"][1].get<int>());
  if (j.contains("threshold")) {
    if (j["threshold"].is_number()) r.threshold = j["threshold"].get<double>();
    else if (j["threshold"].is_string()) r.threshold_na = true;
  }
  r.neuron_count = j.at("neuron_count").get<std::size_t>();
  r.total_neurons = j.at("total_neurons").get<std::int64_t>();
  r.score = j.at("score").get<double>();
  r.oracle_score = j.at("oracle_score").get<double>();
  r.metric = score_metric_from_string(j.value("metric", "accuracy"));
  r.selected = j.value("selected", false);
  if (j.contains("neuron_ids")) r.neuron_ids = j["neuron_ids"].get<std::vector<NeuronId>>();
  return r;
}

Json reports_to_json(const std::vector<AnalysisReport>& reports) {
  Json arr = Json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr;
}

std::vector<AnalysisReport> reports_from_json(const Json& j) {
  const Json& arr = j.is_object() && j.contains("reports") ? j["reports"] : j;
  std::vector<AnalysisReport> out;
  for (const auto& item : arr) out.push_back(report_from_json(item));
  return out;
}

namespace {

Json ranked_entries(const std::vector<NeuronId>& order, const std::vector<NeuronId>& ids,
                    const std::vector<double>& scores, int hidden) {
  std::unordered_map<NeuronId, double> score_of;
  for (std::size_t i = 0; i < ids.size(); ++i) score_of[ids[i]] = scores[i];
  Json arr = Json::array();
  for (NeuronId id : order) {
    const auto addr = neuron_address(id, hidden);
    arr.push_back({{"id", id}, {"layer", addr.layer}, {"offset", addr.offset}, {"score", score_of[id]}});
  }
  return arr;
}

void read_entries(const Json& arr, std::vector<NeuronId>& order, std::unordered_map<NeuronId, double>& scores) {
  for (const auto& e : arr) {
    const auto id = e.at("id").get<NeuronId>();
    order.push_back(id);
    scores[id] = e.at("score").get<double>();
  }
}

}  // namespace

Json to_json(const NeuronRanking& r) {
  Json per_class = Json::object();
  for (std::size_t t = 0; t < r.class_orders.size(); ++t)
    per_class[r.labels.at(t)] = ranked_entries(r.class_orders[t], r.feature_ids, r.class_scores[t], r.hidden_size);
  return {{"method", to_string(r.method)},
          {"labels", r.labels},
          {"hidden_size", r.hidden_size},
          {"global", ranked_entries(r.global_order, r.feature_ids, r.global_scores, r.hidden_size)},
          {"per_class", per_class}};
}

NeuronRanking ranking_from_json(const Json& j) {
  NeuronRanking r;
  const auto method = j.at("method").get<std::string>();
  if (method == "lca") r.method = RankingMethod::lca;
  else if (method == "probeless") r.method = RankingMethod::probeless;
  else throw DataError("unknown ranking method '" + method + "'");
  r.labels = j.at("labels").get<std::vector<std::string>>();
  r.hidden_size = j.at("hidden_size").get<int>();
  std::unordered_map<NeuronId, double> global;
  read_entries(j.at("global"), r.global_order, global);
  r.feature_ids = r.global_order;
  std::sort(r.feature_ids.begin(), r.feature_ids.end());
  for (NeuronId id : r.feature_ids) r.global_scores.push_back(global[id]);
  for (const auto& label : r.labels) {
    std::vector<NeuronId> order;
    std::unordered_map<NeuronId, double> scores;
    if (j.contains("per_class") && j["per_class"].contains(label)) read_entries(j["per_class"][label], order, scores);
    std::vector<double> aligned;
    for (NeuronId id : r.feature_ids) aligned.push_back(scores.count(id) ? scores[id] : 0.0);
    r.class_orders.push_back(std::move(order));
    r.class_scores.push_back(std::move(aligned));
  }
  return r;
}

Json to_json(const ClusterModel& m, int hidden_size) {
  Json reps = Json::array();
  for (NeuronId id : m.representatives) reps.push_back(id);
  Json labels = Json::array();
  for (NeuronId id : m.representatives) labels.push_back(neuron_label(id, hidden_size));
  return {{"threshold", m.threshold},
          {"linkage", "average"},
          {"distance", "1 - |corr|"},
          {"seed", m.seed},
          {"num_clusters", m.clusters.size()},
          {"clusters", m.clusters},
          {"representatives", reps},
          {"representative_labels", labels}};
}

Json to_json(const CkaMap& map) {
  Json rows = Json::array();
  for (Eigen::Index a = 0; a < map.values.rows(); ++a) {
    Json row = Json::array();
    for (Eigen::Index b = 0; b < map.values.cols(); ++b) row.push_back(map.values(a, b));
    rows.push_back(std::move(row));
  }
  return {{"layers", map.layers}, {"matrix", rows}, {"sample_size", map.sample_size}, {"seed", map.seed},
          {"kernel", "linear"}};
}

Json to_json(const ControlTask& task) {
  return {{"seed", task.seed},
          {"sampling", task.sampling == ControlSampling::frequency ? "frequency" : "uniform"},
          {"distribution", task.distribution},
          {"mapping", task.mapping}};
}

ControlTask control_task_from_json(const Json& j) {
  ControlTask task;
  task.seed = j.at("seed").get<std::uint64_t>();
  task.sampling = j.value("sampling", "frequency") == "uniform" ? ControlSampling::uniform : ControlSampling::frequency;
  task.distribution = j.at("distribution").get<std::vector<double>>();
  task.mapping = j.at("mapping").get<std::map<std::string, int>>();
  return task;
}

Json to_json(const synth::SynthSpec& s) {
  Json layers = Json::array();
  for (int l = 0; l < s.num_layers; ++l) {
    const auto plan = s.layer_plan(l);
    if (plan.kind == synth::LayerKind::fresh) layers.push_back("fresh");
    else if (plan.kind == synth::LayerKind::noise) layers.push_back("noise");
    else layers.push_back("rotation-of(" + std::to_string(plan.source) + ")");
  }
  return {{"num_layers", s.num_layers},
          {"hidden_size", s.hidden_size},
          {"num_items", s.num_items},
          {"num_classes", s.num_classes},
          {"informative", s.informative},
          {"effect_size", s.effect_size},
          {"informative_layers", s.informative_layers},
          {"duplicate_groups", s.duplicate_groups},
          {"duplicate_size", s.duplicate_size},
          {"duplicate_noise", s.duplicate_noise},
          {"exact_duplicates", s.exact_duplicates},
          {"layers", layers},
          {"types_per_class", s.types_per_class},
          {"type_effect", s.type_effect},
          {"num_test_items", s.num_test_items},
          {"seed", s.seed}};
}

synth::SynthSpec synth_spec_from_json(const Json& j, synth::SynthSpec s) {
  s.num_layers = j.value("num_layers", s.num_layers);
  s.hidden_size = j.value("hidden_size", s.hidden_size);
  s.num_items = j.value("num_items", s.num_items);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.informative = j.value("informative", s.informative);
  s.effect_size = j.value("effect_size", s.effect_size);
  s.informative_layers = j.value("informative_layers", s.informative_layers);
  s.duplicate_groups = j.value("duplicate_groups", s.duplicate_groups);
  s.duplicate_size = j.value("duplicate_size", s.duplicate_size);
  s.duplicate_noise = j.value("duplicate_noise", s.duplicate_noise);
  s.exact_duplicates = j.value("exact_duplicates", s.exact_duplicates);
  s.types_per_class = j.value("types_per_class", s.types_per_class);
  s.type_effect = j.value("type_effect", s.type_effect);
  s.num_test_items = j.value("num_test_items", s.num_test_items);
  s.seed = j.value("seed", s.seed);
  if (j.contains("layers")) {
    s.layers.clear();
    for (const auto& entry : j["layers"]) {
      const auto text = entry.get<std::string>();
      if (text == "fresh") s.layers.push_back({synth::LayerKind::fresh, -1});
      else if (text == "noise") s.layers.push_back({synth::LayerKind::noise, -1});
      else if (text.rfind("rotation-of(", 0) == 0 && text.back() == ')')
        s.layers.push_back({synth::LayerKind::rotation, std::stoi(text.substr(12, text.size() - 13))});
      else throw InvalidArgument("unknown layer plan entry '" + text + "'");
    }
  }
  return s;
}

Json to_json(const synth::GroundTruth& t) {
  return {{"informative", t.informative},
          {"duplicate_groups", t.duplicate_groups},
          {"layer_provenance", t.layer_provenance},
          {"type_labels", t.type_labels},
          {"class_means", t.class_means},
          {"bayes_accuracy_lower", t.bayes_accuracy_lower},
          {"bayes_accuracy_upper", t.bayes_accuracy_upper},
          {"self_check",
           {{"min_duplicate_abs_corr", t.self_check.min_duplicate_abs_corr},
            {"min_informative_eta2", t.self_check.min_informative_eta2},
            {"max_noise_eta2", t.self_check.max_noise_eta2},
            {"min_informative_mutual_information", t.self_check.min_informative_mutual_information}}}};
}

synth::GroundTruth ground_truth_from_json(const Json& j) {
  synth::GroundTruth t;
  t.informative = j.at("informative").get<std::vector<NeuronId>>();
  t.duplicate_groups = j.value("duplicate_groups", std::vector<std::vector<NeuronId>>{});
  t.layer_provenance = j.value("layer_provenance", std::vector<std::string>{});
  t.type_labels = j.value("type_labels", std::map<std::string, int>{});
  t.class_means = j.value("class_means", std::vector<std::vector<double>>{});
  t.bayes_accuracy_lower = j.value("bayes_accuracy_lower", 0.0);
  t.bayes_accuracy_upper = j.value("bayes_accuracy_upper", 1.0);
  return t;
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError("malformed json in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write to " + path.string());
}

void save_probe(const Probe& probe, const fs::path& dir) {
  fs::create_directories(dir);
  Json j = {{"format", "nlens-probe-1"},
            {"config", to_json(probe.config)},
            {"feature_ids", probe.feature_ids},
            {"labels", probe.labels},
            {"num_layers", probe.num_layers},
            {"hidden_size", probe.hidden_size},
            {"num_features", probe.num_features()},
            {"num_classes", probe.num_classes()},
            {"standardization", probe.input_stats ? to_json(*probe.input_stats) : Json(nullptr)}};
  Json history = Json::array();
  for (const auto& e : probe.history)
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_accuracy", e.dev_accuracy}});
  j["history"] = history;
  j["dev_metrics"] = probe.dev_metrics ? to_json(*probe.dev_metrics, probe.labels) : Json(nullptr);
  write_json_file(dir / "probe.json", j);

  std::ofstream out(dir / "weights.f32", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "weights.f32").string());
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = probe.weights;
  write_f32_le(out, rows.data(), static_cast<std::size_t>(rows.size()));
  write_f32_le(out, probe.bias.data(), static_cast<std::size_t>(probe.bias.size()));
}

Probe load_probe(const fs::path& dir) {
  const Json j = read_json_file(dir / "probe.json");
  Probe probe;
  try {
    probe.config = probe_config_from_json(j.at("config"));
    probe.feature_ids = j.at("feature_ids").get<std::vector<NeuronId>>();
    probe.labels = j.at("labels").get<std::vector<std::string>>();
    probe.num_layers = j.at("num_layers").get<int>();
    probe.hidden_size = j.at("hidden_size").get<int>();
    if (!j.at("standardization").is_null()) {
      const auto& s = j["standardization"];
      StandardizationStats stats;
      stats.mean = s.at("mean").get<std::vector<double>>();
      stats.stddev = s.at("std").get<std::vector<double>>();
      stats.zero_variance = s.at("zero_variance").get<std::vector<bool>>();
      stats.neuron_ids = s.at("neuron_ids").get<std::vector<NeuronId>>();
      stats.source_fingerprint = s.value("source_fingerprint", std::uint64_t{0});
      probe.input_stats = std::move(stats);
    }
    for (const auto& e : j.value("history", Json::array()))
      probe.history.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("dev_accuracy").get<double>()});
  } catch (const Json::exception& e) {
    throw DataError("malformed probe.json: " + std::string(e.what()));
  }
  const auto features = static_cast<Eigen::Index>(probe.feature_ids.size());
  const auto classes = static_cast<Eigen::Index>(probe.labels.size());
  const fs::path wpath = dir / "weights.f32";
  std::error_code ec;
  const auto expected = static_cast<std::uintmax_t>(4 * (features * classes + classes));
  if (fs::file_size(wpath, ec) != expected || ec)
    throw DataError("weights file " + wpath.string() + " does not hold " + std::to_string(expected) + " bytes");
  std::ifstream in(wpath, std::ios::binary);
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(features, classes);
  read_f32_le(in, rows.data(), static_cast<std::size_t>(rows.size()));
  probe.bias.resize(classes);
  read_f32_le(in, probe.bias.data(), static_cast<std::size_t>(classes));
  if (!in) throw DataError("failed reading " + wpath.string());
  probe.weights = rows;
  if (!probe.weights.allFinite() || !probe.bias.allFinite()) throw DataError("probe weights are not finite");
  return probe;
}

}  // namespace nlens
