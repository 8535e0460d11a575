#include "nlens/cli.hpp"

#include "nlens/error.hpp"
#include "nlens/nda.hpp"
#include "nlens/pipeline.hpp"
#include "nlens/probe.hpp"
#include "nlens/ranking.hpp"
#include "nlens/redundancy.hpp"
#include "nlens/reporting.hpp"
#include "nlens/rng.hpp"
#include "nlens/serialize.hpp"
#include "nlens/synth.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>

namespace nlens::cli {

namespace fs = std::filesystem;

namespace {

// Flag values exactly as typed; empty when the flag was not given.
struct Raw {
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;
};

// flags > config file > defaults. Every resolved value lands in `resolved`.
class Settings {
 public:
  Settings(const Raw& raw, Json config_file) : raw_(raw), file_(std::move(config_file)) {}

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    T value = fallback;
    if (auto it = raw_.values.find(key); it != raw_.values.end()) {
      value = parse<T>(key, it->second);
    } else if (file_.contains(key)) {
      try {
        value = file_[key].get<T>();
      } catch (const Json::exception&) {
        throw InvalidArgument("config key '" + key + "' has the wrong type");
      }
    }
    resolved_[key] = value;
    return value;
  }

  bool flag(const std::string& key, bool fallback = false) {
    bool value = fallback;
    if (auto it = raw_.flags.find(key); it != raw_.flags.end() && it->second) value = true;
    else if (file_.contains(key)) value = file_[key].get<bool>();
    resolved_[key] = value;
    return value;
  }

  std::optional<std::string> optional_path(const std::string& key) {
    std::optional<std::string> value;
    if (auto it = raw_.values.find(key); it != raw_.values.end()) value = it->second;
    else if (file_.contains(key) && file_[key].is_string()) value = file_[key].get<std::string>();
    resolved_[key] = value ? Json(*value) : Json(nullptr);
    return value;
  }

  std::string required_path(const std::string& key) {
    auto value = optional_path(key);
    if (!value) throw InvalidArgument("--" + key + " is required");
    return *value;
  }

  const Json& resolved() const { return resolved_; }
  void record(const std::string& key, Json value) { resolved_[key] = std::move(value); }

 private:
  template <typename T>
  static T parse(const std::string& key, const std::string& text) {
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        return text;
      } else if constexpr (std::is_same_v<T, double>) {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
      } else if constexpr (std::is_same_v<T, bool>) {
        return text == "1" || text == "true";
      } else {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return static_cast<T>(v);
      }
    } catch (const std::logic_error&) {
      throw InvalidArgument("invalid value '" + text + "' for --" + key);
    }
  }

  const Raw& raw_;
  Json file_;
  Json resolved_ = Json::object();
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t hash_file(const fs::path& path, std::uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a(buf.data(), static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Content hash of a file, or of every regular file in a directory (sorted by name).
std::string fingerprint_path(const fs::path& path) {
  std::uint64_t h = fnv1a(std::string_view("nlens-input"));
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      h = fnv1a(f.filename().string(), h);
      h = hash_file(f, h);
    }
  } else {
    h = hash_file(path, h);
  }
  return hex64(h);
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(part)));
    } catch (const std::logic_error&) {
      throw InvalidArgument("invalid list entry '" + part + "'");
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(std::stod(part));
    } catch (const std::logic_error&) {
      throw InvalidArgument("invalid list entry '" + part + "'");
    }
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
  return out.str();
}

// "l:o" or a plain integer id.
NeuronId parse_neuron(const std::string& text, int hidden_size) {
  try {
    if (auto colon = text.find(':'); colon != std::string::npos)
      return static_cast<NeuronId>(std::stoll(text.substr(0, colon))) * hidden_size + std::stoll(text.substr(colon + 1));
    return std::stoll(text);
  } catch (const std::logic_error&) {
    throw InvalidArgument("invalid neuron '" + text + "' (expected id or layer:offset)");
  }
}

struct Context {
  std::string command;
  Settings settings;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  fs::path out;
  Json inputs = Json::object();

  void input(const std::string& path) { inputs[path] = fingerprint_path(path); }

  // Writes config.json into the run directory.
  void finish() const {
    Json snapshot = {{"command", command},
                     {"toolkit_version", NLENS_VERSION},
                     {"resolved", settings.resolved()},
                     {"inputs", inputs}};
    write_json_file(out / "config.json", snapshot);
  }
};

ProbeConfig probe_config(Settings& s, std::uint64_t seed) {
  ProbeConfig c;
  c.epochs = s.get<int>("epochs", c.epochs);
  c.learning_rate = s.get<double>("lr", c.learning_rate);
  c.batch_size = s.get<int>("batch-size", c.batch_size);
  c.l1_lambda = s.get<double>("l1", c.l1_lambda);
  c.l2_lambda = s.get<double>("l2", c.l2_lambda);
  c.standardize = !s.flag("no-standardize");
  c.select_best_dev = s.flag("best-dev");
  c.seed = seed;
  c.validate();
  return c;
}

AnalysisConfig analysis_config(Settings& s, std::uint64_t seed, unsigned jobs) {
  AnalysisConfig c;
  c.probe = probe_config(s, seed);
  c.metric = score_metric_from_string(s.get<std::string>("metric", "accuracy"));
  // accuracy tolerances are given in percentage points, F1 tolerances as absolute deltas
  const double delta = s.get<double>("delta", c.metric == ScoreMetric::accuracy ? 1.0 : 0.01);
  c.delta = c.metric == ScoreMetric::accuracy ? delta / 100.0 : delta;
  c.k_grid = parse_size_list(s.get<std::string>("k-grid", join(default_k_grid())));
  c.c_grid = parse_double_list(s.get<std::string>("c-grid", join(default_c_grid())));
  c.cluster_seed = seed;
  c.jobs = jobs;
  return c;
}

ExperimentSplits load_splits(Context& ctx) {
  const auto data_path = ctx.settings.required_path("data");
  const auto test_path = ctx.settings.optional_path("test");
  ctx.input(data_path);
  std::optional<ActivationDataset> test;
  if (test_path) {
    ctx.input(*test_path);
    test = load_dataset(*test_path);
  }
  auto data = load_dataset(data_path);
  if (auto keep = ctx.settings.optional_path("classes")) {
    std::set<std::string> names;
    std::stringstream ss(*keep);
    std::string part;
    while (std::getline(ss, part, ',')) if (!part.empty()) names.insert(part);
    data = filter_classes(data, names);
    if (test) test = filter_classes(*test, names);
  }
  return prepare_splits(data, test, ctx.seed);
}

void print_json(const Json& j) { std::cout << j.dump(2) << '\n'; }

// ---- synth ---------------------------------------------------------------

void cmd_synth_generate(Context& ctx) {
  auto& s = ctx.settings;
  synth::SynthSpec spec;
  if (auto path = s.optional_path("spec")) {
    ctx.input(*path);
    spec = synth_spec_from_json(read_json_file(*path));
  }
  spec.seed = ctx.seed;
  spec.num_items = s.get<std::size_t>("items", spec.num_items);
  spec.informative = s.get<int>("informative", spec.informative);
  spec.num_layers = s.get<int>("layers", spec.num_layers);
  spec.hidden_size = s.get<int>("hidden", spec.hidden_size);
  const double leak = s.get<double>("leak", -1.0);
  const double type_effect_default =
      leak >= 0.0 && spec.type_effect == 0.0 ? synth::leakage_spec().type_effect : spec.type_effect;
  spec.type_effect = s.get<double>("type-effect", type_effect_default);
  if (auto plan = s.optional_path("layer-plan")) {
    Json arr = Json::array();
    std::stringstream ss(*plan);
    std::string part;
    while (std::getline(ss, part, ';')) arr.push_back(part);
    spec = synth_spec_from_json(Json{{"layers", arr}}, spec);
  }
  s.record("spec", to_json(spec));
  if (leak >= 0.0) {
    auto pair = synth::make_leaky_pair(spec, leak);
    save_dataset(pair.train, ctx.out / "train");
    save_dataset(pair.test, ctx.out / "test");
    write_json_file(ctx.out / "ground_truth.json", to_json(pair.truth));
  } else {
    auto gen = synth::generate(spec);
    save_dataset(gen.dataset, ctx.out / "data");
    write_json_file(ctx.out / "ground_truth.json", to_json(gen.truth));
  }
  std::cout << "wrote " << ctx.out.string() << '\n';
}

void cmd_synth_score(Context& ctx) {
  auto& s = ctx.settings;
  const auto ranking_path = s.required_path("ranking");
  const auto truth_path = s.required_path("truth");
  ctx.input(ranking_path);
  ctx.input(truth_path);
  const auto k = s.get<std::size_t>("k", 15);
  const auto ranking = ranking_from_json(read_json_file(ranking_path));
  const auto truth = ground_truth_from_json(read_json_file(truth_path));
  const auto score = synth::score_ranking(ranking, truth, k);
  Json j = {{"k", score.k}, {"hits", score.hits}, {"precision", score.precision}, {"recall", score.recall}};
  write_json_file(ctx.out / "recovery.json", j);
  print_json(j);
}

// ---- probe ---------------------------------------------------------------

void cmd_probe_train(Context& ctx) {
  auto splits = load_splits(ctx);
  const auto cfg = probe_config(ctx.settings, ctx.seed);
  const int seeds = ctx.settings.get<int>("seeds", 1);
  if (seeds < 1) throw InvalidArgument("--seeds must be at least 1");
  std::vector<double> accs;
  Json runs = Json::array();
  for (int i = 0; i < seeds; ++i) {
    ProbeConfig c = cfg;
    c.seed = i == 0 ? cfg.seed : derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    auto probe = train_probe(splits.train, splits.dev, c);
    const auto m = evaluate(probe, splits.test);
    accs.push_back(m.accuracy);
    runs.push_back({{"seed", c.seed}, {"test", to_json(m, probe.labels)}});
    if (i == 0) save_probe(probe, ctx.out / "probe");
  }
  const double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
  double var = 0.0;
  for (double a : accs) var += (a - mean) * (a - mean);
  const double sd = accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1)) : 0.0;
  Json j = {{"runs", runs}, {"test_accuracy_mean", mean}, {"test_accuracy_std", sd}};
  write_json_file(ctx.out / "metrics.json", j);
  std::cout << "test accuracy " << format_percent(mean);
  if (seeds > 1) std::cout << " +/- " << format_percent(sd);
  std::cout << '\n';
}

void cmd_probe_eval(Context& ctx) {
  const auto probe_path = ctx.settings.required_path("probe");
  const auto data_path = ctx.settings.required_path("data");
  ctx.input(probe_path);
  ctx.input(data_path);
  const auto probe = load_probe(probe_path);
  auto ds = load_dataset(data_path);
  if (ds.neuron_ids() != probe.feature_ids) ds = select_neurons(ds, probe.feature_ids);
  const auto m = evaluate(probe, ds);
  const Json j = to_json(m, probe.labels);
  write_json_file(ctx.out / "metrics.json", j);
  print_json(j);
}

void cmd_probe_control(Context& ctx) {
  auto splits = load_splits(ctx);
  const auto cfg = probe_config(ctx.settings, ctx.seed);
  const bool uniform = ctx.settings.flag("uniform");
  auto control = make_control_labels(splits.train, ctx.seed, uniform ? ControlSampling::uniform : ControlSampling::frequency);
  const auto control_dev = apply_control(control.task, splits.dev);
  const auto control_test = apply_control(control.task, splits.test);

  const auto task_probe = train_probe(splits.train, splits.dev, cfg);
  const auto control_probe = train_probe(control.dataset, control_dev, cfg);
  const auto task_m = evaluate(task_probe, splits.test);
  const auto control_m = evaluate(control_probe, control_test);
  const auto counts = control_test.class_counts();
  const double majority = static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                          static_cast<double>(control_test.num_items());
  Json j = {{"task_accuracy", task_m.accuracy},
            {"control_accuracy", control_m.accuracy},
            {"selectivity", selectivity(task_m, control_m)},
            {"control_majority_frequency", majority}};
  write_json_file(ctx.out / "control_task.json", to_json(control.task));
  write_json_file(ctx.out / "selectivity.json", j);
  print_json(j);
}

void cmd_probe_selectivity(Context& ctx) {
  auto& s = ctx.settings;
  double task = s.get<double>("task-acc", std::nan(""));
  double control = s.get<double>("control-acc", std::nan(""));
  if (auto p = s.optional_path("task-metrics")) task = read_json_file(*p).at("accuracy").get<double>();
  if (auto p = s.optional_path("control-metrics")) control = read_json_file(*p).at("accuracy").get<double>();
  if (std::isnan(task) || std::isnan(control))
    throw InvalidArgument("need --task-acc/--task-metrics and --control-acc/--control-metrics");
  const double value = selectivity(task, control);
  Json j = {{"task_accuracy", task}, {"control_accuracy", control}, {"selectivity", value}};
  write_json_file(ctx.out / "selectivity.json", j);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  std::cout << "selectivity " << buf << '\n';
}

// ---- rank ----------------------------------------------------------------

void cmd_rank_lca(Context& ctx) {
  const auto probe_path = ctx.settings.required_path("probe");
  ctx.input(probe_path);
  const auto ranking = lca_rank(load_probe(probe_path));
  write_json_file(ctx.out / "ranking.json", to_json(ranking));
  std::cout << "wrote " << (ctx.out / "ranking.json").string() << '\n';
}

void cmd_rank_probeless(Context& ctx) {
  const auto data_path = ctx.settings.required_path("data");
  ctx.input(data_path);
  const auto ranking = probeless_rank(load_dataset(data_path));
  write_json_file(ctx.out / "ranking.json", to_json(ranking));
  std::cout << "wrote " << (ctx.out / "ranking.json").string() << '\n';
}

void write_reports(const Context& ctx, const std::vector<AnalysisReport>& reports, Json extra) {
  extra["reports"] = reports_to_json(reports);
  write_json_file(ctx.out / "report.json", extra);
  write_text_file(ctx.out / "report.md", results_table(reports, TableFormat::md));
  std::cout << results_table(reports, TableFormat::md);
}

void cmd_rank_sweep(Context& ctx) {
  auto splits = load_splits(ctx);
  const auto cfg = analysis_config(ctx.settings, ctx.seed, ctx.jobs);
  const auto ranking_path = ctx.settings.required_path("ranking");
  ctx.input(ranking_path);
  const auto ranking = ranking_from_json(read_json_file(ranking_path));
  const auto sweep = k_sweep(splits.train, splits.dev, splits.test, ranking,
                             clip_k_grid(cfg.k_grid, ranking.feature_ids.size()), cfg);
  std::vector<AnalysisReport> rows{make_report("Oracle", splits.train.neuron_ids(), splits.train.full_neuron_count(),
                                               sweep.oracle_score, sweep.oracle_score, cfg.metric)};
  rows.insert(rows.end(), sweep.reports.begin(), sweep.reports.end());
  write_reports(ctx, rows, {{"selected_k", sweep.best_k ? Json(*sweep.best_k) : Json(nullptr)}});
}

// ---- redundancy ----------------------------------------------------------

void cmd_redundancy_cc(Context& ctx) {
  auto splits = load_splits(ctx);
  const auto cfg = analysis_config(ctx.settings, ctx.seed, ctx.jobs);
  const double single = ctx.settings.get<double>("threshold", -1.0);
  if (single > 0.0) {
    const auto model = cluster_neurons(correlation_matrix(splits.train), single, ctx.seed);
    write_json_file(ctx.out / "clusters.json", to_json(model, splits.train.hidden_size()));
    std::cout << model.clusters.size() << " clusters at c = " << single << '\n';
    return;
  }
  const auto cc = cc_reduce(splits.train, splits.dev, splits.test, cfg.c_grid, cfg);
  if (cc.chosen_model) write_json_file(ctx.out / "clusters.json", to_json(*cc.chosen_model, splits.train.hidden_size()));
  std::vector<AnalysisReport> rows{make_report("Oracle", splits.train.neuron_ids(), splits.train.full_neuron_count(),
                                               cc.oracle_score, cc.oracle_score, cfg.metric)};
  rows.insert(rows.end(), cc.reports.begin(), cc.reports.end());
  write_reports(ctx, rows, {{"selected_threshold", cc.chosen_threshold ? Json(*cc.chosen_threshold) : Json("NA")}});
}

void cmd_redundancy_cka(Context& ctx) {
  const auto data_path = ctx.settings.required_path("data");
  ctx.input(data_path);
  const auto sample = ctx.settings.get<std::size_t>("sample", kDefaultCkaSample);
  const auto map = layer_cka_map(load_dataset(data_path), sample, ctx.seed, ctx.jobs);
  write_json_file(ctx.out / "cka_map.json", to_json(map));
  for (Eigen::Index a = 0; a < map.values.rows(); ++a) {
    for (Eigen::Index b = 0; b < map.values.cols(); ++b) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%6.3f", map.values(a, b));
      std::cout << buf << (b + 1 < map.values.cols() ? " " : "\n");
    }
  }
}

void cmd_redundancy_layerwise(Context& ctx) {
  auto splits = load_splits(ctx);
  const auto cfg = analysis_config(ctx.settings, ctx.seed, ctx.jobs);
  const auto mode_text = ctx.settings.get<std::string>("mode", "incremental");
  LayerwiseMode mode;
  if (mode_text == "incremental") mode = LayerwiseMode::incremental;
  else if (mode_text == "independent") mode = LayerwiseMode::independent;
  else throw UsageError("--mode must be independent or incremental");
  const double oracle = resolve_oracle(splits.train, splits.dev, splits.test, cfg);
  AnalysisConfig with_oracle = cfg;
  with_oracle.oracle_score = oracle;
  std::vector<AnalysisReport> rows{make_report("Oracle", splits.train.neuron_ids(), splits.train.full_neuron_count(),
                                               oracle, oracle, cfg.metric)};
  const auto reports = layerwise(splits.train, splits.dev, splits.test, mode, with_oracle);
  rows.insert(rows.end(), reports.begin(), reports.end());
  write_reports(ctx, rows, Json::object());
}

void cmd_redundancy_minimal(Context& ctx) {
  auto splits = load_splits(ctx);
  const auto cfg = analysis_config(ctx.settings, ctx.seed, ctx.jobs);
  const auto result = minimal_neuron_set(splits.train, splits.dev, splits.test, cfg);
  std::vector<AnalysisReport> rows{make_report("Oracle", splits.train.neuron_ids(), splits.train.full_neuron_count(),
                                               result.oracle_score, result.oracle_score, cfg.metric)};
  rows.insert(rows.end(), result.layer_reports.begin(), result.layer_reports.end());
  rows.insert(rows.end(), result.cc_reports.begin(), result.cc_reports.end());
  rows.insert(rows.end(), result.lca_reports.begin(), result.lca_reports.end());
  rows.push_back(result.final_report);
  write_reports(ctx, rows, {{"neuron_ids", result.neuron_ids}, {"failed", result.failed}});
}

// ---- report --------------------------------------------------------------

void cmd_report_top_words(Context& ctx) {
  const auto data_path = ctx.settings.required_path("data");
  ctx.input(data_path);
  const auto ds = load_dataset(data_path);
  const auto neuron = parse_neuron(ctx.settings.required_path("neuron"), ds.hidden_size());
  const auto n = ctx.settings.get<std::size_t>("n", 5);
  const auto mode_text = ctx.settings.get<std::string>("mode", "mean");
  if (mode_text != "mean" && mode_text != "max") throw UsageError("--mode must be mean or max");
  const auto words = top_words(ds, neuron, n, mode_text == "max" ? TopWordsMode::max : TopWordsMode::mean);
  Json arr = Json::array();
  std::cout << "Layer " << neuron_label(neuron, ds.hidden_size()) << '\n';
  for (const auto& w : words) {
    arr.push_back({{"text", w.text}, {"value", w.value}, {"count", w.count}});
    std::cout << "  " << w.text << '\t' << w.value << '\n';
  }
  write_json_file(ctx.out / "top_words.json",
                  {{"neuron", neuron}, {"label", neuron_label(neuron, ds.hidden_size())}, {"words", arr}});
}

void cmd_report_highlight(Context& ctx) {
  const auto data_path = ctx.settings.required_path("data");
  ctx.input(data_path);
  const auto ds = load_dataset(data_path);
  std::vector<NeuronId> neurons;
  std::stringstream ss(ctx.settings.required_path("neurons"));
  std::string part;
  while (std::getline(ss, part, ',')) if (!part.empty()) neurons.push_back(parse_neuron(part, ds.hidden_size()));
  HighlightOptions options;
  options.max_items = ctx.settings.get<std::size_t>("max-items", options.max_items);
  const fs::path path = ctx.out / "highlight.html";
  highlight_report(ds, neurons, path, options);
  std::cout << "wrote " << path.string() << '\n';
}

void cmd_report_table(Context& ctx) {
  const auto path = ctx.settings.required_path("reports");
  ctx.input(path);
  const auto format_text = ctx.settings.get<std::string>("format", "md");
  const auto format = table_format_from_string(format_text);
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto reports = fs::path(path).extension() == ".csv" ? reports_from_csv_text(text) : reports_from_json_text(text);
  const std::string table = results_table(reports, format);
  write_text_file(ctx.out / (std::string("table.") + format_text), table);
  std::cout << table;
}

// ---- pipeline ------------------------------------------------------------

void cmd_pipeline_table4(Context& ctx) {
  auto splits = load_splits(ctx);
  const auto cfg = analysis_config(ctx.settings, ctx.seed, ctx.jobs);
  const auto result = run_table4(splits, cfg);
  Json j = table4_to_json(result);
  j["splits"] = {{"train", splits.train.num_items()}, {"dev", splits.dev.num_items()}, {"test", splits.test.num_items()}};
  write_json_file(ctx.out / "report.json", j);
  const std::string md = table4_to_markdown(result);
  write_text_file(ctx.out / "report.md", md);
  std::cout << results_table(result.summary(), TableFormat::md);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"nlens: neuron-level redundancy and concept analysis for transformer activations", "nlens"};
  app.require_subcommand(1);
  app.fallthrough();

  Raw raw;
  std::string config_path;
  auto value_option = [&raw](CLI::App* cmd, const std::string& name, const std::string& help) {
    cmd->add_option_function<std::string>("--" + name, [&raw, name](const std::string& v) { raw.values[name] = v; }, help);
  };
  auto flag_option = [&raw](CLI::App* cmd, const std::string& name, const std::string& help) {
    cmd->add_flag_function("--" + name, [&raw, name](std::int64_t count) { raw.flags[name] = count > 0; }, help);
  };

  value_option(&app, "seed", "Random seed for every stochastic step");
  value_option(&app, "jobs", "Worker threads for independent grid points");
  value_option(&app, "out", "Run directory (default: $NLENS_OUT or ./runs, plus a config hash)");
  app.add_option("--config", config_path, "JSON file with option defaults; flags take precedence");

  auto probe_options = [&](CLI::App* cmd) {
    value_option(cmd, "epochs", "Training epochs (10)");
    value_option(cmd, "lr", "Adam learning rate (1e-3)");
    value_option(cmd, "batch-size", "Minibatch size (128)");
    value_option(cmd, "l1", "L1 penalty (1e-5)");
    value_option(cmd, "l2", "L2 penalty (1e-5)");
    flag_option(cmd, "no-standardize", "Train on raw activations");
    flag_option(cmd, "best-dev", "Keep the best dev epoch instead of the last");
  };
  auto data_options = [&](CLI::App* cmd) {
    value_option(cmd, "data", "NDA directory (split 90:10 into train/dev)");
    value_option(cmd, "test", "NDA directory used as the test set (default: hold out 20% of --data)");
    value_option(cmd, "classes", "Comma-separated classes to keep");
  };
  auto analysis_options = [&](CLI::App* cmd) {
    data_options(cmd);
    probe_options(cmd);
    value_option(cmd, "metric", "accuracy or macro_f1");
    value_option(cmd, "delta", "Tolerance below the oracle (pp for accuracy, absolute for F1)");
    value_option(cmd, "k-grid", "Comma-separated k values");
    value_option(cmd, "c-grid", "Comma-separated clustering thresholds");
  };

  std::string command;
  std::map<std::string, std::function<void(Context&)>> handlers;
  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& help, auto&& handler) {
    CLI::App* cmd = parent->add_subcommand(name, help);
    const std::string full = parent->get_name() + " " + name;
    handlers[full] = handler;
    cmd->callback([&command, full] { command = full; });
    return cmd;
  };

  auto* synth_cmd = app.add_subcommand("synth", "Synthetic datasets with planted ground truth")->require_subcommand(1);
  auto* gen = leaf(synth_cmd, "generate", "Write a synthetic NDA dataset and ground_truth.json", cmd_synth_generate);
  value_option(gen, "spec", "JSON synth spec");
  value_option(gen, "items", "Item count");
  value_option(gen, "informative", "Informative neuron count");
  value_option(gen, "layers", "Layer count");
  value_option(gen, "hidden", "Neurons per layer");
  value_option(gen, "type-effect", "Token-type offset scale");
  value_option(gen, "layer-plan", "Per-layer plan, ';'-separated: fresh | noise | rotation-of(i)");
  value_option(gen, "leak", "Write a train/test pair with this leak fraction");
  auto* score = leaf(synth_cmd, "score", "Recovery of planted neurons by a ranking", cmd_synth_score);
  value_option(score, "ranking", "ranking.json");
  value_option(score, "truth", "ground_truth.json");
  value_option(score, "k", "Top-k cut (15)");

  auto* probe_cmd = app.add_subcommand("probe", "Linear probes, control tasks and selectivity")->require_subcommand(1);
  auto* train = leaf(probe_cmd, "train", "Train an elastic-net probe", cmd_probe_train);
  data_options(train);
  probe_options(train);
  value_option(train, "seeds", "Number of seeds for mean/std reporting (1)");
  auto* eval = leaf(probe_cmd, "eval", "Evaluate a saved probe", cmd_probe_eval);
  value_option(eval, "probe", "Probe directory");
  value_option(eval, "data", "NDA directory");
  auto* control = leaf(probe_cmd, "control", "Control task probe and selectivity", cmd_probe_control);
  data_options(control);
  probe_options(control);
  flag_option(control, "uniform", "Sample control classes uniformly instead of by frequency");
  auto* sel = leaf(probe_cmd, "selectivity", "Task accuracy minus control accuracy", cmd_probe_selectivity);
  value_option(sel, "task-acc", "Task accuracy");
  value_option(sel, "control-acc", "Control accuracy");
  value_option(sel, "task-metrics", "metrics.json of the task probe");
  value_option(sel, "control-metrics", "metrics.json of the control probe");

  auto* rank_cmd = app.add_subcommand("rank", "Neuron rankings")->require_subcommand(1);
  auto* lca = leaf(rank_cmd, "lca", "Rank neurons by probe weight magnitude", cmd_rank_lca);
  value_option(lca, "probe", "Probe directory");
  auto* pl = leaf(rank_cmd, "probeless", "Rank neurons by class-mean deviation", cmd_rank_probeless);
  value_option(pl, "data", "NDA directory");
  auto* sweep = leaf(rank_cmd, "sweep", "Retrain on top-k neurons over a k grid", cmd_rank_sweep);
  analysis_options(sweep);
  value_option(sweep, "ranking", "ranking.json");

  auto* red_cmd = app.add_subcommand("redundancy", "Clustering, CKA, layerwise and minimal sets")->require_subcommand(1);
  auto* cc = leaf(red_cmd, "cc", "Correlation clustering", cmd_redundancy_cc);
  analysis_options(cc);
  value_option(cc, "threshold", "Cluster at one threshold and write clusters.json only");
  auto* cka_cmd = leaf(red_cmd, "cka", "Layer-by-layer linear CKA map", cmd_redundancy_cka);
  value_option(cka_cmd, "data", "NDA directory");
  value_option(cka_cmd, "sample", "Items sampled for the map (25000)");
  auto* lw = leaf(red_cmd, "layerwise", "Independent or incremental layer probes", cmd_redundancy_layerwise);
  analysis_options(lw);
  value_option(lw, "mode", "independent or incremental");
  auto* ms = leaf(red_cmd, "minimal-set", "Layer selection, clustering, then LCA", cmd_redundancy_minimal);
  analysis_options(ms);

  auto* report_cmd = app.add_subcommand("report", "Concept-analysis outputs")->require_subcommand(1);
  auto* tw = leaf(report_cmd, "top-words", "Tokens that most activate a neuron", cmd_report_top_words);
  value_option(tw, "data", "NDA directory");
  value_option(tw, "neuron", "Neuron id or layer:offset");
  value_option(tw, "n", "Number of tokens (5)");
  value_option(tw, "mode", "mean or max");
  auto* hl = leaf(report_cmd, "highlight", "HTML token highlight report", cmd_report_highlight);
  value_option(hl, "data", "NDA directory");
  value_option(hl, "neurons", "Comma-separated neuron ids or layer:offset");
  value_option(hl, "max-items", "Tokens rendered per neuron (2000)");
  auto* table = leaf(report_cmd, "table", "Render report.json / csv as md, json or csv", cmd_report_table);
  value_option(table, "reports", "report.json or .csv");
  value_option(table, "format", "md, json or csv");

  auto* pipe_cmd = app.add_subcommand("pipeline", "End-to-end analyses")->require_subcommand(1);
  auto* t4 = leaf(pipe_cmd, "table4", "Oracle, LCA, CC, Layerwise and LS+CC+LCA on one dataset", cmd_pipeline_table4);
  analysis_options(t4);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "nlens: " << e.what() << '\n';
    return 2;
  }

  try {
    Json file = Json::object();
    if (!config_path.empty()) file = read_json_file(config_path);
    Context ctx{command, Settings(raw, file), 0, 1, {}, Json::object()};
    ctx.seed = ctx.settings.get<std::uint64_t>("seed", 0);
    ctx.jobs = static_cast<unsigned>(std::max(1, ctx.settings.get<int>("jobs", 1)));
    auto out = ctx.settings.optional_path("out");
    // Resolve everything else first so the run directory name can hash it.
    const auto handler = handlers.at(command);
    if (out) {
      ctx.out = *out;
    } else {
      const char* env = std::getenv("NLENS_OUT");
      fs::path root = env && *env ? fs::path(env) : fs::path("runs");
      std::string name = command;
      std::replace(name.begin(), name.end(), ' ', '-');
      std::string key = command;
      for (const auto& a : args) key += '\x1f' + a;
      ctx.out = root / (name + "-" + hex64(fnv1a(key)).substr(0, 10));
    }
    fs::create_directories(ctx.out);
    handler(ctx);
    ctx.finish();
  } catch (const UsageError& e) {
    std::cerr << "nlens: " << e.what() << '\n';
    return 2;
  } catch (const CLI::ParseError& e) {
    std::cerr << "nlens: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "nlens: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "nlens: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace nlens::cli
