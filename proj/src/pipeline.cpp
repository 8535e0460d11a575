#include "nlens/pipeline.hpp"

#include "nlens/ranking.hpp"
#include "nlens/reporting.hpp"
#include "nlens/rng.hpp"
#include "nlens/serialize.hpp"

#include <algorithm>
#include <sstream>

namespace nlens {

ExperimentSplits prepare_splits(const ActivationDataset& data, const std::optional<ActivationDataset>& test,
                                std::uint64_t seed) {
  if (test) {
    auto pair = split(data, kTrainDevRatio, seed);
    return {std::move(pair.train), std::move(pair.dev), *test};
  }
  auto holdout = split(data, kHoldoutRatio, derive_seed(seed, 0x7e57));
  auto pair = split(holdout.train, kTrainDevRatio, seed);
  return {std::move(pair.train), std::move(pair.dev), std::move(holdout.dev)};
}

std::vector<std::size_t> clip_k_grid(const std::vector<std::size_t>& grid, std::size_t limit) {
  std::vector<std::size_t> out;
  for (std::size_t k : grid)
    if (k >= 1 && k <= limit) out.push_back(k);
  if (out.empty()) out.push_back(limit);
  return out;
}

Table4Result run_table4(const ExperimentSplits& s, const AnalysisConfig& config) {
  Table4Result result;
  AnalysisConfig cfg = config;
  const auto oracle_fit = fit_oracle(s.train, s.dev, s.test, cfg);
  cfg.oracle_score = oracle_fit.score;
  result.oracle = make_report("Oracle", s.train.neuron_ids(), s.train.full_neuron_count(), oracle_fit.score,
                              oracle_fit.score, cfg.metric);
  result.oracle.layers = std::make_pair(0, s.train.num_layers() - 1);
  result.oracle.selected = true;

  const auto ranking = lca_rank(oracle_fit.probe);
  auto sweep = k_sweep(s.train, s.dev, s.test, ranking, clip_k_grid(cfg.k_grid, s.train.num_features()), cfg);
  result.lca = std::move(sweep.reports);
  result.lca_k = sweep.best_k;

  auto cc = cc_reduce(s.train, s.dev, s.test, cfg.c_grid, cfg);
  result.cc = std::move(cc.reports);
  result.cc_threshold = cc.chosen_threshold;

  result.layerwise_incremental = layerwise(s.train, s.dev, s.test, LayerwiseMode::incremental, cfg);
  for (auto& r : result.layerwise_incremental)
    if (within_tolerance(r.score, r.oracle_score, cfg.delta)) {
      r.selected = true;
      break;
    }
  result.layerwise_independent = layerwise(s.train, s.dev, s.test, LayerwiseMode::independent, cfg);
  result.minimal = minimal_neuron_set(s.train, s.dev, s.test, cfg);
  return result;
}

namespace {

AnalysisReport pick(const std::vector<AnalysisReport>& rows, const std::string& method, const AnalysisReport& oracle) {
  for (const auto& r : rows)
    if (r.selected) return r;
  // Nothing within tolerance: report the oracle configuration under this method.
  AnalysisReport r = oracle;
  r.method = method;
  r.selected = false;
  if (method == "CC") r.threshold_na = true;
  return r;
}

}  // namespace

std::vector<AnalysisReport> Table4Result::summary() const {
  return {oracle, pick(lca, "LCA", oracle), pick(cc, "CC", oracle), pick(layerwise_incremental, "Layerwise", oracle),
          minimal.final_report};
}

std::vector<AnalysisReport> Table4Result::all_rows() const {
  std::vector<AnalysisReport> rows{oracle};
  rows.insert(rows.end(), lca.begin(), lca.end());
  rows.insert(rows.end(), cc.begin(), cc.end());
  rows.insert(rows.end(), layerwise_incremental.begin(), layerwise_incremental.end());
  rows.insert(rows.end(), layerwise_independent.begin(), layerwise_independent.end());
  rows.push_back(minimal.final_report);
  return rows;
}

nlohmann::json table4_to_json(const Table4Result& r) {
  Json stages = {{"layer_selection", reports_to_json(r.minimal.layer_reports)},
                 {"clustering", reports_to_json(r.minimal.cc_reports)},
                 {"lca", reports_to_json(r.minimal.lca_reports)}};
  return {{"oracle_score", r.oracle.score},
          {"summary", reports_to_json(r.summary())},
          {"lca", {{"selected_k", r.lca_k ? Json(*r.lca_k) : Json(nullptr)}, {"reports", reports_to_json(r.lca)}}},
          {"cc",
           {{"selected_threshold", r.cc_threshold ? Json(*r.cc_threshold) : Json("NA")},
            {"reports", reports_to_json(r.cc)}}},
          {"layerwise",
           {{"incremental", reports_to_json(r.layerwise_incremental)},
            {"independent", reports_to_json(r.layerwise_independent)}}},
          {"minimal_set",
           {{"final", to_json(r.minimal.final_report)},
            {"failed", r.minimal.failed},
            {"neuron_ids", r.minimal.neuron_ids},
            {"stages", stages}}}};
}

std::string table4_to_markdown(const Table4Result& r) {
  std::ostringstream out;
  out << "# Neuron-level redundancy analysis\n\n## Summary\n\n";
  out << results_table(r.summary(), TableFormat::md);
  out << "\n## LCA k sweep\n\n" << results_table(r.lca, TableFormat::md);
  out << "\n## Correlation clustering\n\n" << results_table(r.cc, TableFormat::md);
  std::vector<AnalysisReport> lw = r.layerwise_incremental;
  lw.insert(lw.end(), r.layerwise_independent.begin(), r.layerwise_independent.end());
  out << "\n## Layerwise\n\n" << results_table(lw, TableFormat::md);
  out << "\n## LS+CC+LCA stages\n\n";
  std::vector<AnalysisReport> stages = r.minimal.layer_reports;
  stages.insert(stages.end(), r.minimal.cc_reports.begin(), r.minimal.cc_reports.end());
  stages.insert(stages.end(), r.minimal.lca_reports.begin(), r.minimal.lca_reports.end());
  stages.push_back(r.minimal.final_report);
  out << results_table(stages, TableFormat::md);
  if (r.minimal.failed) out << "\nNo stage kept the score within tolerance; the oracle configuration is reported.\n";
  return out.str();
}

}  // namespace nlens
