#pragma once

#include "nlens/analysis.hpp"
#include "nlens/dataset.hpp"
#include "nlens/redundancy.hpp"

#include <json.hpp>

#include <optional>
#include <vector>

namespace nlens {

struct ExperimentSplits {
  ActivationDataset train;
  ActivationDataset dev;
  ActivationDataset test;
};

inline constexpr double kTrainDevRatio = 0.9;
inline constexpr double kHoldoutRatio = 0.8;

// train/dev is a seeded 90:10 split of `data`. Without an explicit test set,
// 20% of `data` is held out first as the test split.
ExperimentSplits prepare_splits(const ActivationDataset& data, const std::optional<ActivationDataset>& test,
                                std::uint64_t seed);

struct Table4Result {
  AnalysisReport oracle;
  std::vector<AnalysisReport> lca;
  std::optional<std::size_t> lca_k;
  std::vector<AnalysisReport> cc;
  std::optional<double> cc_threshold;
  std::vector<AnalysisReport> layerwise_incremental;
  std::vector<AnalysisReport> layerwise_independent;
  MinimalSetResult minimal;

  // One row per method block: Oracle, LCA, CC, Layerwise, LS+CC+LCA.
  std::vector<AnalysisReport> summary() const;
  std::vector<AnalysisReport> all_rows() const;
};

// Oracle, LCA, CC, layerwise and the minimal-set pipeline on one dataset.
Table4Result run_table4(const ExperimentSplits& splits, const AnalysisConfig& config);

nlohmann::json table4_to_json(const Table4Result& result);
std::string table4_to_markdown(const Table4Result& result);

// Grid restricted to values <= limit; falls back to {limit} when nothing fits.
std::vector<std::size_t> clip_k_grid(const std::vector<std::size_t>& grid, std::size_t limit);

}  // namespace nlens
