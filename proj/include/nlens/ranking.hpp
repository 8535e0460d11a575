#pragma once

#include "nlens/analysis.hpp"
#include "nlens/dataset.hpp"
#include "nlens/probe.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nlens {

enum class RankingMethod { lca, probeless };

const char* to_string(RankingMethod method);

// Orders list original neuron ids, most important first; score vectors are
// aligned with feature_ids. Ties are broken by ascending neuron id.
struct NeuronRanking {
  RankingMethod method = RankingMethod::lca;
  std::vector<std::string> labels;
  int hidden_size = 0;
  std::vector<NeuronId> feature_ids;
  std::vector<NeuronId> global_order;
  std::vector<double> global_scores;
  std::vector<std::vector<NeuronId>> class_orders;
  std::vector<std::vector<double>> class_scores;

  double global_score_of(NeuronId id) const;
};

// Sorts feature ids by score descending, then id ascending.
std::vector<NeuronId> order_by_score(const std::vector<NeuronId>& ids, const std::vector<double>& scores);

// Per-class score |W[n, t]|; global score is the max over classes of the
// per-class scores divided by that class's largest |W|.
NeuronRanking lca_rank(const Probe& probe);

// Per-class score |mu_t(n) - mu(n)|; global score sums over classes.
NeuronRanking probeless_rank(const ActivationDataset& ds);

std::vector<NeuronId> top_k(const NeuronRanking& ranking, std::size_t k,
                            std::optional<std::size_t> class_index = std::nullopt);

struct KSweepResult {
  std::optional<std::size_t> best_k;  // smallest k within delta of the oracle
  double oracle_score = 0.0;
  std::vector<AnalysisReport> reports;
};

// Retrains a probe on the top-k features for every k in the grid and scores
// it on test.
KSweepResult k_sweep(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                     const NeuronRanking& ranking, const std::vector<std::size_t>& grid,
                     const AnalysisConfig& config);

}  // namespace nlens
