#include "nlens/ranking.hpp"

#include "nlens/error.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <unordered_map>

namespace nlens {

const char* to_string(RankingMethod method) { return method == RankingMethod::lca ? "lca" : "probeless"; }

double NeuronRanking::global_score_of(NeuronId id) const {
  auto it = std::find(feature_ids.begin(), feature_ids.end(), id);
  if (it == feature_ids.end()) throw InvalidArgument("neuron " + std::to_string(id) + " is not ranked");
  return global_scores[static_cast<std::size_t>(it - feature_ids.begin())];
}

std::vector<NeuronId> order_by_score(const std::vector<NeuronId>& ids, const std::vector<double>& scores) {
  std::vector<std::size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  std::vector<NeuronId> out(ids.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = ids[idx[i]];
  return out;
}

NeuronRanking lca_rank(const Probe& probe) {
  if (probe.num_features() == 0) throw InvalidArgument("cannot rank a probe with zero features");
  if (!probe.input_stats)
    std::cerr << "warning: probe was trained on unstandardized features; weight magnitudes may not be comparable\n";
  const std::size_t features = probe.num_features();
  const std::size_t classes = probe.num_classes();

  NeuronRanking r;
  r.method = RankingMethod::lca;
  r.labels = probe.labels;
  r.hidden_size = probe.hidden_size;
  r.feature_ids = probe.feature_ids;
  r.class_scores.assign(classes, std::vector<double>(features, 0.0));
  r.global_scores.assign(features, 0.0);
  for (std::size_t t = 0; t < classes; ++t) {
    double top = 0.0;
    for (std::size_t n = 0; n < features; ++n) {
      const double s = std::abs(static_cast<double>(
          probe.weights(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t))));
      r.class_scores[t][n] = s;
      top = std::max(top, s);
    }
    if (top > 0.0)
      for (std::size_t n = 0; n < features; ++n)
        r.global_scores[n] = std::max(r.global_scores[n], r.class_scores[t][n] / top);
    r.class_orders.push_back(order_by_score(r.feature_ids, r.class_scores[t]));
  }
  r.global_order = order_by_score(r.feature_ids, r.global_scores);
  return r;
}

NeuronRanking probeless_rank(const ActivationDataset& ds) {
  if (ds.num_classes() < 2) throw InvalidArgument("probeless ranking needs at least 2 classes");
  const auto counts = ds.class_counts();
  for (std::size_t t = 0; t < counts.size(); ++t)
    if (counts[t] == 0) throw InvalidArgument("class '" + ds.labels()[t] + "' has no items");

  const std::size_t features = ds.num_features();
  const std::size_t classes = ds.num_classes();
  Eigen::MatrixXd class_sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(features));
  for (std::size_t i = 0; i < ds.num_items(); ++i)
    class_sums.row(ds.items()[i].label) += ds.activations().row(static_cast<Eigen::Index>(i)).cast<double>();
  const Eigen::RowVectorXd overall = class_sums.colwise().sum() / static_cast<double>(ds.num_items());

  NeuronRanking r;
  r.method = RankingMethod::probeless;
  r.labels = ds.labels();
  r.hidden_size = ds.hidden_size();
  r.feature_ids = ds.neuron_ids();
  r.class_scores.assign(classes, std::vector<double>(features, 0.0));
  r.global_scores.assign(features, 0.0);
  for (std::size_t t = 0; t < classes; ++t) {
    const double n_t = static_cast<double>(counts[t]);
    for (std::size_t n = 0; n < features; ++n) {
      const auto ti = static_cast<Eigen::Index>(t);
      const auto ni = static_cast<Eigen::Index>(n);
      const double s = std::abs(class_sums(ti, ni) / n_t - overall(ni));
      r.class_scores[t][n] = s;
      r.global_scores[n] += s;
    }
    r.class_orders.push_back(order_by_score(r.feature_ids, r.class_scores[t]));
  }
  r.global_order = order_by_score(r.feature_ids, r.global_scores);
  return r;
}

std::vector<NeuronId> top_k(const NeuronRanking& ranking, std::size_t k, std::optional<std::size_t> class_index) {
  if (k < 1 || k > ranking.feature_ids.size())
    throw InvalidArgument("k = " + std::to_string(k) + " outside [1, " + std::to_string(ranking.feature_ids.size()) + "]");
  const std::vector<NeuronId>* order = &ranking.global_order;
  if (class_index) {
    if (*class_index >= ranking.class_orders.size()) throw InvalidArgument("class index out of range");
    order = &ranking.class_orders[*class_index];
  }
  return {order->begin(), order->begin() + static_cast<std::ptrdiff_t>(k)};
}

KSweepResult k_sweep(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                     const NeuronRanking& ranking, const std::vector<std::size_t>& grid, const AnalysisConfig& config) {
  if (grid.empty()) throw InvalidArgument("k grid is empty");
  for (std::size_t k : grid)
    if (k < 1 || k > ranking.feature_ids.size())
      throw InvalidArgument("grid value " + std::to_string(k) + " outside [1, feature count]");

  KSweepResult result;
  result.oracle_score = resolve_oracle(train, dev, test, config);
  result.reports.resize(grid.size());
  parallel_for(grid.size(), config.jobs, [&](std::size_t g) {
    const auto ids = top_k(ranking, grid[g]);
    const auto fit = fit_on(train, dev, test, ids, config);
    result.reports[g] = make_report(ranking.method == RankingMethod::lca ? "LCA" : "Probeless", ids, train.full_neuron_count(), fit.score, result.oracle_score, config.metric);
  });
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!within_tolerance(result.reports[g].score, result.oracle_score, config.delta)) continue;
    if (!result.best_k || grid[g] < *result.best_k) result.best_k = grid[g];
  }
  if (result.best_k)
    for (std::size_t g = 0; g < grid.size(); ++g)
      if (grid[g] == *result.best_k) {
        result.reports[g].selected = true;
        break;
      }
  return result;
}

}  // namespace nlens
