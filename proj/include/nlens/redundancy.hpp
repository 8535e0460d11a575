#pragma once

#include "nlens/analysis.hpp"
#include "nlens/dataset.hpp"
#include "nlens/ranking.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace nlens {

// Pearson correlation between every pair of neuron columns. Rows and columns
// follow `ids`.
struct CorrelationMatrix {
  Eigen::MatrixXd values;
  std::vector<NeuronId> ids;
};

// Symmetric with unit diagonal; zero-variance columns correlate 0 with
// everything else.
CorrelationMatrix correlation_matrix(const ActivationDataset& ds);

// 1 - |corr|
double correlation_distance(double corr);

struct Merge {
  std::size_t left = 0;   // any member index of the first cluster
  std::size_t right = 0;  // any member index of the second cluster
  double height = 0.0;
};

// Average-linkage dendrogram over cdist = 1 - |corr|, built with the
// nearest-neighbour chain algorithm.
struct Dendrogram {
  std::vector<NeuronId> ids;
  std::vector<Merge> merges;
};

Dendrogram build_dendrogram(const CorrelationMatrix& corr);

struct ClusterModel {
  double threshold = 0.0;
  // Clusters sorted by smallest member; members ascending.
  std::vector<std::vector<NeuronId>> clusters;
  // representatives[i] is drawn uniformly from clusters[i].
  std::vector<NeuronId> representatives;
  std::uint64_t seed = 0;
};

// Flat clusters from every merge at height <= c.
ClusterModel cut_dendrogram(const Dendrogram& dendrogram, double c, std::uint64_t seed);

ClusterModel cluster_neurons(const CorrelationMatrix& corr, double c, std::uint64_t seed);

struct CcResult {
  std::optional<double> chosen_threshold;  // empty means NA
  std::optional<ClusterModel> chosen_model;
  double oracle_score = 0.0;
  std::vector<AnalysisReport> reports;
};

// Clusters train activations once per threshold, retrains on the
// representatives and keeps the threshold with the fewest neurons still
// within delta of the oracle.
CcResult cc_reduce(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                   const std::vector<double>& grid, const AnalysisConfig& config);

// Linear CKA with column centering. Throws on a representation that is all
// zero after centering.
double cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct CkaMap {
  Eigen::MatrixXd values;
  std::vector<int> layers;
  std::size_t sample_size = 0;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kDefaultCkaSample = 25000;

// One shared item subsample (all items when the dataset is smaller), then
// CKA for every layer pair.
CkaMap layer_cka_map(const ActivationDataset& ds, std::size_t sample_n = kDefaultCkaSample, std::uint64_t seed = 0,
                     unsigned jobs = 1);

enum class LayerwiseMode { independent, incremental };

const char* to_string(LayerwiseMode mode);

std::vector<AnalysisReport> layerwise(const ActivationDataset& train, const ActivationDataset& dev,
                                      const ActivationDataset& test, LayerwiseMode mode,
                                      const AnalysisConfig& config);

struct MinimalSetResult {
  AnalysisReport final_report;
  std::vector<NeuronId> neuron_ids;
  std::optional<int> selected_layer;          // prefix [0, l]
  std::optional<double> selected_threshold;   // empty when clustering was NA
  std::optional<std::size_t> selected_k;
  std::vector<AnalysisReport> layer_reports;
  std::vector<AnalysisReport> cc_reports;
  std::vector<AnalysisReport> lca_reports;
  double oracle_score = 0.0;
  // Set when no stage produced a set within delta; the oracle configuration
  // is returned instead.
  bool failed = false;
};

// Layer selection, then correlation clustering, then LCA ranking with a k sweep.
MinimalSetResult minimal_neuron_set(const ActivationDataset& train, const ActivationDataset& dev,
                                    const ActivationDataset& test, const AnalysisConfig& config);

}  // namespace nlens
